"""Desk-scale workbench for locality-aware vision-language navigation.

Modules: ``core`` (geometry, graphs, maps), ``worldgen`` (houses,
observations, instructions, episodes), ``kb`` (room adjacency statistics),
``nn`` (autodiff, LSTM, AdamW, checkpoints), ``predictor`` (locality map
predictor), ``agent`` (WIN and baseline policies), ``training`` (IL + A2C),
``evaluation`` (metrics, reports, ablations), ``cli``.
"""

__version__ = "0.1.0"
