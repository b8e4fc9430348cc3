"""Hot grid kernels with a numba path and a pure-numpy fallback.

Set ``WINNAV_NUMBA=0`` before import to force the numpy implementations;
numba is used by default when it imports cleanly. Both paths return
identical results (the test suite checks this).
"""

import os

from . import _numpy

BACKEND = "numpy"
_impl = _numpy

if os.environ.get("WINNAV_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off"):
    try:
        from . import _numba as _impl  # noqa: F811
        BACKEND = "numba"
    except ImportError:  # pragma: no cover - numba missing
        _impl = _numpy

rotate_offsets = _impl.rotate_offsets
unrotate_offsets = _impl.unrotate_offsets
raycast = _impl.raycast
gather_labels = _impl.gather_labels
fuse_into = _impl.fuse_into
project = _impl.project
wedge_pool = _impl.wedge_pool
nearest_room_labels = _impl.nearest_room_labels

__all__ = [
    "BACKEND", "rotate_offsets", "unrotate_offsets", "raycast", "gather_labels",
    "fuse_into", "project", "wedge_pool", "nearest_room_labels",
]
