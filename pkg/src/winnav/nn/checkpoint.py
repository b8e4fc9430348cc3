"""Deterministic binary container for named float64 arrays.

Layout::

    b"WINCKPT\n"
    uint32 LE    format version
    uint64 LE    header length in bytes
    header       UTF-8 JSON, keys sorted: {"kind", "step", "meta", "arrays": [[name, shape], ...]}
    payload      each array as little-endian float64, C order, in header order

No timestamps or other ambient state is written, so equal contents give
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"WINCKPT\n"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    arrays: dict[str, np.ndarray]
    step: int = 0
    meta: dict = field(default_factory=dict)

    def equals(self, other: "Checkpoint") -> bool:
        return (self.kind == other.kind and self.step == other.step and self.meta == other.meta
                and list(self.arrays) == list(other.arrays)
                and all(np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays))


def to_bytes(ck: Checkpoint) -> bytes:
    names = list(ck.arrays)
    header = {"kind": ck.kind, "step": int(ck.step), "meta": ck.meta,
              "arrays": [[k, list(np.shape(ck.arrays[k]))] for k in names]}
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(hb)), hb]
    for k in names:
        parts.append(np.ascontiguousarray(ck.arrays[k], dtype="<f8").tobytes())
    return b"".join(parts)


def from_bytes(buf: bytes) -> Checkpoint:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<IQ", buf, off)
    if version != VERSION:
        raise CheckpointError(f"checkpoint version {version} unsupported (this build reads {VERSION})")
    off += 12
    header = json.loads(buf[off:off + hlen].decode())
    off += hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(buf):
        raise CheckpointError("trailing bytes after checkpoint payload")
    return Checkpoint(header["kind"], arrays, header["step"], header["meta"])


def save(path, ck: Checkpoint) -> None:
    with open(path, "wb") as fh:
        fh.write(to_bytes(ck))


def load(path, kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        ck = from_bytes(fh.read())
    if kind is not None and ck.kind != kind:
        raise CheckpointError(f"checkpoint {path} holds a {ck.kind!r} model, expected {kind!r}")
    return ck
