"""Binary checkpoint of the shared input table and encoder parameters.

Layout (little-endian): magic ``KGAL``, version (u8), dim (u32), node
count (u64), then float32 payload: input rows, relation vectors, layer
transforms, gate weight, gate bias, proxies; finally a u64 checksum equal
to the byte sum of the payload modulo 2**64.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .encoder import EmbeddingState, EncoderParams

MAGIC = b"KGAL"
VERSION = 1
_HEADER = struct.Struct("<4sBIQ")


class CheckpointError(ValueError):
    pass


def _checksum(payload: bytes) -> int:
    return int(np.frombuffer(payload, dtype=np.uint8).sum(dtype=np.uint64))


def save_checkpoint(state: EmbeddingState, path: str | Path) -> None:
    p = state.params
    parts = [state.input_table] + [getattr(p, name) for name in EncoderParams.NAMES]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in parts)
    header = _HEADER.pack(MAGIC, VERSION, state.dim, state.input_table.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<Q", _checksum(payload)))


def load_checkpoint(path: str | Path, n_relations: int, n_proxies: int, n_layers: int) -> EmbeddingState:
    """Read a checkpoint; the parameter shapes not stored in the header must be given."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 8:
        raise CheckpointError(f"{path}: truncated checkpoint")
    magic, version, dim, n_nodes = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    shapes = [
        (n_nodes, dim),
        (n_relations, dim),
        (n_layers, dim, dim),
        (dim, dim),
        (dim,),
        (n_proxies, dim),
    ]
    n_floats = sum(int(np.prod(s)) for s in shapes)
    payload = data[_HEADER.size : len(data) - 8]
    if len(payload) != 4 * n_floats:
        raise CheckpointError(
            f"{path}: payload holds {len(payload)} bytes, expected {4 * n_floats} for the given shapes"
        )
    (stored,) = struct.unpack("<Q", data[-8:])
    if stored != _checksum(payload):
        raise CheckpointError(f"{path}: checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    arrays, off = [], 0
    for s in shapes:
        size = int(np.prod(s))
        arrays.append(flat[off : off + size].reshape(s).copy())
        off += size
    return EmbeddingState(arrays[0], EncoderParams(*arrays[1:]))


__all__ = ["CheckpointError", "load_checkpoint", "save_checkpoint"]
