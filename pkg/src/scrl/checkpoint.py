"""Binary checkpoint container.

Byte layout, all integers unsigned 32-bit little-endian::

    b"SCRL1"
    u32 header_len, header_len bytes of UTF-8 JSON
        {"config": {...TrainConfig...}, "num_nodes": N,
         "num_features": d, "num_classes": M}
    u32 param_count
    param_count times:
        u32 name_len, name_len bytes of UTF-8 name
        u32 rows, u32 cols
        rows*cols float64 little-endian, row-major

Parameters appear in ``ScrlModel.named_parameters()`` order. The header JSON
is written with sorted keys so identical runs give identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"SCRL1"
_U32 = struct.Struct("<I")


def save_checkpoint(path, header: dict, params: list[tuple[str, np.ndarray]]) -> None:
    chunks = [MAGIC]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks += [_U32.pack(len(blob)), blob, _U32.pack(len(params))]
    for name, value in params:
        value = np.ascontiguousarray(value, dtype="<f8")
        if value.ndim != 2:
            raise CheckpointError(f"{name}: expected a matrix")
        raw = name.encode("utf-8")
        chunks += [_U32.pack(len(raw)), raw, _U32.pack(value.shape[0]),
                   _U32.pack(value.shape[1]), value.tobytes()]
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(header, {name: matrix})``; raises CheckpointError on any malformation."""
    r = _Reader(Path(path).read_bytes())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an SCRL1 checkpoint")
    try:
        header = json.loads(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"bad checkpoint header: {exc}") from None
    params = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rows, cols = r.u32(), r.u32()
        params[name] = np.frombuffer(r.take(8 * rows * cols), dtype="<f8").reshape(
            rows, cols).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes after the last parameter")
    return header, params
