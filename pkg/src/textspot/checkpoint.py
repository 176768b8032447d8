"""Binary checkpoint format for parameter sets.

Layout: magic "A3S1", version u32, count u32, then per parameter
name-length u32, UTF-8 name, rank u32, dims (u32 each), data as
little-endian float64.  Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import ParameterSet, Tensor
from .errors import ParseError

MAGIC = b"A3S1"
VERSION = 1


def save_checkpoint(path, params: ParameterSet) -> None:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", VERSION, len(params))
    for name, t in params.items():
        nb = name.encode("utf-8")
        buf += struct.pack("<I", len(nb))
        buf += nb
        dims = t.data.shape
        buf += struct.pack("<I", len(dims))
        buf += struct.pack(f"<{len(dims)}I", *dims)
        buf += np.ascontiguousarray(t.data, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> ParameterSet:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic {raw[:4]!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    off = 12
    params = ParameterSet()
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        name = raw[off : off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", raw, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims)
        off += 8 * n
        params.add(name, Tensor(data.copy(), requires_grad=True, _validate=False))
    if off != len(raw):
        raise ParseError(f"{path}: {len(raw) - off} trailing bytes")
    return params
