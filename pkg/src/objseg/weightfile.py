"""Binary weight container: CUTW magic, versioned, CRC-checked, f32 payloads.

Layout (all integers little-endian):

    "CUTW" | version u32 | count u32 |
    count * [ name_len u16 | name utf8 | dtype u8 | rank u8 | dims u32*rank |
              payload f32*prod(dims) ] |
    crc32 u32 over everything before it

Entries are sorted by name and names are unique; dtype code 0 is the only
one defined in version 1.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import CompatibilityError, FormatError, StateError
from .registry import ParamRegistry

MAGIC = b"CUTW"
VERSION = 1
DTYPE_F32 = 0


def save_weights(registry: ParamRegistry, path: str) -> None:
    if not registry.frozen:
        raise StateError("refusing to serialize an unfrozen registry")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, len(registry))
    for name in sorted(registry.names()):
        arr = registry[name]
        if arr.dtype != np.float32:
            raise FormatError(f"parameter {name} has dtype {arr.dtype}; v1 stores f32 only")
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<BB", DTYPE_F32, arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated weight file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path: str) -> ParamRegistry:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 12:
        raise FormatError("file too short to be a weight container")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise FormatError(f"CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}")
    r = _Reader(data[:-4])
    if r.take(4) != MAGIC:
        raise FormatError("bad magic; not a weight container")
    version, count = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")
    reg = ParamRegistry(0)
    previous = None
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        if previous is not None and not (previous < name):
            raise FormatError(f"entry names out of order near {name!r}")
        previous = name
        dtype_code, rank = r.unpack("<BB")
        if dtype_code != DTYPE_F32:
            raise FormatError(f"unknown dtype code {dtype_code} for {name}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        n_elems = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n_elems)
        arr = np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32)
        if name in reg:
            raise FormatError(f"duplicate entry {name!r}")
        reg.add(name, arr)
    if r.pos != len(r.data):
        raise FormatError(f"{len(r.data) - r.pos} trailing bytes after last entry")
    return reg.freeze()


def check_compatible(loaded: ParamRegistry, expected: ParamRegistry) -> None:
    """Raise CompatibilityError naming every missing/unexpected/misshaped entry."""
    loaded_names = set(loaded.names())
    expected_names = set(expected.names())
    problems = []
    for name in sorted(expected_names - loaded_names):
        problems.append(f"missing {name}")
    for name in sorted(loaded_names - expected_names):
        problems.append(f"unexpected {name}")
    for name in sorted(loaded_names & expected_names):
        if loaded[name].shape != expected[name].shape:
            problems.append(f"shape mismatch {name}: file {loaded[name].shape}, model {expected[name].shape}")
    if problems:
        raise CompatibilityError("; ".join(problems))
