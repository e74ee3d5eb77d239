"""EAPW binary weight files.

Layout (little-endian, no padding)::

    b"EAPW" | u32 version=1 | u32 entry_count
    entry: u16 name_len | name (UTF-8) | u8 rank | rank x u32 dims | prod(dims) x f32

Entry names are ``"<layer>.<param>"``; the store is a mapping
``layer -> {param -> float32 ndarray}``.
"""

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError

MAGIC = b"EAPW"
VERSION = 1


def flatten(store: dict) -> list:
    return [(f"{layer}.{pname}", arr)
            for layer, params in store.items() for pname, arr in params.items()]


def dumps(store: dict) -> bytes:
    entries = flatten(store)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, arr in entries:
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        if arr.ndim < 1 or arr.ndim > 255:
            raise FormatError(f"entry {name!r}: rank {arr.ndim} not storable")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(chunks)


def loads(buf: bytes) -> dict:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated file while reading {what}: need {n} bytes, "
                              f"{len(buf) - pos} available", pos)
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic: expected {MAGIC!r}, got {magic!r}", 0)
    (version,) = struct.unpack("<I", take(4, "version"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    (count,) = struct.unpack("<I", take(4, "entry count"))
    store = {}
    seen = set()
    for i in range(count):
        start = pos
        (nlen,) = struct.unpack("<H", take(2, f"entry {i} name length"))
        try:
            name = take(nlen, f"entry {i} name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"entry {i}: name is not UTF-8", start + 2) from exc
        if name in seen:
            raise FormatError(f"duplicate entry name {name!r}", start)
        seen.add(name)
        if "." not in name:
            raise FormatError(f"entry name {name!r} lacks '<layer>.<param>' form", start + 2)
        (rank,) = struct.unpack("<B", take(1, f"entry {name!r} rank"))
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"entry {name!r} dims"))
        if rank == 0 or any(d == 0 for d in dims):
            raise FormatError(f"entry {name!r}: invalid shape {dims}", pos - 4 * rank - 1)
        size = int(np.prod(dims))
        payload = take(4 * size, f"entry {name!r} payload")
        arr = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
        layer, pname = name.rsplit(".", 1)
        store.setdefault(layer, {})[pname] = arr
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after last entry", pos)
    return store


def save_weights(store: dict, path) -> None:
    Path(path).write_bytes(dumps(store))


def load_weights(path) -> dict:
    return loads(Path(path).read_bytes())
