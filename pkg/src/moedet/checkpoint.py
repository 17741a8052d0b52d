"""Flat binary checkpoint format.

Layout (all integers little-endian):

    magic   4 bytes  b"MOED"
    version u32      currently 1
    count   u32      number of entries
    entry   repeated:
        name_len u16, name UTF-8, rank u8, extents rank*u32,
        payload  little-endian float32, row-major

Payloads are stored as float32 regardless of in-memory dtype; loading
returns float64 arrays carrying the float32 values, so a load/save cycle
is bit-exact.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"MOED"
VERSION = 1


def save_checkpoint(path, entries):
    """Write named arrays; ``entries`` maps name -> array-like."""
    items = list(entries.items())
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            arr = np.asarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise FormatError(f"entry name too long: {name[:40]}...")
            if arr.ndim > 0xFF:
                raise FormatError(f"entry {name!r} has rank {arr.ndim} > 255")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            for extent in arr.shape:
                fh.write(struct.pack("<I", extent))
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back into an ordered dict of float64 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    pos = 12
    entries = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            n = int(np.prod(shape)) if rank else 1
            payload = np.frombuffer(blob, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            entries[name] = payload.astype(np.float64).reshape(shape)
    except (struct.error, ValueError) as exc:
        raise FormatError(f"truncated or corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise FormatError(f"{len(blob) - pos} trailing bytes after last entry")
    return entries
