"""Single-file checkpoint: magic header, config JSON, named float64 blobs.

Layout (all integers little-endian)::

    b"GMFCKPT\\0"  u32 version
    u64 config_len  config JSON (utf-8)
    u32 n_blobs
    per blob: u16 name_len, name (utf-8), u8 ndim, u64 * ndim shape, float64 LE values
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GMFCKPT\x00"
VERSION = 1


def save_checkpoint(path, config: dict, blobs: dict[str, np.ndarray]) -> None:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    cfg = json.dumps(config, sort_keys=True).encode("utf-8")
    out += struct.pack("<Q", len(cfg)) + cfg
    out += struct.pack("<I", len(blobs))
    for name, arr in blobs.items():
        arr = np.asarray(arr, dtype="<f8")
        enc = name.encode("utf-8")
        out += struct.pack("<H", len(enc)) + enc
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        out += arr.tobytes(order="C")
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    (n,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    config = json.loads(buf[pos : pos + n].decode("utf-8"))
    pos += n
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    blobs = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = buf[pos : pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        blobs[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return config, blobs
