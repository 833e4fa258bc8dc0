"""Versioned binary checkpoint container: named arrays plus a JSON header.

Layout: magic, u32 version, u64 header length, sorted-key JSON header
(array manifest + metadata), then raw little-endian array bytes. Nothing
time- or platform-dependent is written, so identical state produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSEGCKPT"
VERSION = 1


def save(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    manifest = {}
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        manifest[name] = {
            "dtype": arr.dtype.str,
            "shape": list(arr.shape),
            "offset": len(payload),
        }
        payload.extend(arr.tobytes())
    header = json.dumps(
        {"arrays": manifest, "meta": meta}, sort_keys=True, separators=(",", ":")
    ).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        fh.write(bytes(payload))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with Path(path).open("rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file (bad magic {magic!r})")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len))
        payload = fh.read()
    arrays = {}
    for name, info in header["arrays"].items():
        dtype = np.dtype(info["dtype"])
        count = int(np.prod(info["shape"])) if info["shape"] else 1
        arr = np.frombuffer(
            payload, dtype=dtype, count=count, offset=info["offset"]
        ).reshape(info["shape"])
        arrays[name] = arr.copy()
    return arrays, header["meta"]
