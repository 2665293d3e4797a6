"""Single-file parameter checkpoints.

Layout: 4-byte magic "MDF1", an 8-byte little-endian manifest length,
then a UTF-8 JSON manifest mapping tensor name -> {shape, dtype, offset},
then the little-endian float32 flat arrays concatenated in manifest
order. Offsets are relative to the payload start.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"MDF1"


class CheckpointError(Exception):
    pass


def save_checkpoint(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    manifest: dict[str, dict] = {}
    payload = bytearray()
    for name, arr in tensors.items():
        flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
        manifest[name] = {
            "shape": list(np.asarray(arr).shape),
            "dtype": "float32",
            "offset": len(payload),
        }
        payload += flat.tobytes()
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(payload))


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        payload = fh.read()
    out: dict[str, np.ndarray] = {}
    for name, meta in manifest.items():
        shape = tuple(meta["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = meta["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        out[name] = arr.reshape(shape).copy()
    return out
