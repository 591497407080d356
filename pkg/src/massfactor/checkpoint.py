"""Versioned binary checkpoints: JSON header plus named float64 arrays.

Layout: magic, format version, JSON header (model config, dims, seed), then
each array as name, shape, and raw little-endian float64 data. Save followed
by load reproduces every parameter bit-exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"MFCK"
FORMAT_VERSION = 1


def save_checkpoint(path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            arr = np.asarray(arr, dtype=np.float64)
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<H", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(size * 8), dtype="<f8").astype(np.float64)
            arrays[name] = data.reshape(shape)
    return header, arrays
