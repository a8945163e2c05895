"""Binary container for named arrays.

Layout::

    magic     8 bytes   (b"LOBTENS1" for datasets, b"LOBCKPT1" for checkpoints)
    length    uint32 little-endian, size of the header in bytes
    header    UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}]}
    payload   C-ordered little-endian array data; offsets are relative to payload start

Arrays are 8-byte aligned inside the payload.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"LOBTENS1"
CHECKPOINT_MAGIC = b"LOBCKPT1"


class ContainerError(ValueError):
    pass


def write_container(path: str | os.PathLike, arrays: dict[str, np.ndarray], meta: dict | None = None,
                    magic: bytes = TENSOR_MAGIC) -> Path:
    if len(magic) != 8:
        raise ValueError("magic must be 8 bytes")
    entries = []
    blobs = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = arr.tobytes()
        pad = (-offset) % 8
        offset += pad
        blobs.append(b"\0" * pad)
        entries.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    return path


def read_container(path: str | os.PathLike, magic: bytes | None = TENSOR_MAGIC) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise ContainerError(f"{path}: truncated container")
    if magic is not None and data[:8] != magic:
        raise ContainerError(f"{path}: bad magic {data[:8]!r}, expected {magic!r}")
    (n,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12 : 12 + n])
    except ValueError as exc:
        raise ContainerError(f"{path}: corrupt header ({exc})") from None
    base = 12 + n
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        if start + e["nbytes"] > len(data):
            raise ContainerError(f"{path}: array {e['name']} runs past end of file")
        arr = np.frombuffer(data, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=np.int64)), offset=start)
        arrays[e["name"]] = arr.reshape(e["shape"]).copy()
    return arrays, header["meta"]
