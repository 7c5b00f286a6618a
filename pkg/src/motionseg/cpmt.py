"""Binary tensor files and named-tensor containers.

File layout (little-endian throughout):

    magic   4 bytes  b"CPMT"
    version 1 byte   (1)
    dtype   1 byte   (1 = float32, 2 = float64)
    ndim    u32
    dims    ndim x u64
    payload row-major values

A *container* is a directory of such files plus a ``manifest.json`` mapping
tensor names to file, shape and dtype.  All persistence in this package
(datasets, checkpoints, network parameters) goes through these two helpers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

MAGIC = b"CPMT"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
_CODE_DTYPES = {1: np.dtype(np.float32), 2: np.dtype(np.float64)}


class FormatError(ValueError):
    """Raised for malformed tensor files or containers."""


def write_tensor(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    if array.dtype not in _DTYPE_CODES:
        array = array.astype(np.float32)
    code = _DTYPE_CODES[array.dtype]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", VERSION, code))
        f.write(struct.pack("<I", array.ndim))
        f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        f.write(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        version, code = struct.unpack("<BB", f.read(2))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        if code not in _CODE_DTYPES:
            raise FormatError(f"{path}: unknown dtype code {code}")
        dtype = _CODE_DTYPES[code]
        (ndim,) = struct.unpack("<I", f.read(4))
        dims = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
        count = int(np.prod(dims)) if ndim else 1
        payload = f.read(count * dtype.itemsize)
        if len(payload) != count * dtype.itemsize:
            raise FormatError(f"{path}: truncated payload")
        arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
    return arr.reshape(dims)


def write_container(directory, tensors: Dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named tensors plus a JSON manifest into ``directory``."""
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    manifest = {"tensors": {}, "meta": meta or {}}
    for i, (name, arr) in enumerate(tensors.items()):
        fname = f"tensors/{i:04d}.cpmt"
        arr = np.asarray(arr)
        write_tensor(directory / fname, arr)
        manifest["tensors"][name] = {
            "file": fname,
            "shape": list(arr.shape),
            "dtype": "f64" if arr.dtype == np.float64 else "f32",
        }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def read_container(directory) -> tuple[Dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"no manifest.json in {directory}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    tensors: Dict[str, np.ndarray] = {}
    for name, entry in manifest["tensors"].items():
        arr = read_tensor(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"{name}: shape {list(arr.shape)} != manifest {entry['shape']}")
        tensors[name] = arr
    return tensors, manifest.get("meta", {})
