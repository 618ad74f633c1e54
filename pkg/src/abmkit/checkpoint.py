"""Binary tensor checkpoints.

Each tensor is one file::

    b"ABMT" | version u16 | rank u16 | dims u64[rank] | payload

all little-endian, payload IEEE-754 f64 (correctness mode) or f32 (bench
mode). A sidecar ``manifest.json`` maps tensor names to
``{"file", "shape", "dtype"}``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"ABMT"
VERSION = 1
_DTYPES = {"f64": np.dtype("<f8"), "f32": np.dtype("<f4")}


class CheckpointError(ValueError):
    pass


def write_tensor(path: str | Path, array: np.ndarray, dtype: str = "f64") -> None:
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {dtype!r}")
    arr = np.array(array, dtype=_DTYPES[dtype], order="C")
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path: str | Path, dtype: str = "f64") -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from(f"<{rank}Q", raw, 8)
    offset = 8 + 8 * rank
    dt = _DTYPES[dtype]
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - offset != count * dt.itemsize:
        raise CheckpointError(f"{path}: payload size does not match dims {dims} as {dtype}")
    return np.frombuffer(raw, dtype=dt, count=count, offset=offset).reshape(dims).astype(np.float64)


def save(directory: str | Path, tensors: Mapping[str, np.ndarray], dtype: str = "f64",
         extra: Mapping | None = None) -> Path:
    """Write tensors plus manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        fname = name.replace("/", "_") + ".abmt"
        write_tensor(directory / fname, arr, dtype)
        entries[name] = {"file": fname, "shape": list(arr.shape), "dtype": dtype}
    manifest = {"tensors": entries}
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load(manifest_path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read every tensor listed in a manifest. Returns (tensors, manifest)."""
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise FileNotFoundError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    out = {}
    for name, entry in manifest["tensors"].items():
        arr = read_tensor(manifest_path.parent / entry["file"], entry["dtype"])
        if list(arr.shape) != list(entry["shape"]):
            raise CheckpointError(f"{name}: shape {arr.shape} disagrees with manifest {entry['shape']}")
        out[name] = arr
    return out, manifest
