"""Parameter serialization: one binary blob of little-endian 32-bit reals
plus a JSON manifest listing (name, shape, byte offset) per tensor.

The blob concatenates tensors in manifest order; offsets are absolute byte
positions into the blob. The layout is language-neutral and byte-exact, so
two identical parameter sets always produce identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DataError
from .tensor import Tensor

__all__ = ["save_params", "load_params"]


def save_params(params: dict[str, np.ndarray | Tensor], blob_path, manifest_path) -> None:
    """Write tensors (sorted by name) as an f32le blob + JSON manifest."""
    entries = []
    offset = 0
    chunks = []
    for name in sorted(params):
        arr = params[name]
        data = np.ascontiguousarray(arr.data if isinstance(arr, Tensor) else arr, dtype="<f4")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        chunks.append(data.tobytes())
        offset += data.nbytes
    Path(blob_path).write_bytes(b"".join(chunks))
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump({"dtype": "f32le", "tensors": entries}, f, indent=2, sort_keys=True)
        f.write("\n")


def load_params(blob_path, manifest_path) -> dict[str, np.ndarray]:
    """Inverse of save_params; validates offsets and total blob length."""
    with open(manifest_path, encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("dtype") != "f32le":
        raise DataError(f"unsupported parameter dtype {manifest.get('dtype')!r}")
    blob = Path(blob_path).read_bytes()
    out: dict[str, np.ndarray] = {}
    end = 0
    for entry in manifest["tensors"]:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = int(entry["offset"])
        end = start + 4 * count
        if end > len(blob):
            raise DataError(f"tensor {entry['name']!r} extends past end of blob")
        out[entry["name"]] = np.frombuffer(blob, dtype="<f4", count=count, offset=start).reshape(shape).copy()
    if end != len(blob):
        raise DataError(f"blob has {len(blob) - end} trailing bytes not covered by manifest")
    return out
