"""Named-tensor checkpoints: a JSON manifest next to a raw float64 blob.

``save_tensors("model")`` writes ``model.json`` and ``model.bin``. The blob is
little-endian float64, tensors packed back to back in manifest order.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from ..errors import CheckpointError

_DTYPE = np.dtype("<f8")


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> Path:
    manifest_path, blob_path = _paths(path)
    entries, chunks, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.ascontiguousarray(np.asarray(value, dtype=_DTYPE))
        entries.append({"name": name, "shape": list(arr.shape), "file_offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {"tensors": entries, "meta": meta or {}, "blob": blob_path.name}
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write(blob_path, b"".join(chunks))
    _atomic_write(manifest_path, json.dumps(manifest, indent=2, sort_keys=True).encode())
    return manifest_path


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    manifest_path, blob_path = _paths(path)
    try:
        manifest = json.loads(manifest_path.read_text())
        blob = blob_path.read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {manifest_path}: {exc}") from None
    expected = sum(int(np.prod(e["shape"], dtype=np.int64)) * _DTYPE.itemsize for e in manifest["tensors"])
    if expected != len(blob):
        raise CheckpointError(f"blob has {len(blob)} bytes, manifest describes {expected}")
    out = {}
    for e in manifest["tensors"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=e["file_offset"])
        out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
    return out, manifest.get("meta", {})
