"""Checkpoint files: a JSON manifest plus a little-endian float32 blob.

``save_checkpoint("run/final", tensors)`` writes ``run/final.json`` and
``run/final.bin``.  The manifest is a JSON array of
``{"name", "shape", "dtype": "f32", "byte_offset"}`` records.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from ..errors import FormatError

_F32 = np.dtype("<f4")


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    return path.with_name(path.name + ".json"), path.with_name(path.name + ".bin")


def save_checkpoint(path, tensors: Mapping[str, np.ndarray]) -> None:
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    records, offset = [], 0
    with open(blob_path, "wb") as blob:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(np.asarray(arr), dtype=_F32)
            records.append({"name": name, "shape": list(arr.shape), "dtype": "f32",
                            "byte_offset": offset})
            blob.write(arr.tobytes())
            offset += arr.nbytes
    manifest_path.write_text(json.dumps(records, indent=1), encoding="utf-8")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    manifest_path, blob_path = _paths(path)
    try:
        records = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON: {exc.msg}", exc.pos) from exc
    blob = blob_path.read_bytes()
    if not isinstance(records, list):
        raise FormatError(f"{manifest_path}: manifest must be a JSON array")
    out = {}
    for rec in records:
        if set(rec) != {"name", "shape", "dtype", "byte_offset"} or rec["dtype"] != "f32":
            raise FormatError(f"{manifest_path}: bad manifest record {rec!r}")
        shape = tuple(int(s) for s in rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(rec["byte_offset"])
        end = start + count * 4
        if start < 0 or end > len(blob):
            raise FormatError(f"{blob_path}: tensor {rec['name']!r} runs past end of blob", start)
        out[rec["name"]] = np.frombuffer(blob, dtype=_F32, count=count, offset=start).reshape(shape).copy()
    return out
