"""Model checkpoints: one JSON manifest plus one little-endian float64 blob.

The blob stores every trainable array in the declaration order of
``DualEncoderModel.trainable_parameters``; the manifest records the model
dims (enough to rebuild the frozen backbone from its seed) and the blob
layout.  Saving, loading, and saving again is byte-exact.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import DualEncoderModel, ModelDims

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "params.bin"
_DTYPE = "<f8"


def save_checkpoint(model: DualEncoderModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = model.trainable_parameters()
    sections, offset = [], 0
    chunks = []
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += arr.size
    manifest = {
        "format": "ringadapt-checkpoint",
        "version": 1,
        "dims": model.dims.to_dict(),
        "dtype": _DTYPE,
        "blob": BLOB_NAME,
        "total_scalars": offset,
        "sections": sections,
    }
    (directory / BLOB_NAME).write_bytes(b"".join(chunks))
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory) -> DualEncoderModel:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ConfigError(f"checkpoint manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != "ringadapt-checkpoint":
        raise ConfigError(f"not a checkpoint manifest: {manifest_path}")
    dims = ModelDims.from_dict(manifest["dims"])
    model = DualEncoderModel.build(dims)
    blob = np.frombuffer((directory / manifest["blob"]).read_bytes(), dtype=_DTYPE)
    if blob.size != manifest["total_scalars"]:
        raise ConfigError(
            f"blob holds {blob.size} scalars, manifest promises {manifest['total_scalars']}"
        )
    params = model.trainable_parameters()
    for section in manifest["sections"]:
        name, shape, offset = section["name"], tuple(section["shape"]), section["offset"]
        if name not in params:
            raise ConfigError(f"unknown parameter {name!r} in checkpoint")
        target = params[name]
        if tuple(target.shape) != shape:
            raise ConfigError(f"shape mismatch for {name!r}: {shape} vs {tuple(target.shape)}")
        target[...] = blob[offset:offset + target.size].reshape(shape)
    return model
