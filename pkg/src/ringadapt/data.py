"""Synthetic few-shot datasets: spherical class prototypes plus Gaussian clouds.

Files are JSON-lines.  Samples:   {"features": [...], "label": int}
                      Prototypes: {"class": int, "prototype": [...]}
Generation is deterministic per seed, so regenerated files are byte-identical.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DatasetError, SeparationError

DEFAULT_MIN_ANGLE_DEG = 60.0
_MAX_DRAWS_PER_CLASS = 1000


@dataclass
class Dataset:
    features: np.ndarray  # (N, d_in)
    labels: np.ndarray  # (N,)
    prototypes: np.ndarray  # (C, d_in)

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    def validate(self) -> "Dataset":
        if self.features.ndim != 2 or self.prototypes.ndim != 2:
            raise DatasetError("features and prototypes must be 2-D")
        if self.features.shape[1] != self.prototypes.shape[1]:
            raise DatasetError(
                f"feature width {self.features.shape[1]} != prototype width {self.prototypes.shape[1]}"
            )
        if self.features.shape[0] != self.labels.shape[0]:
            raise DatasetError("one label per sample required")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels must lie in [0, {self.num_classes})")
        return self


def _draw_prototypes(rng, num_classes: int, d_in: int, min_angle_deg: float) -> np.ndarray:
    """Unit vectors with pairwise angle >= the floor, by rejection."""
    cos_cap = math.cos(math.radians(min_angle_deg))
    protos: list[np.ndarray] = []
    for c in range(num_classes):
        for _ in range(_MAX_DRAWS_PER_CLASS):
            v = rng.normal(0.0, 1.0, size=d_in)
            v /= np.linalg.norm(v)
            if all(float(np.dot(v, p)) <= cos_cap for p in protos):
                protos.append(v)
                break
        else:
            raise SeparationError(
                f"could not place prototype {c} with pairwise angle >= {min_angle_deg} deg"
            )
    return np.stack(protos)


def gen_data(num_classes: int, per_class: int, d_in: int, cluster_std: float,
             seed: int, min_angle_deg: float = DEFAULT_MIN_ANGLE_DEG) -> Dataset:
    """Class-major sample blocks: prototype + isotropic Gaussian noise."""
    if num_classes < 2 or per_class < 1:
        raise DatasetError("need num_classes >= 2 and per_class >= 1")
    if cluster_std < 0:
        raise DatasetError(f"cluster_std must be >= 0, got {cluster_std}")
    rng = np.random.default_rng(seed)
    protos = _draw_prototypes(rng, num_classes, d_in, min_angle_deg)
    features = np.empty((num_classes * per_class, d_in))
    labels = np.empty(num_classes * per_class, dtype=int)
    for c in range(num_classes):
        block = slice(c * per_class, (c + 1) * per_class)
        features[block] = protos[c] + rng.normal(0.0, cluster_std, size=(per_class, d_in))
        labels[block] = c
    return Dataset(features, labels, protos).validate()


def save_dataset(ds: Dataset, samples_path, prototypes_path) -> None:
    with open(samples_path, "w") as fh:
        for x, y in zip(ds.features, ds.labels):
            fh.write(json.dumps({"features": x.tolist(), "label": int(y)}) + "\n")
    with open(prototypes_path, "w") as fh:
        for c, p in enumerate(ds.prototypes):
            fh.write(json.dumps({"class": c, "prototype": p.tolist()}) + "\n")


def load_dataset(samples_path, prototypes_path) -> Dataset:
    samples_path, prototypes_path = Path(samples_path), Path(prototypes_path)
    for path in (samples_path, prototypes_path):
        if not path.exists():
            raise DatasetError(f"dataset not found: {path}")
    feats, labels = [], []
    with open(samples_path) as fh:
        for line in fh:
            rec = json.loads(line)
            feats.append(rec["features"])
            labels.append(int(rec["label"]))
    protos = {}
    with open(prototypes_path) as fh:
        for line in fh:
            rec = json.loads(line)
            protos[int(rec["class"])] = rec["prototype"]
    if not feats:
        raise DatasetError(f"no samples in {samples_path}")
    if sorted(protos) != list(range(len(protos))):
        raise DatasetError("prototype classes must be exactly 0..C-1")
    ds = Dataset(
        np.asarray(feats, dtype=np.float64),
        np.asarray(labels, dtype=int),
        np.asarray([protos[c] for c in range(len(protos))], dtype=np.float64),
    )
    return ds.validate()
