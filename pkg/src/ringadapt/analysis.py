"""Embedding-similarity analyses: layer redundancy, class separation, drift."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import DatasetError, ShapeMismatchError
from .model import DualEncoderModel, encode_image, encode_text, layer_activations


def analyze_layer_similarity(model: DualEncoderModel, samples, branch: str = "visual") -> np.ndarray:
    """L x L matrix of mean cosine similarity between per-layer embeddings.

    Entry (i, j) averages cos(embedding after layer i, embedding after layer j)
    over the given samples.  Symmetric with unit diagonal by construction.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] == 0:
        raise DatasetError("need at least one sample")
    n_layers = model.dims.layers
    acc = np.zeros((n_layers, n_layers))
    for x in samples:
        acts = layer_activations(model, branch, x)
        for i in range(n_layers):
            for j in range(i, n_layers):
                c = tensor.cosine_similarity(acts[i], acts[j])
                acc[i, j] += c
                acc[j, i] += c if i != j else 0.0
    return acc / samples.shape[0]


def analyze_class_similarity(model: DualEncoderModel, prototypes) -> np.ndarray:
    """C x C pairwise cosine similarity of encoded class embeddings."""
    prototypes = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    emb = np.stack([encode_text(model, p) for p in prototypes])
    sim = emb @ emb.T
    return np.clip(sim, -1.0, 1.0)


@dataclass
class DriftSummary:
    mean: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {"mean": self.mean, "min": self.min, "max": self.max}


def analyze_drift(model: DualEncoderModel, reference: DualEncoderModel, samples) -> DriftSummary:
    """Per-sample cosine between this model's and the reference's visual embeddings.

    The reference is typically a freshly built (hence frozen-equivalent) model;
    both must share the backbone seed.
    """
    if model.dims.backbone_seed != reference.dims.backbone_seed:
        raise ShapeMismatchError(
            f"backbone seed mismatch: {model.dims.backbone_seed} vs {reference.dims.backbone_seed}"
        )
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    cosines = [
        tensor.cosine_similarity(encode_image(model, x), encode_image(reference, x))
        for x in samples
    ]
    return DriftSummary(float(np.mean(cosines)), float(np.min(cosines)), float(np.max(cosines)))
