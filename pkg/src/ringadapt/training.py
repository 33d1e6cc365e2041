"""Losses, optimizer, training loop, and the base/novel evaluation protocol.

Only adapter cores and combinators receive updates; the frozen backbone is
never touched.  The classification loss is the temperature-scaled softmax
cross-entropy over class cosine similarities; the drift regularizer pulls
fine-tuned visual embeddings back toward the frozen ones and is weighted by
the config's lambda.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import tensor
from .autodiff import Tape, backward
from .data import Dataset
from .errors import DatasetError, DivergenceError, ShapeMismatchError
from .model import DualEncoderModel, TapeBindings, encode_batch, encode_image, encode_on_tape


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.5  # weight of the drift regularizer
    epochs: int = 10
    batch_size: int = 16
    learning_rate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    shots: int = 16  # training samples per base class
    shuffle_seed: int = 0
    regularize_textual: bool = False  # also pull prototype embeddings toward frozen

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.epochs < 0 or self.batch_size < 1 or self.shots < 1:
            raise ValueError("epochs must be >= 0; batch_size and shots >= 1")


@dataclass
class Batch:
    images: np.ndarray  # (B, d_in)
    labels: np.ndarray  # (B,) indices into prototypes
    prototypes: np.ndarray  # (C, d_in)


@dataclass
class Metrics:
    epoch: int
    loss_cls: float
    loss_reg: float
    loss_total: float
    base_acc: float
    novel_acc: float
    hm: float
    drift: float

    CSV_FIELDS = ("epoch", "loss_cls", "loss_reg", "loss_total",
                  "base_acc", "novel_acc", "hm", "drift")

    def row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def harmonic_mean(a: float, b: float) -> float:
    return 2.0 * a * b / (a + b) if a + b > 0 else 0.0


# ---------------------------------------------------------------------------
# losses (pure)
# ---------------------------------------------------------------------------

def loss_cls(f_v: np.ndarray, f_t: np.ndarray, labels, tau: float) -> float:
    """Mean softmax cross-entropy over cosine logits at temperature tau."""
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    f_v = np.atleast_2d(tensor.as_tensor(f_v))
    f_t = np.atleast_2d(tensor.as_tensor(f_t))
    labels = np.asarray(labels, dtype=int)
    total = 0.0
    for i in range(f_v.shape[0]):
        logits = np.array(
            [tensor.cosine_similarity(f_v[i], f_t[c]) for c in range(f_t.shape[0])]
        ) / tau
        z = logits - np.max(logits)
        total += math.log(np.sum(np.exp(z))) - z[labels[i]]
    return total / f_v.shape[0]


def loss_reg(f_v: np.ndarray, frozen_f_v: np.ndarray) -> float:
    """Mean (1 - cos) distance between fine-tuned and frozen embeddings."""
    f_v = np.atleast_2d(tensor.as_tensor(f_v))
    frozen_f_v = np.atleast_2d(tensor.as_tensor(frozen_f_v))
    if f_v.shape[0] != frozen_f_v.shape[0]:
        raise ShapeMismatchError("batch length mismatch between live and frozen embeddings")
    dists = [1.0 - tensor.cosine_similarity(f_v[i], frozen_f_v[i]) for i in range(f_v.shape[0])]
    return float(np.mean(dists))


def total_loss(cls_value: float, reg_value: float, lam: float) -> float:
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    return cls_value + lam * reg_value


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

def adam_step(param, grad, m, v, t: int, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected moment update; returns (param, m, v) as new arrays."""
    param, grad = tensor.as_tensor(param), tensor.as_tensor(grad)
    if param.shape != grad.shape or param.shape != np.shape(m) or param.shape != np.shape(v):
        raise ShapeMismatchError("adam_step operands must share one shape")
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


# ---------------------------------------------------------------------------
# tape loss
# ---------------------------------------------------------------------------

def _mean_scalars(terms):
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.scale(acc, 1.0 / len(terms))


def _cosine_logits(tape, f_v, f_t_vars, tau):
    n = len(f_t_vars)
    logits = None
    for c, ft in enumerate(f_t_vars):
        basis = np.zeros(n)
        basis[c] = 1.0
        term = ad.scale(tape.constant(basis), ad.cosine_similarity(f_v, ft))
        logits = term if logits is None else ad.add(logits, term)
    return ad.scale(logits, 1.0 / tau)


def batch_loss_on_tape(tape: Tape, model: DualEncoderModel, pvars, batch: Batch,
                       lam: float, frozen_visual: np.ndarray,
                       frozen_textual: np.ndarray | None = None,
                       regularize_textual: bool = False):
    """Build (cls, reg, total) scalar Variables for one batch.

    frozen_visual holds the frozen-backbone embeddings of batch.images,
    precomputed once per run (they never change during training).
    """
    one = np.asarray(1.0)
    bind = TapeBindings(tape, model, pvars)
    f_t = [encode_on_tape(bind, model, "textual", pvars, p) for p in batch.prototypes]
    ce_terms, reg_terms = [], []
    for i in range(batch.images.shape[0]):
        f_v = encode_on_tape(bind, model, "visual", pvars, batch.images[i])
        logits = _cosine_logits(tape, f_v, f_t, model.temperature)
        ce_terms.append(ad.softmax_cross_entropy(logits, int(batch.labels[i])))
        drift = ad.scale(ad.cosine_similarity(f_v, tape.constant(frozen_visual[i])), -1.0)
        reg_terms.append(ad.add(tape.constant(one), drift))
    if regularize_textual:
        if frozen_textual is None:
            raise ValueError("regularize_textual requires frozen prototype embeddings")
        for c, ft in enumerate(f_t):
            drift = ad.scale(ad.cosine_similarity(ft, tape.constant(frozen_textual[c])), -1.0)
            reg_terms.append(ad.add(tape.constant(one), drift))
    cls = _mean_scalars(ce_terms)
    reg = _mean_scalars(reg_terms)
    total = ad.add(cls, ad.scale(reg, lam))
    return cls, reg, total


# ---------------------------------------------------------------------------
# splits and evaluation
# ---------------------------------------------------------------------------

def base_classes(num_classes: int) -> list[int]:
    """First ceil(C/2) class ids train; the rest are held out as novel."""
    return list(range(math.ceil(num_classes / 2)))


def novel_classes(num_classes: int) -> list[int]:
    return list(range(math.ceil(num_classes / 2), num_classes))


def train_indices(dataset: Dataset, shots: int) -> np.ndarray:
    """First `shots` samples of every base class, in dataset order."""
    picks = []
    for c in base_classes(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)[:shots]
        picks.extend(idx.tolist())
    return np.array(sorted(picks), dtype=int)


def eval_indices(dataset: Dataset, split: str, shots: int) -> np.ndarray:
    """Base split evaluates on held-out base-class samples (the ones beyond
    the training shots); novel uses every novel-class sample."""
    if split == "base":
        picks = []
        for c in base_classes(dataset.num_classes):
            idx = np.flatnonzero(dataset.labels == c)
            rest = idx[shots:]
            picks.extend((rest if rest.size else idx).tolist())
        return np.array(sorted(picks), dtype=int)
    if split == "novel":
        mask = np.isin(dataset.labels, novel_classes(dataset.num_classes))
        return np.flatnonzero(mask)
    raise ValueError(f"split must be 'base' or 'novel', got {split!r}")


def evaluate(model: DualEncoderModel, dataset: Dataset, split: str, shots: int = 16) -> float:
    """Accuracy of argmax-cosine prediction restricted to the split's classes."""
    if split not in ("base", "novel"):
        raise ValueError(f"split must be 'base' or 'novel', got {split!r}")
    classes = base_classes(dataset.num_classes) if split == "base" else novel_classes(dataset.num_classes)
    idx = eval_indices(dataset, split, shots)
    if idx.size == 0 or not classes:
        raise DatasetError(f"split {split!r} is empty")
    class_emb = encode_batch(model, dataset.prototypes[classes], "textual")
    f_v = encode_batch(model, dataset.features[idx], "visual")
    preds = np.asarray(classes)[np.argmax(f_v @ class_emb.T, axis=1)]
    return float(np.mean(preds == dataset.labels[idx]))


def embedding_drift(model: DualEncoderModel, dataset: Dataset, indices=None,
                    frozen_emb: np.ndarray | None = None) -> float:
    """Mean (1 - cos) between adapted and frozen visual embeddings."""
    if indices is None:
        indices = np.arange(dataset.features.shape[0])
    live = encode_batch(model, dataset.features[indices], "visual")
    if frozen_emb is None:
        frozen_emb = np.stack(
            [model.visual.frozen.encode(x) for x in dataset.features[indices]]
        )
    dists = [1.0 - tensor.cosine_similarity(live[k], frozen_emb[k]) for k in range(len(live))]
    return float(np.mean(dists))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _epoch_losses(model: DualEncoderModel, batch: Batch, lam: float,
                  frozen_visual: np.ndarray, frozen_textual, regularize_textual: bool):
    """Loss values over a fixed sample set, order-independent of batching."""
    tape = Tape()
    cls, reg, _ = batch_loss_on_tape(
        tape, model, None, batch, lam, frozen_visual, frozen_textual, regularize_textual
    )
    c, r = float(cls.value), float(reg.value)
    return c, r, total_loss(c, r, lam)


def _metrics_for_epoch(model, dataset, cfg, epoch, train_batch, train_idx,
                       frozen_visual, frozen_textual) -> Metrics:
    c, r, t = _epoch_losses(
        model, train_batch, cfg.lam, frozen_visual, frozen_textual, cfg.regularize_textual
    )
    base = evaluate(model, dataset, "base", cfg.shots)
    novel = evaluate(model, dataset, "novel", cfg.shots)
    return Metrics(
        epoch=epoch, loss_cls=c, loss_reg=r, loss_total=t,
        base_acc=base, novel_acc=novel, hm=harmonic_mean(base, novel),
        drift=embedding_drift(model, dataset, train_idx, frozen_visual),
    )


def write_metrics_csv(path, metrics: list[Metrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(Metrics.CSV_FIELDS)
        for m in metrics:
            writer.writerow(m.row())


def train(model: DualEncoderModel, dataset: Dataset, cfg: TrainConfig,
          log_path=None) -> list[Metrics]:
    """Fine-tune adapters and combinators on the base split.

    Returns one Metrics row per epoch, plus an epoch-0 row for the untrained
    model.  Fully reproducible given the config's seeds; the frozen backbone
    is bit-identical before and after (asserted via digest).
    """
    tr_idx = train_indices(dataset, cfg.shots)
    if tr_idx.size == 0:
        raise DatasetError("base split is empty; nothing to train on")
    frozen_digest = model.frozen_digest()
    protos = dataset.prototypes[base_classes(dataset.num_classes)]
    train_batch = Batch(dataset.features[tr_idx], dataset.labels[tr_idx], protos)

    frozen_visual = np.stack(
        [model.visual.frozen.encode(x) for x in train_batch.images]
    )
    frozen_textual = np.stack([model.textual.frozen.encode(p) for p in protos])

    params = model.trainable_parameters()
    m_state = {k: np.zeros_like(p) for k, p in params.items()}
    v_state = {k: np.zeros_like(p) for k, p in params.items()}
    step = 0

    metrics = [_metrics_for_epoch(model, dataset, cfg, 0, train_batch, tr_idx,
                                  frozen_visual, frozen_textual)]
    rng = np.random.default_rng(cfg.shuffle_seed)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(tr_idx.size)
        for start in range(0, order.size, cfg.batch_size):
            pick = order[start:start + cfg.batch_size]
            batch = Batch(train_batch.images[pick], train_batch.labels[pick], protos)
            tape = Tape()
            pvars = {k: tape.variable(p, trainable=True) for k, p in params.items()}
            _, _, total = batch_loss_on_tape(
                tape, model, pvars, batch, cfg.lam, frozen_visual[pick],
                frozen_textual, cfg.regularize_textual,
            )
            if not np.isfinite(total.value):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            backward(tape, total)
            step += 1
            for name, p in params.items():
                new_p, m_state[name], v_state[name] = adam_step(
                    p, pvars[name].grad, m_state[name], v_state[name], step,
                    cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps,
                )
                p[...] = new_p  # in-place so the model sees the update
        metrics.append(_metrics_for_epoch(model, dataset, cfg, epoch, train_batch, tr_idx,
                                          frozen_visual, frozen_textual))
    assert model.frozen_digest() == frozen_digest, "frozen backbone was mutated"
    if log_path is not None:
        write_metrics_csv(log_path, metrics)
    return metrics


# ---------------------------------------------------------------------------
# flat parameter helpers (finite-difference checks)
# ---------------------------------------------------------------------------

def pack_parameters(params: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([p.reshape(-1) for p in params.values()])


def unpack_parameters(vec: np.ndarray, like: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out, pos = {}, 0
    for name, p in like.items():
        out[name] = np.asarray(vec[pos:pos + p.size], dtype=np.float64).reshape(p.shape)
        pos += p.size
    if pos != np.size(vec):
        raise ShapeMismatchError("flat vector length does not match parameter sizes")
    return out
