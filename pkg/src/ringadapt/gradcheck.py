"""Finite-difference verification suite for every recorded op and the full loss."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import data
from .autodiff import Tape, backward, finite_diff_check
from .model import DualEncoderModel, ModelDims
from .training import Batch, batch_loss_on_tape, pack_parameters, unpack_parameters

H = 1e-5
TOL = 1e-4


def _check_single(name, theta0, loss_fn, h=H, tol=TOL):
    """loss_fn(theta_vars) -> scalar Variable, given a dict of flat slices."""

    def value_at(theta):
        tape = Tape()
        return float(loss_fn(tape, tape.variable(theta, trainable=True)).value)

    tape = Tape()
    var = tape.variable(theta0, trainable=True)
    loss = loss_fn(tape, var)
    backward(tape, loss)
    report = finite_diff_check(value_at, theta0, var.grad, h=h, tol=tol)
    return {"op": name, "max_rel_err": report.max_rel_err, "pass": report.passed}


def op_checks(seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []

    b_fixed = rng.normal(size=(4, 3, 2))
    checks.append(_check_single(
        "contract", rng.normal(size=24),
        lambda tape, v: ad.mean(ad.contract(ad.reshape(v, (2, 3, 4)), tape.constant(b_fixed),
                                            [(2, 0), (1, 1)])),
    ))

    other = rng.normal(size=(3, 3))
    checks.append(_check_single(
        "add", rng.normal(size=9),
        lambda tape, v: ad.mean(ad.tanh(ad.add(ad.reshape(v, (3, 3)), tape.constant(other)))),
    ))

    # last coordinate is the scalar factor
    checks.append(_check_single(
        "scale", rng.normal(size=5),
        lambda tape, v: ad.mean(ad.scale(
            ad.contract(v, tape.constant(np.eye(5)[:4]), [(0, 1)]),
            ad.contract(v, tape.constant(np.eye(5)[4]), [(0, 0)]),
        )),
    ))

    checks.append(_check_single(
        "reshape", rng.normal(size=12),
        lambda tape, v: ad.mean(ad.tanh(ad.reshape(v, (3, 4)))),
    ))

    checks.append(_check_single(
        "tanh", rng.normal(size=6),
        lambda tape, v: ad.mean(ad.tanh(v)),
    ))

    checks.append(_check_single(
        "mean", rng.normal(size=6),
        lambda tape, v: ad.mean(v),
    ))

    checks.append(_check_single(
        "sigmoid", rng.normal(size=6),
        lambda tape, v: ad.mean(ad.sigmoid(v)),
    ))

    # first half is u, second half is v
    checks.append(_check_single(
        "cosine_similarity", rng.normal(size=16),
        lambda tape, v: ad.cosine_similarity(
            ad.contract(tape.constant(np.eye(16)[:8]), v, [(1, 0)]),
            ad.contract(tape.constant(np.eye(16)[8:]), v, [(1, 0)]),
        ),
    ))

    checks.append(_check_single(
        "softmax_cross_entropy", rng.normal(size=5),
        lambda tape, v: ad.softmax_cross_entropy(ad.scale(v, 1.0 / 0.07), 2),
    ))

    w_fixed = rng.normal(size=(6, 8))
    c_fixed = rng.normal(size=6)
    checks.append(_check_single(
        "composite_cos_linear", rng.normal(size=8),
        lambda tape, v: ad.cosine_similarity(
            ad.contract(tape.constant(w_fixed), v, [(1, 0)]), tape.constant(c_fixed)),
    ))
    return checks


def _toy_setup(seed: int = 0):
    dims = ModelDims(
        d_in=6, d=8, layers=2, in_factors=(2, 4), out_factors=(4, 2),
        bond_rank=2, layer_ranks=(3, 1), core_std=0.4,
        backbone_seed=seed, adapter_seed=seed + 1,
    )
    model = DualEncoderModel.build(dims)
    # move off the zero-init point so every parameter participates
    rng = np.random.default_rng(seed + 2)
    for arr in model.trainable_parameters().values():
        arr += rng.normal(0.0, 0.05, size=arr.shape)
    ds = data.gen_data(num_classes=2, per_class=4, d_in=6, cluster_std=0.3, seed=seed + 3)
    batch = Batch(ds.features, ds.labels, ds.prototypes)
    frozen_v = np.stack([model.visual.frozen.encode(x) for x in batch.images])
    frozen_t = np.stack([model.textual.frozen.encode(p) for p in batch.prototypes])
    return model, batch, frozen_v, frozen_t


def full_loss_check(seed: int = 0, lam: float = 0.5, h=H, tol=TOL) -> dict:
    """Finite differences over every trainable coordinate of the full loss."""
    model, batch, frozen_v, frozen_t = _toy_setup(seed)
    params = model.trainable_parameters()
    theta0 = pack_parameters(params)

    def loss_at(theta):
        values = unpack_parameters(theta, params)
        tape = Tape()
        pvars = {k: tape.variable(v, trainable=True) for k, v in values.items()}
        _, _, total = batch_loss_on_tape(tape, model, pvars, batch, lam, frozen_v, frozen_t)
        return float(total.value)

    tape = Tape()
    pvars = {k: tape.variable(v, trainable=True) for k, v in params.items()}
    _, _, total = batch_loss_on_tape(tape, model, pvars, batch, lam, frozen_v, frozen_t)
    backward(tape, total)
    analytic = np.concatenate([pvars[k].grad.reshape(-1) for k in params])
    report = finite_diff_check(loss_at, theta0, analytic, h=h, tol=tol)
    return {"op": "full_loss", "max_rel_err": report.max_rel_err, "pass": report.passed}


def default_suite(seed: int = 0) -> list[dict]:
    return op_checks(seed) + [full_loss_check(seed)]
