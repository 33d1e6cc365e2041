import math

import numpy as np
import pytest

from ringadapt.data import Dataset, gen_data
from ringadapt.errors import DatasetError, DivergenceError, ShapeMismatchError
from ringadapt.model import DualEncoderModel, ModelDims
from ringadapt.training import (
    Batch,
    TrainConfig,
    adam_step,
    base_classes,
    embedding_drift,
    eval_indices,
    evaluate,
    harmonic_mean,
    loss_cls,
    loss_reg,
    novel_classes,
    total_loss,
    train,
    train_indices,
)

TOY_DIMS = ModelDims(d_in=6, d=8, layers=2, in_factors=(2, 4), out_factors=(4, 2),
                     bond_rank=2, layer_ranks=(3, 1), backbone_seed=3, adapter_seed=4)


def toy_dataset(seed=0, per_class=8, classes=4):
    return gen_data(classes, per_class, 6, cluster_std=0.25, seed=seed)


def toy_cfg(**kw):
    base = dict(epochs=3, batch_size=8, shots=4, learning_rate=1e-2)
    base.update(kw)
    return TrainConfig(**base)


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestLossCls:
    def test_single_class_zero(self):
        rng = np.random.default_rng(0)
        f_v = unit_rows(rng, 3, 8)
        f_t = unit_rows(rng, 1, 8)
        assert loss_cls(f_v, f_t, [0, 0, 0], tau=0.07) == 0.0

    def test_uniform_two_class_is_ln2(self):
        f_t = np.eye(8)[:2]
        f_v = np.tile((np.eye(8)[0] + np.eye(8)[1]) / np.sqrt(2.0), (2, 1))
        got = loss_cls(f_v, f_t, [0, 1], tau=0.07)
        assert abs(got - math.log(2.0)) < 1e-12

    def test_direct_formula_oracle(self):
        rng = np.random.default_rng(1)
        f_v, f_t = unit_rows(rng, 6, 8), unit_rows(rng, 4, 8)
        labels = rng.integers(0, 4, size=6)
        tau = 0.07
        want = 0.0
        for i in range(6):
            sims = np.array([float(f_v[i] @ f_t[c]) for c in range(4)]) / tau
            p = np.exp(sims - sims.max())
            p /= p.sum()
            want += -math.log(p[labels[i]])
        want /= 6
        assert abs(loss_cls(f_v, f_t, labels, tau) - want) < 1e-12

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            loss_cls(np.eye(2), np.eye(2), [0, 1], tau=0.0)


class TestLossReg:
    def test_identical_is_zero(self):
        f = unit_rows(np.random.default_rng(2), 4, 8)
        assert loss_reg(f, f) == 0.0

    def test_opposite_is_two(self):
        f = unit_rows(np.random.default_rng(3), 4, 8)
        assert abs(loss_reg(f, -f) - 2.0) < 1e-12

    def test_one_minus_dot_for_unit_vectors(self):
        rng = np.random.default_rng(4)
        a, b = unit_rows(rng, 5, 8), unit_rows(rng, 5, 8)
        want = float(np.mean([1.0 - a[i] @ b[i] for i in range(5)]))
        assert abs(loss_reg(a, b) - want) < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            loss_reg(np.eye(3), np.eye(4))


class TestTotalLoss:
    def test_lambda_zero(self):
        assert total_loss(1.7, 0.9, 0.0) == 1.7

    def test_arithmetic(self):
        assert total_loss(1.0, 0.4, 0.5) == 1.2

    def test_linear_in_lambda(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            c, r = rng.normal(), abs(rng.normal())
            slope = (total_loss(c, r, 2.0) - total_loss(c, r, 1.0)) / 1.0
            assert abs(slope - r) < 1e-12

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, -0.1)


class TestHarmonicMean:
    def test_formula(self):
        assert harmonic_mean(0.5, 1.0) == pytest.approx(2 / 3)

    def test_degenerate(self):
        assert harmonic_mean(0.0, 0.0) == 0.0


class TestAdamStep:
    def test_zero_grad_keeps_param(self):
        p = np.array([1.0, -2.0])
        new_p, m, v = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), t=1, lr=0.1)
        assert np.array_equal(new_p, p)

    def test_first_step_is_lr_times_sign(self):
        for g in (3.0, -0.25, 1e-4):
            new_p, _, _ = adam_step(np.array([0.0]), np.array([g]),
                                    np.zeros(1), np.zeros(1), t=1, lr=0.1)
            assert abs(new_p[0] + 0.1 * np.sign(g)) < 1e-3

    def test_quadratic_descent(self):
        theta = np.array([1.0])
        m, v = np.zeros(1), np.zeros(1)
        prev = abs(theta[0])
        for t in range(1, 11):
            grad = 2.0 * theta
            theta, m, v = adam_step(theta, grad, m, v, t=t, lr=0.1)
            assert abs(theta[0]) < prev
            prev = abs(theta[0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            adam_step(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), t=1, lr=0.1)


class TestSplits:
    def test_disjoint_cover(self):
        for c in (2, 3, 8, 9):
            b, n = base_classes(c), novel_classes(c)
            assert sorted(b + n) == list(range(c))
            assert not set(b) & set(n)

    def test_train_indices_shots(self):
        ds = toy_dataset()
        idx = train_indices(ds, shots=4)
        assert len(idx) == 4 * len(base_classes(ds.num_classes))
        assert all(ds.labels[i] in base_classes(ds.num_classes) for i in idx)

    def test_eval_indices_exclude_shots(self):
        ds = toy_dataset()
        tr = set(train_indices(ds, shots=4).tolist())
        ev = set(eval_indices(ds, "base", shots=4).tolist())
        assert not tr & ev

    def test_eval_falls_back_when_no_holdout(self):
        ds = toy_dataset(per_class=4)
        ev = eval_indices(ds, "base", shots=4)
        assert ev.size == 4 * len(base_classes(ds.num_classes))


class TestEvaluate:
    def test_single_class_split_is_perfect(self):
        ds = toy_dataset(classes=2)
        model = DualEncoderModel.build(TOY_DIMS)
        assert evaluate(model, ds, "base", shots=4) == 1.0
        assert evaluate(model, ds, "novel", shots=4) == 1.0

    def test_frozen_beats_chance_on_separated_clusters(self):
        ds = gen_data(4, 16, 6, cluster_std=0.05, seed=7)
        model = DualEncoderModel.build(TOY_DIMS)
        assert evaluate(model, ds, "base", shots=4) > 1.0 / 2.0

    def test_permuted_labels_near_chance(self):
        ds = gen_data(8, 24, 6, cluster_std=0.05, seed=8)
        rng = np.random.default_rng(9)
        shuffled = Dataset(ds.features, rng.permutation(ds.labels), ds.prototypes)
        model = DualEncoderModel.build(TOY_DIMS)
        acc = evaluate(model, shuffled, "novel", shots=4)
        # 4 novel classes -> chance 0.25; binomial 4-sigma band on 96 samples
        assert abs(acc - 0.25) < 4 * math.sqrt(0.25 * 0.75 / 96)

    def test_bad_split_name(self):
        with pytest.raises(ValueError):
            evaluate(DualEncoderModel.build(TOY_DIMS), toy_dataset(), "test", 4)


class TestTrain:
    def test_zero_lr_is_noop(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        before = {k: v.copy() for k, v in model.trainable_parameters().items()}
        metrics = train(model, ds, toy_cfg(learning_rate=0.0))
        for k, v in model.trainable_parameters().items():
            assert np.array_equal(before[k], v)
        first = metrics[0]
        for m in metrics[1:]:
            assert m.row()[1:] == first.row()[1:]

    def test_loss_decreases(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        metrics = train(model, ds, toy_cfg(epochs=5))
        assert metrics[-1].loss_total < metrics[0].loss_total

    def test_frozen_backbone_untouched(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        digest = model.frozen_digest()
        train(model, ds, toy_cfg())
        assert model.frozen_digest() == digest

    def test_seeded_reproducibility(self):
        ds = toy_dataset()
        rows = []
        for _ in range(2):
            model = DualEncoderModel.build(TOY_DIMS)
            rows.append([m.row() for m in train(model, ds, toy_cfg())])
        assert rows[0] == rows[1]

    def test_loss_decomposition_exact(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        for m in train(model, ds, toy_cfg(lam=0.7)):
            assert m.loss_total == total_loss(m.loss_cls, m.loss_reg, 0.7)
            assert 0.0 <= m.loss_reg <= 2.0

    def test_lambda_pulls_drift_down(self):
        ds = toy_dataset()
        finals = {}
        for lam in (0.0, 1.0):
            model = DualEncoderModel.build(TOY_DIMS)
            finals[lam] = train(model, ds, toy_cfg(epochs=6, lam=lam))[-1].drift
        assert finals[1.0] < finals[0.0]

    def test_empty_base_split(self):
        ds = toy_dataset()
        empty = Dataset(ds.features[:0], ds.labels[:0], ds.prototypes)
        with pytest.raises(DatasetError):
            train(DualEncoderModel.build(TOY_DIMS), empty, toy_cfg())

    def test_divergence_guard(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        model.visual.combinator.weight[...] = np.nan
        with pytest.raises(DivergenceError):
            train(model, ds, toy_cfg())

    def test_textual_regularizer_flag(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        metrics = train(model, ds, toy_cfg(epochs=1, regularize_textual=True))
        assert np.isfinite(metrics[-1].loss_total)


class TestEmbeddingDrift:
    def test_untrained_model_has_zero_drift(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        assert embedding_drift(model, ds) == 0.0

    def test_perturbed_model_drifts(self):
        ds = toy_dataset()
        model = DualEncoderModel.build(TOY_DIMS)
        model.visual.adapters[0].layer_core[...] = 0.5
        assert embedding_drift(model, ds) > 0.0
