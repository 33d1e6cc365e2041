import numpy as np
import pytest

from ringadapt import tensor
from ringadapt.errors import InvalidAxisError, ShapeMismatchError, ZeroNormError


def naive_contract(a, b, axes):
    """Nested-loop contraction oracle, independent of the library path."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    ax_a = [p[0] for p in axes]
    ax_b = [p[1] for p in axes]
    free_a = [i for i in range(a.ndim) if i not in ax_a]
    free_b = [j for j in range(b.ndim) if j not in ax_b]
    out_shape = [a.shape[i] for i in free_a] + [b.shape[j] for j in free_b]
    out = np.zeros(out_shape)
    for out_idx in np.ndindex(*out_shape):
        ia = list(out_idx[: len(free_a)])
        ib = list(out_idx[len(free_a):])
        total = 0.0
        for summed in np.ndindex(*[a.shape[i] for i in ax_a]):
            idx_a = [0] * a.ndim
            idx_b = [0] * b.ndim
            for pos, i in enumerate(free_a):
                idx_a[i] = ia[pos]
            for pos, j in enumerate(free_b):
                idx_b[j] = ib[pos]
            for pos, (i, j) in enumerate(zip(ax_a, ax_b)):
                idx_a[i] = summed[pos]
                idx_b[j] = summed[pos]
            total += a[tuple(idx_a)] * b[tuple(idx_b)]
        out[out_idx] = total
    return out


class TestTensorize:
    def test_row_major_identity(self):
        t = tensor.tensorize([1, 2, 3, 4], (2, 2))
        assert t.tolist() == [[1, 2], [3, 4]]

    def test_singleton(self):
        t = tensor.tensorize([5], (1, 1, 1))
        assert t.shape == (1, 1, 1)
        assert t[0, 0, 0] == 5

    def test_round_trip_random(self):
        rng = np.random.default_rng(0)
        v = rng.normal(size=24)
        assert np.array_equal(tensor.vectorize(tensor.tensorize(v, (2, 3, 4))), v)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tensor.tensorize([1, 2, 3], (2, 2))

    def test_bad_extent(self):
        with pytest.raises(ShapeMismatchError):
            tensor.tensorize([1], (1, 0))


class TestVectorize:
    def test_matrix(self):
        assert tensor.vectorize([[1, 2], [3, 4]]).tolist() == [1, 2, 3, 4]

    def test_zeros(self):
        assert np.array_equal(tensor.vectorize(np.zeros((3, 3))), np.zeros(9))

    def test_round_trip_many_shapes(self):
        rng = np.random.default_rng(1)
        for shape in [(1,), (5,), (2, 3), (4, 1, 2), (2, 2, 2, 2), (3, 5, 2)]:
            v = rng.normal(size=int(np.prod(shape)))
            assert np.array_equal(tensor.vectorize(tensor.tensorize(v, shape)), v)


class TestContract:
    def test_matmul_case(self):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
        assert np.allclose(tensor.contract(a, b, [(1, 0)]), a @ b, atol=1e-15)

    def test_zero_operand(self):
        a = np.zeros((2, 3))
        b = np.random.default_rng(3).normal(size=(3, 4))
        assert np.array_equal(tensor.contract(a, b, [(1, 0)]), np.zeros((2, 4)))

    def test_nested_loop_oracle(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 3, 2))
        got = tensor.contract(a, b, [(2, 0), (1, 1)])
        want = naive_contract(a, b, [(2, 0), (1, 1)])
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-12

    def test_matmul_vs_triple_loop(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            a, b = rng.normal(size=(5, 7)), rng.normal(size=(7, 3))
            got = tensor.contract(a, b, [(1, 0)])
            assert np.max(np.abs(got - naive_contract(a, b, [(1, 0)]))) < 1e-12

    def test_bilinear(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            a, a2 = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
            b = rng.normal(size=(3, 4))
            alpha, beta = rng.normal(), rng.normal()
            lhs = tensor.contract(alpha * a + beta * a2, b, [(1, 0)])
            rhs = alpha * tensor.contract(a, b, [(1, 0)]) + beta * tensor.contract(a2, b, [(1, 0)])
            assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_extent_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tensor.contract(np.zeros((2, 3)), np.zeros((4, 2)), [(1, 0)])

    def test_invalid_axis(self):
        with pytest.raises(InvalidAxisError):
            tensor.contract(np.zeros((2, 3)), np.zeros((3, 2)), [(5, 0)])
        with pytest.raises(InvalidAxisError):
            tensor.contract(np.zeros((2, 2)), np.zeros((2, 2)), [(0, 0), (0, 1)])

    def test_result_axis_order(self):
        a = np.arange(24.0).reshape(2, 3, 4)
        b = np.arange(12.0).reshape(3, 4)
        got = tensor.contract(a, b, [(1, 0)])
        assert got.shape == (2, 4, 4)


class TestCosineSimilarity:
    def test_identical(self):
        assert tensor.cosine_similarity([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert tensor.cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_direct_formula(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            u, v = rng.normal(size=8), rng.normal(size=8)
            want = float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))
            assert abs(tensor.cosine_similarity(u, v) - want) < 1e-12

    def test_zero_norm(self):
        with pytest.raises(ZeroNormError):
            tensor.cosine_similarity([0, 0], [1, 0])

    def test_clamped(self):
        v = np.full(4, 0.1)
        assert tensor.cosine_similarity(v, 3.0 * v) == 1.0
        assert tensor.cosine_similarity(v, -2.0 * v) == -1.0
