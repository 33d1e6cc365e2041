"""Dense float64 tensors and the shape/contraction primitives.

Every value in this package is a C-ordered (row-major, last index fastest)
``numpy.ndarray`` of dtype float64.  ``Shape`` is a plain tuple of positive
ints.  All functions here are pure: they never mutate their arguments.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidAxisError, ShapeMismatchError, ZeroNormError

Shape = tuple[int, ...]

# Norms below this are treated as zero when a direction is required.
NORM_FLOOR = 1e-12


def as_tensor(values) -> np.ndarray:
    """Coerce to a C-ordered float64 array (copying only when needed).

    0-d arrays pass through untouched; ascontiguousarray would promote them
    to shape (1,).
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 0 and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


def check_shape(shape: Shape) -> Shape:
    dims = tuple(int(d) for d in shape)
    if any(d < 1 for d in dims):
        raise ShapeMismatchError(f"shape extents must be >= 1, got {dims}")
    return dims


def tensorize(v, target: Shape) -> np.ndarray:
    """Reshape a length-N vector into a tensor of the target shape.

    Row-major: the last target index varies fastest along v.
    """
    vec = as_tensor(v).reshape(-1)
    dims = check_shape(target)
    n = int(np.prod(dims))
    if vec.size != n:
        raise ShapeMismatchError(
            f"cannot tensorize length {vec.size} into shape {dims} (needs {n})"
        )
    return vec.reshape(dims)


def vectorize(t) -> np.ndarray:
    """Row-major flattening; inverse of tensorize for a matching shape."""
    return as_tensor(t).reshape(-1)


def _normalize_axes(a_ndim: int, b_ndim: int, axes) -> tuple[list[int], list[int]]:
    ax_a, ax_b = [], []
    for pair in axes:
        if len(pair) != 2:
            raise InvalidAxisError(f"axis pair {pair!r} must have exactly two entries")
        i, j = int(pair[0]), int(pair[1])
        if not 0 <= i < a_ndim:
            raise InvalidAxisError(f"axis {i} out of range for ndim {a_ndim}")
        if not 0 <= j < b_ndim:
            raise InvalidAxisError(f"axis {j} out of range for ndim {b_ndim}")
        ax_a.append(i)
        ax_b.append(j)
    if len(set(ax_a)) != len(ax_a) or len(set(ax_b)) != len(ax_b):
        raise InvalidAxisError(f"contracted axes must be distinct, got {axes}")
    return ax_a, ax_b


def contract(a, b, axes) -> np.ndarray:
    """General tensor contraction over pairs of (axis-of-a, axis-of-b).

    Result axes are the remaining axes of ``a`` (in order) followed by the
    remaining axes of ``b``.  The summation order is fixed by the operand
    layout, so results are bit-reproducible for identical inputs.
    """
    ta, tb = as_tensor(a), as_tensor(b)
    ax_a, ax_b = _normalize_axes(ta.ndim, tb.ndim, axes)
    for i, j in zip(ax_a, ax_b):
        if ta.shape[i] != tb.shape[j]:
            raise ShapeMismatchError(
                f"extent mismatch: a.shape[{i}]={ta.shape[i]} vs b.shape[{j}]={tb.shape[j]}"
            )
    # common single-pair cases skip tensordot's transpose/reshape overhead
    if len(ax_a) == 1:
        i, j = ax_a[0], ax_b[0]
        if ta.ndim == 1 and tb.ndim == 1:
            return np.asarray(ta @ tb)
        if tb.ndim == 1 and i == ta.ndim - 1:
            return ta @ tb
        if ta.ndim == 1 and tb.ndim == 2 and j == 0:
            return ta @ tb
        if ta.ndim == 2 and tb.ndim == 2 and i == 1 and j == 0:
            return ta @ tb
    return np.tensordot(ta, tb, axes=(ax_a, ax_b))


def cosine_similarity(u, v) -> float:
    """dot(u, v) / (||u|| * ||v||), clamped to [-1, 1] against rounding."""
    vu, vv = vectorize(u), vectorize(v)
    if vu.shape != vv.shape:
        raise ShapeMismatchError(f"length mismatch: {vu.size} vs {vv.size}")
    nu = float(np.linalg.norm(vu))
    nv = float(np.linalg.norm(vv))
    if nu < NORM_FLOOR or nv < NORM_FLOOR:
        raise ZeroNormError(f"cosine undefined for norms ({nu:.3e}, {nv:.3e})")
    c = float(np.dot(vu, vv)) / (nu * nv)
    return min(1.0, max(-1.0, c))


def l2_normalize(v) -> np.ndarray:
    """Unit-norm copy of v; raises ZeroNormError on degenerate input."""
    vec = vectorize(v)
    n = float(np.linalg.norm(vec))
    if n < NORM_FLOOR:
        raise ZeroNormError(f"cannot normalize vector with norm {n:.3e}")
    return vec / n
