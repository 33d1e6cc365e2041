"""Reverse-mode differentiation over the tensor ops the model needs.

A Tape records Variables in creation order; backward walks that order in
reverse, so every node is visited after all of its consumers.  Gradients
accumulate additively when a value feeds several ops.  Only nodes that can
reach a trainable leaf ever get gradient storage.
"""
from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from . import tensor
from .errors import ShapeMismatchError, TapeError


class Variable:
    __slots__ = ("value", "grad", "trainable", "requires_grad", "tape", "node_id", "_parents", "_vjp")

    def __init__(self, value, tape, trainable=False, parents=(), vjp=None):
        self.value = tensor.as_tensor(value)
        self.grad = None
        self.trainable = trainable
        self.requires_grad = trainable or any(p.requires_grad for p in parents)
        self.tape = tape
        self._parents = parents
        self._vjp = vjp
        self.node_id = tape._register(self)

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        kind = "param" if self.trainable else ("node" if self._parents else "const")
        return f"Variable(id={self.node_id}, shape={self.value.shape}, {kind})"


class Tape:
    """Single-owner op record.  Build a fresh tape per forward pass."""

    def __init__(self):
        self.nodes: list[Variable] = []

    def _register(self, var: Variable) -> int:
        self.nodes.append(var)
        return len(self.nodes) - 1

    def variable(self, value, trainable: bool = False) -> Variable:
        return Variable(value, self, trainable=trainable)

    def constant(self, value) -> Variable:
        return Variable(value, self, trainable=False)

    def trainables(self) -> list[Variable]:
        return [v for v in self.nodes if v.trainable]


def _lift(tape: Tape, x) -> Variable:
    if isinstance(x, Variable):
        if x.tape is not tape:
            raise TapeError("operands recorded on different tapes")
        return x
    return tape.constant(x)


def _tape_of(*args) -> Tape:
    for a in args:
        if isinstance(a, Variable):
            return a.tape
    raise TapeError("at least one operand must be a Variable")


def _needs_grad(*vars_) -> bool:
    return any(v.requires_grad for v in vars_)


def add(a, b) -> Variable:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(f"add shape mismatch: {a.value.shape} vs {b.value.shape}")

    def vjp(g):
        return (g, g)

    if not _needs_grad(a, b):
        vjp = None
    return Variable(a.value + b.value, tape, parents=(a, b), vjp=vjp)


def scale(x, s) -> Variable:
    """x * s for a scalar s (python float or 0-d Variable)."""
    tape = _tape_of(x, s)
    x = _lift(tape, x)
    if isinstance(s, Variable) or isinstance(s, np.ndarray):
        s = _lift(tape, s)
        if s.value.size != 1:
            raise ShapeMismatchError(f"scale factor must be scalar, got shape {s.value.shape}")
        xv, sv = x.value, float(s.value)

        def vjp(g):
            return (sv * g, np.asarray(np.sum(g * xv)))

        if not _needs_grad(x, s):
            vjp = None
        return Variable(xv * sv, tape, parents=(x, s), vjp=vjp)

    c = float(s)

    def vjp_const(g):
        return (c * g,)

    if not x.requires_grad:
        vjp_const = None
    return Variable(x.value * c, tape, parents=(x,), vjp=vjp_const)


def reshape(x, shape) -> Variable:
    """Gradient-transparent reshape; covers tensorize and vectorize."""
    tape = _tape_of(x)
    x = _lift(tape, x)
    old = x.value.shape
    shape = tuple(int(d) for d in shape)
    val = x.value.reshape(shape) if -1 in shape else tensor.tensorize(x.value, shape)

    def vjp(g):
        return (np.asarray(g).reshape(old),)

    if not x.requires_grad:
        vjp = None
    return Variable(val, tape, parents=(x,), vjp=vjp)


def _contract_subscripts(a_ndim, b_ndim, ax_a, ax_b):
    names = iter(string.ascii_letters)
    a_sub = [next(names) for _ in range(a_ndim)]
    b_sub = [None] * b_ndim
    for i, j in zip(ax_a, ax_b):
        b_sub[j] = a_sub[i]
    for j in range(b_ndim):
        if b_sub[j] is None:
            b_sub[j] = next(names)
    out_sub = [a_sub[i] for i in range(a_ndim) if i not in set(ax_a)]
    out_sub += [b_sub[j] for j in range(b_ndim) if j not in set(ax_b)]
    return "".join(a_sub), "".join(b_sub), "".join(out_sub)


def contract(a, b, axes) -> Variable:
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    val = tensor.contract(a.value, b.value, axes)
    if not _needs_grad(a, b):
        return Variable(val, tape, parents=(a, b), vjp=None)
    ax_a = [int(p[0]) for p in axes]
    ax_b = [int(p[1]) for p in axes]
    av, bv = a.value, b.value

    def vjp(g):
        sa, sb, so = _contract_subscripts(av.ndim, bv.ndim, ax_a, ax_b)
        ga = np.einsum(f"{so},{sb}->{sa}", g, bv)
        gb = np.einsum(f"{so},{sa}->{sb}", g, av)
        return (ga, gb)

    return Variable(val, tape, parents=(a, b), vjp=vjp)


def tanh(x) -> Variable:
    tape = _tape_of(x)
    x = _lift(tape, x)
    y = np.tanh(x.value)

    def vjp(g):
        return (g * (1.0 - y * y),)

    if not x.requires_grad:
        vjp = None
    return Variable(y, tape, parents=(x,), vjp=vjp)


def sigmoid(x) -> Variable:
    tape = _tape_of(x)
    x = _lift(tape, x)
    # split by sign to avoid overflow in exp
    v = x.value
    s = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.clip(v, 0, None))),
                 np.exp(np.clip(v, None, 0)) / (1.0 + np.exp(np.clip(v, None, 0))))

    def vjp(g):
        return (g * s * (1.0 - s),)

    if not x.requires_grad:
        vjp = None
    return Variable(s, tape, parents=(x,), vjp=vjp)


def mean(x) -> Variable:
    tape = _tape_of(x)
    x = _lift(tape, x)
    n = x.value.size
    shape = x.value.shape

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    if not x.requires_grad:
        vjp = None
    return Variable(np.asarray(np.mean(x.value)), tape, parents=(x,), vjp=vjp)


def cosine_similarity(u, v) -> Variable:
    tape = _tape_of(u, v)
    u, v = _lift(tape, u), _lift(tape, v)
    val = tensor.cosine_similarity(u.value, v.value)  # raises on zero norms
    uv, vv = u.value.reshape(-1), v.value.reshape(-1)
    nu, nv = np.linalg.norm(uv), np.linalg.norm(vv)
    c_raw = float(np.dot(uv, vv)) / (nu * nv)

    def vjp(g):
        g = float(g)
        gu = g * (vv / (nu * nv) - c_raw * uv / (nu * nu))
        gv = g * (uv / (nu * nv) - c_raw * vv / (nv * nv))
        return (gu.reshape(u.value.shape), gv.reshape(v.value.shape))

    if not _needs_grad(u, v):
        vjp = None
    return Variable(np.asarray(val), tape, parents=(u, v), vjp=vjp)


def softmax_cross_entropy(logits, label: int) -> Variable:
    """-log softmax(logits)[label], computed with max-subtraction."""
    tape = _tape_of(logits)
    logits = _lift(tape, logits)
    v = logits.value.reshape(-1)
    if not 0 <= int(label) < v.size:
        raise IndexError(f"label {label} out of range for {v.size} classes")
    m = np.max(v)
    z = v - m
    ez = np.exp(z)
    total = np.sum(ez)
    probs = ez / total
    loss = np.log(total) - z[int(label)]
    onehot = np.zeros_like(v)
    onehot[int(label)] = 1.0

    def vjp(g):
        return ((float(g) * (probs - onehot)).reshape(logits.value.shape),)

    if not logits.requires_grad:
        vjp = None
    return Variable(np.asarray(loss), tape, parents=(logits,), vjp=vjp)


def backward(tape: Tape, loss: Variable) -> None:
    """Populate .grad with d(loss)/d(node) for every node that needs one.

    Grads are reset first, so repeated calls are idempotent.  Trainable
    leaves unreachable from the loss receive explicit zero gradients.
    """
    if loss.tape is not tape or tape.nodes[loss.node_id] is not loss:
        raise TapeError("loss was not produced on this tape")
    if loss.value.size != 1:
        raise TapeError(f"loss must be scalar, got shape {loss.value.shape}")
    for node in tape.nodes:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(tape.nodes):
        if node.grad is None or node._vjp is None or not node.requires_grad:
            continue
        gs = node._vjp(node.grad)
        for parent, g in zip(node._parents, gs):
            if parent.requires_grad:
                parent._accumulate(g)
    for node in tape.nodes:
        if node.trainable and node.grad is None:
            node.grad = np.zeros_like(node.value)


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    worst_index: int = -1


def finite_diff_check(f, theta0, analytic_grad, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    f maps a flat parameter vector to a float.  Relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8) coordinatewise.
    """
    theta0 = np.asarray(theta0, dtype=np.float64).reshape(-1)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(-1)
    if analytic.shape != theta0.shape:
        raise ShapeMismatchError("analytic gradient length != parameter length")
    worst, worst_i = 0.0, -1
    for i in range(theta0.size):
        step = np.zeros_like(theta0)
        step[i] = h
        numeric = (f(theta0 + step) - f(theta0 - step)) / (2.0 * h)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        rel = float(abs(analytic[i] - numeric) / denom)
        if rel > worst:
            worst, worst_i = rel, i
    return GradCheckReport(max_rel_err=worst, passed=bool(worst < tol), worst_index=worst_i)
