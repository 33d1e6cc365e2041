"""Cross-layer tensor-ring adapter stacks.

One stack represents the adapters of all L layers of one encoder at one
granularity.  The stacked per-layer weight matrices are kept in tensor-ring
form: a closed chain of 3-way cores

    in_1 (R0,I1,R1) ... in_p (R_{p-1},Ip,Rp) | layer (Rp,L,R_{p+1}) |
    out_1 (R_{p+1},O1,R_{p+2}) ... out_q (R_{p+q},Oq,R0)

where the boundary rank closes the ring via a trace.  The cores other than
the layer core are shared by all layers; layer l owns the matrix slice
``layer_core[:, l, :]``.  The stack is trained directly in this factored
form; nothing is ever fitted to a pre-existing dense weight.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .errors import InvalidPlanError, ShapeMismatchError


@dataclass(frozen=True)
class FactorizationPlan:
    """Shape metadata for one adapter stack.

    ranks has length p+q+2; ranks[0] and ranks[-1] are the same boundary
    rank (closed ring).  ranks[p] and ranks[p+1] are the two bonds touching
    the layer core; these carry the per-layer capacity.
    """

    in_factors: tuple[int, ...]
    out_factors: tuple[int, ...]
    layers: int
    ranks: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "in_factors", tuple(int(f) for f in self.in_factors))
        object.__setattr__(self, "out_factors", tuple(int(f) for f in self.out_factors))
        object.__setattr__(self, "ranks", tuple(int(r) for r in self.ranks))
        p, q = len(self.in_factors), len(self.out_factors)
        if p < 1 or q < 1:
            raise InvalidPlanError("need at least one input and one output factor")
        if self.layers < 1:
            raise InvalidPlanError(f"layers must be >= 1, got {self.layers}")
        if any(f < 1 for f in self.in_factors + self.out_factors):
            raise InvalidPlanError("all factors must be >= 1")
        if len(self.ranks) != p + q + 2:
            raise InvalidPlanError(
                f"ranks must have length p+q+2={p + q + 2}, got {len(self.ranks)}"
            )
        if any(r < 1 for r in self.ranks):
            raise InvalidPlanError("all ranks must be >= 1")
        if self.ranks[0] != self.ranks[-1]:
            raise InvalidPlanError(
                f"boundary ranks must match (closed ring), got {self.ranks[0]} != {self.ranks[-1]}"
            )

    @property
    def p(self) -> int:
        return len(self.in_factors)

    @property
    def q(self) -> int:
        return len(self.out_factors)

    @property
    def in_width(self) -> int:
        return int(np.prod(self.in_factors))

    @property
    def out_width(self) -> int:
        return int(np.prod(self.out_factors))

    def core_shapes(self) -> list[tuple[int, int, int]]:
        """3-way core shapes in ring order: input cores, layer core, output cores."""
        p = self.p
        shapes = [
            (self.ranks[j], self.in_factors[j], self.ranks[j + 1]) for j in range(p)
        ]
        shapes.append((self.ranks[p], self.layers, self.ranks[p + 1]))
        shapes += [
            (self.ranks[p + 1 + j], self.out_factors[j], self.ranks[p + 2 + j])
            for j in range(self.q)
        ]
        return shapes


@dataclass
class TRAdapterStack:
    plan: FactorizationPlan
    input_cores: list[np.ndarray] = field(repr=False)
    layer_core: np.ndarray = field(repr=False)
    output_cores: list[np.ndarray] = field(repr=False)

    def ring_cores(self, layer: int) -> list[np.ndarray]:
        """All p+q+1 cores with the layer mode collapsed to slice `layer`.

        The slice is re-expanded to a (Rp, 1, R_{p+1}) core so the list is a
        uniform ring of 3-way cores.
        """
        self._check_layer(layer)
        g = self.layer_core[:, layer, :]
        return [*self.input_cores, g[:, None, :], *self.output_cores]

    def all_cores(self) -> list[np.ndarray]:
        return [*self.input_cores, self.layer_core, *self.output_cores]

    def scalar_count(self) -> int:
        return sum(c.size for c in self.all_cores())

    def _check_layer(self, layer: int):
        if not 0 <= layer < self.plan.layers:
            raise IndexError(f"layer {layer} out of range [0, {self.plan.layers})")


def init_adapter(plan: FactorizationPlan, seed: int, std: float = 0.02) -> TRAdapterStack:
    """Gaussian shared cores, all-zero layer core.

    The zero layer core makes every layer's adapter the zero map at
    initialization.  Draw order is fixed (input cores, then output cores) so
    identical (plan, seed, std) yields bit-identical stacks.
    """
    if std <= 0:
        raise InvalidPlanError(f"std must be positive, got {std}")
    shapes = plan.core_shapes()
    p = plan.p
    rng = np.random.default_rng(seed)
    input_cores = [rng.normal(0.0, std, size=shapes[j]) for j in range(p)]
    output_cores = [rng.normal(0.0, std, size=shapes[p + 1 + j]) for j in range(plan.q)]
    layer_core = np.zeros(shapes[p])
    return TRAdapterStack(plan, input_cores, layer_core, output_cores)


def trainable_param_count(plan: FactorizationPlan) -> int:
    """Scalar count of a stack built from `plan` (shared cores + layer core)."""
    return sum(a * b * c for a, b, c in plan.core_shapes())


def reconstruct_ring(cores: list[np.ndarray]) -> np.ndarray:
    """Materialize the full tensor represented by a closed ring of 3-way cores.

    Left-to-right chain contraction carrying the (R0, ..., R_cur) boundary
    pair, closed by a trace over R0.  Debug/oracle path only.
    """
    if not cores:
        raise ShapeMismatchError("empty core list")
    acc = tensor.as_tensor(cores[0])
    if acc.ndim != 3:
        raise ShapeMismatchError(f"cores must be 3-way, got ndim {acc.ndim}")
    for core in cores[1:]:
        acc = tensor.contract(acc, core, [(acc.ndim - 1, 0)])
    if acc.shape[0] != acc.shape[-1]:
        raise ShapeMismatchError(
            f"ring does not close: boundary ranks {acc.shape[0]} vs {acc.shape[-1]}"
        )
    return np.trace(acc, axis1=0, axis2=acc.ndim - 1)


def reconstruct_layer_weight(stack: TRAdapterStack, layer: int) -> np.ndarray:
    """Dense (I, O) adapter weight of one layer; oracle path, not used in training.

    Orientation: the weight acts on an input vector as y[o] = sum_i A[i, o] * x[i].
    """
    full = reconstruct_ring(stack.ring_cores(layer))
    # drop the singleton layer mode, then merge input and output modes
    full = full.reshape(stack.plan.in_factors + stack.plan.out_factors)
    return full.reshape(stack.plan.in_width, stack.plan.out_width)


def adapter_forward(stack: TRAdapterStack, layer: int, x) -> np.ndarray:
    """Apply layer `layer`'s adapter to a length-I vector without densifying.

    Tensorize x, sweep it through the ring cores left to right, close the
    ring with a trace, and flatten the output modes back to a vector.
    """
    stack._check_layer(layer)
    plan = stack.plan
    vec = tensor.vectorize(x)
    if vec.size != plan.in_width:
        raise ShapeMismatchError(
            f"input length {vec.size} != adapter input width {plan.in_width}"
        )
    acc = tensor.tensorize(vec, plan.in_factors)
    # input sweep: absorb mode j and the bond carried from core j-1
    acc = tensor.contract(acc, stack.input_cores[0], [(0, 1)])
    for core in stack.input_cores[1:]:
        acc = tensor.contract(acc, core, [(0, 1), (acc.ndim - 1, 0)])
    # acc is now (R0, Rp); apply the layer slice, then grow output modes
    acc = tensor.contract(acc, stack.layer_core[:, layer, :], [(1, 0)])
    for core in stack.output_cores:
        acc = tensor.contract(acc, core, [(acc.ndim - 1, 0)])
    # acc is (R0, O1..Oq, R0); close the ring
    out = np.trace(acc, axis1=0, axis2=acc.ndim - 1)
    return out.reshape(-1)


def cyclic_shift(cores_or_stack, k: int) -> list[np.ndarray]:
    """Rotate a core ring left by k positions (k is taken modulo ring length).

    Reconstruction of the rotated ring equals the original tensor with its
    modes rolled by k.  A TRAdapterStack is accepted; its ring is the p+q+1
    cores including the full layer core.  Test-support operation.
    """
    if isinstance(cores_or_stack, TRAdapterStack):
        cores = cores_or_stack.all_cores()
    else:
        cores = [tensor.as_tensor(c) for c in cores_or_stack]
    k = int(k) % len(cores)
    return cores[k:] + cores[:k]
