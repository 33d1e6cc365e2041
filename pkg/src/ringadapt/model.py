"""Frozen toy dual encoder with per-layer fine/coarse ring adapters.

The backbone is a deterministic random tanh MLP stack (one per branch, both
generated from the same backbone seed so that image and prototype inputs
land in a shared embedding space).  Each branch carries one adapter stack
per granularity plus a gate head ("combinator") producing one sigmoid gate
per stack from the current layer input:

    y = frozen_layer(x) + g_fine * fine_adapter(x) + g_coarse * coarse_adapter(x)

All forward passes run through the autodiff tape; inference simply uses a
throwaway tape and reads values, so there is exactly one forward
implementation to trust.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import ring, tensor
from .autodiff import Tape, Variable
from .errors import InvalidPlanError
from .ring import FactorizationPlan, TRAdapterStack


@dataclass(frozen=True)
class ModelDims:
    """Construction-time configuration of a dual-encoder model."""

    d_in: int = 32
    d: int = 64
    layers: int = 6
    in_factors: tuple[int, ...] = (4, 4, 4)
    out_factors: tuple[int, ...] = (4, 4, 4)
    bond_rank: int = 1
    layer_ranks: tuple[int, ...] = (8, 1)  # one stack per entry: (fine, coarse)
    temperature: float = 0.07
    core_std: float = 0.5
    tower_gap: float = 0.35  # relative inter-tower weight perturbation
    backbone_seed: int = 0
    adapter_seed: int = 100
    identity_backbone: bool = False

    def __post_init__(self):
        object.__setattr__(self, "in_factors", tuple(int(f) for f in self.in_factors))
        object.__setattr__(self, "out_factors", tuple(int(f) for f in self.out_factors))
        object.__setattr__(self, "layer_ranks", tuple(int(r) for r in self.layer_ranks))
        if int(np.prod(self.in_factors)) != self.d or int(np.prod(self.out_factors)) != self.d:
            raise InvalidPlanError(
                f"adapter factorizations must multiply to d={self.d}: "
                f"{self.in_factors} / {self.out_factors}"
            )
        if not self.layer_ranks:
            raise InvalidPlanError("need at least one adapter granularity")
        if self.temperature <= 0:
            raise InvalidPlanError(f"temperature must be positive, got {self.temperature}")

    def plan(self, layer_rank: int) -> FactorizationPlan:
        p, q = len(self.in_factors), len(self.out_factors)
        ranks = [self.bond_rank] * (p + q + 2)
        ranks[p] = layer_rank
        ranks[p + 1] = layer_rank
        return FactorizationPlan(self.in_factors, self.out_factors, self.layers, tuple(ranks))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelDims":
        return cls(**d)


@dataclass
class FrozenEncoder:
    """Fixed input projection plus L tanh layers; immutable after build.

    The two towers of a dual encoder share the base weights drawn from the
    backbone seed; a tower-specific perturbation of relative size
    ``tower_gap`` plays the role of the imperfect cross-modal alignment that
    fine-tuning is supposed to bridge.
    """

    proj: np.ndarray
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int
    identity: bool = False

    # weight std multiplier; ~unit variance gain through tanh at this width
    WEIGHT_GAIN = 1.5

    @classmethod
    def build(cls, d_in: int, d: int, layers: int, seed: int, identity: bool = False,
              tower: int = 0, tower_gap: float = 0.0) -> "FrozenEncoder":
        rng = np.random.default_rng(seed)
        proj = rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d, d_in))
        if identity:
            weights = [np.eye(d) for _ in range(layers)]
            biases = [np.zeros(d) for _ in range(layers)]
        else:
            weights = [
                rng.normal(0.0, cls.WEIGHT_GAIN / np.sqrt(d), size=(d, d)) for _ in range(layers)
            ]
            biases = [rng.normal(0.0, 0.1, size=d) for _ in range(layers)]
            if tower_gap > 0.0:
                drift_rng = np.random.default_rng([seed, tower])
                weights = [
                    w + drift_rng.normal(0.0, tower_gap * cls.WEIGHT_GAIN / np.sqrt(d), size=w.shape)
                    for w in weights
                ]
        return cls(proj, weights, biases, seed, identity)

    @property
    def layers(self) -> int:
        return len(self.weights)

    def project(self, x) -> np.ndarray:
        return tensor.contract(self.proj, tensor.vectorize(x), [(1, 0)])

    def layer_apply(self, layer: int, x) -> np.ndarray:
        if self.identity:
            return tensor.as_tensor(x)
        return np.tanh(tensor.contract(self.weights[layer], x, [(1, 0)]) + self.biases[layer])

    def encode(self, x) -> np.ndarray:
        h = self.project(x)
        for l in range(self.layers):
            h = self.layer_apply(l, h)
        return tensor.l2_normalize(h)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.proj.tobytes())
        for w, b in zip(self.weights, self.biases):
            h.update(w.tobytes())
            h.update(b.tobytes())
        return h.hexdigest()


@dataclass
class Combinator:
    """Single linear layer emitting one sigmoid gate per adapter stack."""

    weight: np.ndarray  # (n_stacks, d)
    bias: np.ndarray  # (n_stacks,)

    @classmethod
    def zeros(cls, n_stacks: int, d: int) -> "Combinator":
        return cls(np.zeros((n_stacks, d)), np.zeros(n_stacks))


def combinator_gates(c: Combinator, x) -> np.ndarray:
    """sigmoid(Wx + b); every gate lies strictly inside (0, 1).

    float64 saturates the sigmoid at extreme logits, so the result is nudged
    into the open interval to keep the contract exact.
    """
    z = tensor.contract(c.weight, tensor.vectorize(x), [(1, 0)]) + c.bias
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


@dataclass
class EncoderBranch:
    frozen: FrozenEncoder
    adapters: list[TRAdapterStack]
    combinator: Combinator


@dataclass
class DualEncoderModel:
    dims: ModelDims
    visual: EncoderBranch
    textual: EncoderBranch

    @property
    def temperature(self) -> float:
        return self.dims.temperature

    @classmethod
    def build(cls, dims: ModelDims = ModelDims()) -> "DualEncoderModel":
        branches = {}
        for b_idx, name in enumerate(("visual", "textual")):
            frozen = FrozenEncoder.build(
                dims.d_in, dims.d, dims.layers, dims.backbone_seed, dims.identity_backbone,
                tower=b_idx, tower_gap=dims.tower_gap,
            )
            stacks = [
                ring.init_adapter(
                    dims.plan(rank), seed=dims.adapter_seed + 100 * b_idx + i, std=dims.core_std
                )
                for i, rank in enumerate(dims.layer_ranks)
            ]
            branches[name] = EncoderBranch(frozen, stacks, Combinator.zeros(len(stacks), dims.d))
        return cls(dims, branches["visual"], branches["textual"])

    def branch(self, name: str) -> EncoderBranch:
        if name not in ("visual", "textual"):
            raise ValueError(f"branch must be 'visual' or 'textual', got {name!r}")
        return self.visual if name == "visual" else self.textual

    def trainable_parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, in checkpoint order."""
        params: dict[str, np.ndarray] = {}
        for name in ("visual", "textual"):
            br = self.branch(name)
            for i, stack in enumerate(br.adapters):
                for j, core in enumerate(stack.input_cores):
                    params[f"{name}.adapter{i}.in{j}"] = core
                params[f"{name}.adapter{i}.layer"] = stack.layer_core
                for j, core in enumerate(stack.output_cores):
                    params[f"{name}.adapter{i}.out{j}"] = core
            params[f"{name}.combinator.weight"] = br.combinator.weight
            params[f"{name}.combinator.bias"] = br.combinator.bias
        return params

    def frozen_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.visual.frozen.digest().encode())
        h.update(self.textual.frozen.digest().encode())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# tape forward
# ---------------------------------------------------------------------------

class TapeBindings:
    """Per-tape cache of lifted constants and trainable Variables.

    One bindings object per (tape, model) pair lets many encodes on a shared
    tape (a batch, an eval sweep) reuse a single Variable per frozen weight,
    core, and helper constant.
    """

    def __init__(self, tape: Tape, model: DualEncoderModel, pvars=None):
        self.tape = tape
        self.model = model
        self.pvars = pvars
        self._consts: dict[str, Variable] = {}

    def const(self, key: str, arr) -> Variable:
        var = self._consts.get(key)
        if var is None:
            var = self.tape.constant(arr)
            self._consts[key] = var
        return var

    def param(self, name: str, arr) -> Variable:
        if self.pvars is not None:
            return self.pvars[name]
        return self.const("param:" + name, arr)

    def onehot(self, n: int, i: int) -> Variable:
        key = f"onehot:{n}:{i}"
        if key not in self._consts:
            v = np.zeros(n)
            v[i] = 1.0
            self._consts[key] = self.tape.constant(v)
        return self._consts[key]

    def eye(self, n: int) -> Variable:
        return self.const(f"eye:{n}", np.eye(n))


def adapter_forward_on_tape(bind: TapeBindings, stack: TRAdapterStack, prefix: str,
                            layer: int, x: Variable) -> Variable:
    """Taped twin of ring.adapter_forward; same contraction schedule."""
    plan = stack.plan
    ins = [bind.param(f"{prefix}.in{j}", c) for j, c in enumerate(stack.input_cores)]
    layer_var = bind.param(f"{prefix}.layer", stack.layer_core)
    outs = [bind.param(f"{prefix}.out{j}", c) for j, c in enumerate(stack.output_cores)]
    acc = ad.reshape(x, plan.in_factors)
    acc = ad.contract(acc, ins[0], [(0, 1)])
    for core in ins[1:]:
        acc = ad.contract(acc, core, [(0, 1), (acc.value.ndim - 1, 0)])
    g_l = ad.contract(layer_var, bind.onehot(plan.layers, layer), [(1, 0)])
    acc = ad.contract(acc, g_l, [(1, 0)])
    for core in outs:
        acc = ad.contract(acc, core, [(acc.value.ndim - 1, 0)])
    # close the ring: trace over the boundary rank via an identity matrix
    acc = ad.contract(acc, bind.eye(plan.ranks[0]), [(0, 0), (acc.value.ndim - 1, 1)])
    return ad.reshape(acc, (plan.out_width,))


def layer_forward_on_tape(bind: TapeBindings, name: str, layer: int, h: Variable) -> Variable:
    branch = bind.model.branch(name)
    frozen = branch.frozen
    if frozen.identity:
        y = h
    else:
        w = bind.const(f"{name}.W{layer}", frozen.weights[layer])
        b = bind.const(f"{name}.b{layer}", frozen.biases[layer])
        y = ad.tanh(ad.add(ad.contract(w, h, [(1, 0)]), b))
    cw = bind.param(f"{name}.combinator.weight", branch.combinator.weight)
    cb = bind.param(f"{name}.combinator.bias", branch.combinator.bias)
    gates = ad.sigmoid(ad.add(ad.contract(cw, h, [(1, 0)]), cb))
    for i, stack in enumerate(branch.adapters):
        gate_i = ad.contract(gates, bind.onehot(len(branch.adapters), i), [(0, 0)])
        a_out = adapter_forward_on_tape(bind, stack, f"{name}.adapter{i}", layer, h)
        y = ad.add(y, ad.scale(a_out, gate_i))
    return y


def encode_on_tape(tape_or_bindings, model: DualEncoderModel, name: str, pvars, x) -> Variable:
    """Full-branch forward; returns the final embedding before normalization."""
    if isinstance(tape_or_bindings, TapeBindings):
        bind = tape_or_bindings
    else:
        bind = TapeBindings(tape_or_bindings, model, pvars)
    branch = model.branch(name)
    proj = bind.const(f"{name}.proj", branch.frozen.proj)
    h = ad.contract(proj, bind.tape.constant(tensor.vectorize(x)), [(1, 0)])
    for l in range(model.dims.layers):
        h = layer_forward_on_tape(bind, name, l, h)
    return h


# ---------------------------------------------------------------------------
# public inference API (throwaway tapes)
# ---------------------------------------------------------------------------

def layer_forward(model: DualEncoderModel, branch: str, layer: int, x) -> np.ndarray:
    """One layer of the adapted forward pass: frozen output plus gated adapters."""
    if not 0 <= layer < model.dims.layers:
        raise IndexError(f"layer {layer} out of range [0, {model.dims.layers})")
    bind = TapeBindings(Tape(), model)
    h = bind.tape.constant(tensor.vectorize(x))
    return layer_forward_on_tape(bind, branch, layer, h).value


def encode_image(model: DualEncoderModel, x) -> np.ndarray:
    """Unit-norm visual embedding of a raw d_in input."""
    return tensor.l2_normalize(encode_on_tape(Tape(), model, "visual", None, x).value)


def encode_text(model: DualEncoderModel, prototype) -> np.ndarray:
    """Unit-norm textual embedding of a class prototype vector."""
    return tensor.l2_normalize(encode_on_tape(Tape(), model, "textual", None, prototype).value)


def encode_batch(model: DualEncoderModel, xs, branch: str = "visual") -> np.ndarray:
    """Unit-norm embeddings for many inputs sharing one tape's constants."""
    bind = TapeBindings(Tape(), model)
    return np.stack(
        [tensor.l2_normalize(encode_on_tape(bind, model, branch, None, x).value) for x in xs]
    )


def layer_activations(model: DualEncoderModel, branch: str, x) -> list[np.ndarray]:
    """Embedding after every layer of the adapted forward pass."""
    bind = TapeBindings(Tape(), model)
    proj = bind.const(f"{branch}.proj", model.branch(branch).frozen.proj)
    h = ad.contract(proj, bind.tape.constant(tensor.vectorize(x)), [(1, 0)])
    outs = []
    for l in range(model.dims.layers):
        h = layer_forward_on_tape(bind, branch, l, h)
        outs.append(h.value)
    return outs
