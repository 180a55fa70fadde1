"""Feedforward neural dictionary with manual reverse-mode gradients.

The network maps a batch of observables ``y`` (rows) through
``h_j = act(h_{j-1} @ W_j.T + b_j)``; the lifted vector is ``[y, h_d]``.
Dropout (inverted scaling) follows every hidden activation in train mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, NumericalFailure
from .numerics import Rng

ACTIVATIONS = ("elu", "relu", "crelu", "tanh")


def activation(kind: str, z):
    z = np.asarray(z, dtype=np.float64)
    if kind == "elu":
        return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "crelu":
        return np.concatenate([np.maximum(z, 0.0), np.maximum(-z, 0.0)], axis=-1)
    if kind == "tanh":
        return np.tanh(z)
    raise InvalidArgument(f"unknown activation {kind!r}")


def activation_grad(kind: str, z):
    """Derivative of the activation at ``z``.

    For ``crelu`` this returns the pair of derivatives ``(d relu(z), d relu(-z))``
    stacked on the last axis. ReLU uses 0 at the kink; ELU uses 1.
    """
    z = np.asarray(z, dtype=np.float64)
    if kind == "elu":
        return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "crelu":
        return np.concatenate([(z > 0).astype(np.float64), -(z < 0).astype(np.float64)], axis=-1)
    if kind == "tanh":
        return 1.0 - np.tanh(z) ** 2
    raise InvalidArgument(f"unknown activation {kind!r}")


def _act_backward(kind: str, z, upstream):
    if kind == "crelu":
        r = z.shape[-1]
        return upstream[..., :r] * (z > 0) - upstream[..., r:] * (z < 0)
    return upstream * activation_grad(kind, z)


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_widths: tuple = (20, 20, 20, 20)
    output_width: int = 20
    activation: str = "elu"
    dropout_rate: float = 0.0
    residual: bool = False
    identity_prefix: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.input_dim < 1 or self.output_width < 1 or any(w < 1 for w in self.hidden_widths):
            raise InvalidArgument("all widths must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"activation must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidArgument("dropout_rate must lie in [0, 1)")
        if not self.identity_prefix:
            raise InvalidArgument("the identity prefix is mandatory")

    @property
    def widths(self) -> tuple:
        return self.hidden_widths + (self.output_width,)

    @property
    def depth(self) -> int:
        return len(self.widths)

    @property
    def expand(self) -> int:
        return 2 if self.activation == "crelu" else 1

    @property
    def lifted_dim(self) -> int:
        return self.input_dim + self.expand * self.output_width

    def layer_shapes(self) -> list:
        shapes = []
        fan_in = self.input_dim
        for w in self.widths:
            shapes.append((w, fan_in))
            fan_in = self.expand * w
        return shapes

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_widths": list(self.hidden_widths),
            "output_width": self.output_width,
            "activation": self.activation,
            "dropout_rate": self.dropout_rate,
            "residual": self.residual,
        }


def preset(name: str, input_dim: int) -> MlpSpec:
    """Named architectures: ``small`` (width 20, 5 layers) and ``deep20`` (20 ELU layers)."""
    if name == "small":
        return MlpSpec(input_dim, (20,) * 4, 20, "elu", 0.1)
    if name == "deep20":
        return MlpSpec(input_dim, (20,) * 19, 20, "elu", 0.1)
    raise InvalidArgument(f"unknown preset {name!r}")


@dataclass
class MlpParams:
    weights: list
    biases: list

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list:
        return list(self.weights) + list(self.biases)

    def check(self, spec: MlpSpec):
        shapes = spec.layer_shapes()
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise InvalidArgument("parameter count does not match the spec depth")
        for w, b, s in zip(self.weights, self.biases, shapes):
            if w.shape != s or b.shape != (s[0],):
                raise InvalidArgument(f"parameter shape {w.shape} does not match layer shape {s}")

    def to_dict(self) -> dict:
        return {"weights": [w.tolist() for w in self.weights], "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, doc: dict) -> "MlpParams":
        return cls([np.array(w, dtype=np.float64) for w in doc["weights"]],
                   [np.array(b, dtype=np.float64) for b in doc["biases"]])

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "MlpParams":
        return cls([np.zeros(s) for s in spec.layer_shapes()], [np.zeros(s[0]) for s in spec.layer_shapes()])


@dataclass
class MlpGrads:
    weights: list
    biases: list
    input: np.ndarray = None

    def arrays(self) -> list:
        return list(self.weights) + list(self.biases)


def init_params(spec: MlpSpec, rng: Rng) -> MlpParams:
    """He-scaled normal weights (std ``sqrt(2 / fan_in)``) and zero biases."""
    weights, biases = [], []
    for out, fan_in in spec.layer_shapes():
        weights.append(rng.normal((out, fan_in), scale=np.sqrt(2.0 / fan_in)))
        biases.append(np.zeros(out))
    return MlpParams(weights, biases)


@dataclass
class Tape:
    inputs: list = field(default_factory=list)  # layer inputs
    pre: list = field(default_factory=list)  # pre-activations
    masks: list = field(default_factory=list)  # scaled dropout masks or None
    skips: list = field(default_factory=list)
    y: np.ndarray = None


def draw_masks(spec: MlpSpec, batch: int, rng: Rng) -> list:
    """Inverted-dropout masks for every hidden layer (entries 0 or 1/keep)."""
    keep = 1.0 - spec.dropout_rate
    masks = []
    for w in spec.hidden_widths:
        if spec.dropout_rate == 0.0:
            masks.append(None)
        else:
            masks.append(rng.bernoulli_mask((batch, spec.expand * w), keep) / keep)
    return masks + [None]


def forward(spec: MlpSpec, params: MlpParams, y, mode: str = "eval", rng: Rng = None, masks=None,
            rowwise: bool = False):
    """Lift a batch of observables; returns ``(lifted, tape)``.

    ``mode="train"`` applies dropout using ``masks`` when supplied, else masks
    drawn from ``rng``. ``mode="eval"`` never drops or rescales. ``rowwise``
    avoids BLAS so each row's result does not depend on the batch size.
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y = np.atleast_2d(y)
    if y.shape[1] != spec.input_dim:
        raise InvalidArgument(f"expected {spec.input_dim} inputs, got {y.shape[1]}")
    if mode == "train" and masks is None and spec.dropout_rate > 0:
        if rng is None:
            raise InvalidArgument("train mode with dropout needs an rng or explicit masks")
        masks = draw_masks(spec, y.shape[0], rng)
    if mode == "eval" or masks is None:
        masks = [None] * spec.depth
    tape = Tape(y=y)
    h = y
    for j, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = (np.einsum("bi,oi->bo", h, w) if rowwise else h @ w.T) + b
        a = activation(spec.activation, z)
        skip = spec.residual and a.shape == h.shape and j > 0
        if skip:
            a = a + h
        if masks[j] is not None:
            a = a * masks[j]
        if not np.all(np.isfinite(a)):
            raise NumericalFailure(f"non-finite activation in layer {j + 1}")
        tape.inputs.append(h)
        tape.pre.append(z)
        tape.masks.append(masks[j])
        tape.skips.append(skip)
        h = a
    lifted = np.hstack([y, h])
    return (lifted[0] if single else lifted), tape


def backward(spec: MlpSpec, params: MlpParams, tape: Tape, upstream) -> MlpGrads:
    """Exact gradients of ``sum(upstream * lifted)`` through the recorded tape."""
    upstream = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if len(tape.pre) != len(params.weights) or upstream.shape != (tape.y.shape[0], spec.lifted_dim):
        raise InvalidArgument("tape, params and upstream gradient shapes do not match")
    p = spec.input_dim
    g = upstream[:, p:]
    gw = [None] * spec.depth
    gb = [None] * spec.depth
    for j in reversed(range(spec.depth)):
        if tape.masks[j] is not None:
            g = g * tape.masks[j]
        dz = _act_backward(spec.activation, tape.pre[j], g)
        gw[j] = dz.T @ tape.inputs[j]
        gb[j] = dz.sum(axis=0)
        g_in = dz @ params.weights[j]
        if tape.skips[j]:
            g_in = g_in + g
        g = g_in
    return MlpGrads(gw, gb, upstream[:, :p] + g)


class NeuralDictionary:
    kind = "mlp"

    def __init__(self, spec: MlpSpec, params: MlpParams):
        params.check(spec)
        self.spec = spec
        self.params = params
        self.p = spec.input_dim
        self.dim = spec.lifted_dim

    def lift(self, y) -> np.ndarray:
        return forward(self.spec, self.params, y, "eval", rowwise=True)[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "spec": self.spec.to_dict(), "params": self.params.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "NeuralDictionary":
        s = doc["spec"]
        spec = MlpSpec(s["input_dim"], tuple(s["hidden_widths"]), s["output_width"], s["activation"],
                       s["dropout_rate"], s.get("residual", False))
        return cls(spec, MlpParams.from_dict(doc["params"]))
