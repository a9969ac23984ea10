"""Four-layer leaky-ReLU MLPs, latent sampling and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, Tape


class NonFiniteGradient(ArithmeticError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name}")
        self.name = name


@dataclass(frozen=True)
class MlpSpec:
    in_dim: int
    hidden_dims: tuple[int, ...] = (128, 128, 128)
    out_dim: int = 1
    final_sigmoid: bool = False
    leaky_slope: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if len(self.hidden_dims) != 3:
            raise ValueError(f"hidden_dims needs exactly 3 entries, got {list(self.hidden_dims)}")
        if min(self.in_dim, self.out_dim, *self.hidden_dims) < 1:
            raise ValueError("all layer dimensions must be >= 1")

    @property
    def dims(self) -> list[int]:
        return [self.in_dim, *self.hidden_dims, self.out_dim]


@dataclass
class MlpParams:
    """Weights (fan_in, fan_out) and row-vector biases (1, fan_out) of 4 linear layers.

    Entries are numpy arrays for stored parameters, or tensors once bound to a tape.
    """

    weights: list
    biases: list

    def names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"W{i + 1}", f"b{i + 1}"]
        return out

    def flat(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_flat(cls, items) -> "MlpParams":
        items = list(items)
        return cls(weights=items[0::2], biases=items[1::2])

    def bind(self, tape: Tape) -> "MlpParams":
        """Register every parameter as a leaf on ``tape``."""
        return MlpParams.from_flat(tape.leaf(p) for p in self.arrays())

    def arrays(self) -> list[np.ndarray]:
        return [p.data if isinstance(p, Tensor) else p for p in self.flat()]

    def copy(self) -> "MlpParams":
        return MlpParams.from_flat(a.copy() for a in self.arrays())


def build_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    weights, biases = [], []
    dims = spec.dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    return MlpParams(weights, biases)


def mlp_forward(params: MlpParams, x, spec: MlpSpec) -> Tensor:
    if not isinstance(x, Tensor):
        x = Tensor(x)
    if x.shape[1] != spec.in_dim:
        raise ad.ShapeError("mlp_forward", x.shape, f"in_dim={spec.in_dim}")
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        w = w if isinstance(w, Tensor) else Tensor(w)
        b = b if isinstance(b, Tensor) else Tensor(b)
        h = ad.add_bias(ad.matmul(h, w), b)
        if i < last:
            h = ad.leaky_relu(h, spec.leaky_slope)
    if spec.final_sigmoid:
        h = ad.sigmoid(h)
    return h


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)


def adam_step(
    params: MlpParams,
    grads,
    state: AdamState,
    lr: float,
    beta1: float = 0.5,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    arrays = params.arrays()
    grads = [g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in grads]
    if len(grads) != len(arrays):
        raise ValueError(f"expected {len(arrays)} gradients, got {len(grads)}")
    names = params.names()
    for name, p, g in zip(names, arrays, grads):
        if g.shape != p.shape:
            raise ad.ShapeError("adam_step", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(name)
    if not state.m:
        state = AdamState.zeros_like(params)

    t = state.t + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + eps))
        new_m.append(m)
        new_v.append(v)
    return MlpParams.from_flat(new_p), AdamState(new_m, new_v, t)


def sample_z(m: int, dim: int, rng: np.random.Generator) -> Tensor:
    if m < 1 or dim < 1:
        raise ValueError("sample_z needs m >= 1 and dim >= 1")
    return Tensor(rng.standard_normal((m, dim)))
