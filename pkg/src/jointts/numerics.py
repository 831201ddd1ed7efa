"""Dense-network numerical core: layers, reverse-mode gradients, Adam, gradient checks.

Everything is float64 numpy. Only the compositions this package needs are
differentiated (stacked dense + ReLU layers); there is no general autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, ShapeError, StateError

RELU = "relu"
IDENTITY = "identity"


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = IDENTITY

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} incompatible with weight shape {self.weight.shape}"
            )
        if self.activation not in (RELU, IDENTITY):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_width(self) -> int:
        return self.weight.shape[1]

    @property
    def out_width(self) -> int:
        return self.weight.shape[0]


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layer.in_width:
        raise ShapeError(
            f"input shape {x.shape} does not match layer weight shape {layer.weight.shape}"
        )
    # On contiguous input einsum sums every row in the same order wherever it
    # sits in the batch; BLAS gemm does not, which would break exact sharing.
    out = np.einsum("nk,ok->no", x, layer.weight) + layer.bias
    if layer.activation == RELU:
        out = np.maximum(out, 0.0)
    return out


@dataclass
class GradientTape:
    """Parameter gradients keyed by parameter name."""

    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def accumulate(self, name: str, g: np.ndarray) -> None:
        if name in self.grads:
            self.grads[name] = self.grads[name] + g
        else:
            self.grads[name] = np.array(g, dtype=np.float64)

    def zero(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.grads.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.grads[name]


class MLP:
    """A stack of dense layers; ReLU between layers, identity on the last one.

    ``hidden=[]`` gives a single affine map.
    """

    def __init__(self, layers: list[DenseLayer]):
        if not layers:
            raise ShapeError("an MLP needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.out_width != b.in_width:
                raise ShapeError(
                    f"layer widths do not chain: {a.weight.shape} then {b.weight.shape}"
                )
        self.layers = layers

    @classmethod
    def init(cls, in_width: int, hidden: list[int], out_width: int,
             rng: np.random.Generator) -> "MLP":
        widths = [in_width, *hidden, out_width]
        layers = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            act = IDENTITY if i == len(widths) - 2 else RELU
            layers.append(DenseLayer(glorot_uniform(a, b, rng), np.zeros(b), act))
        return cls(layers)

    @property
    def in_width(self) -> int:
        return self.layers[0].in_width

    @property
    def out_width(self) -> int:
        return self.layers[-1].out_width

    @property
    def widths(self) -> list[int]:
        return [self.in_width] + [layer.out_width for layer in self.layers]

    def parameters(self, prefix: str = "") -> dict[str, np.ndarray]:
        params = {}
        for i, layer in enumerate(self.layers):
            params[f"{prefix}{i}.weight"] = layer.weight
            params[f"{prefix}{i}.bias"] = layer.bias
        return params

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Returns the output and the list of layer inputs needed by ``backward``."""
        cache = []
        h = x
        for layer in self.layers:
            cache.append(h)
            h = dense_forward(layer, h)
        cache.append(h)
        return h, cache

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: list[np.ndarray] | None, dout: np.ndarray,
                 tape: GradientTape, prefix: str = "") -> np.ndarray:
        """Backpropagate ``dout`` (gradient wrt the output); returns gradient wrt the input."""
        if cache is None or len(cache) != len(self.layers) + 1:
            raise StateError("backward called without a matching forward pass")
        g = np.asarray(dout, dtype=np.float64)
        if g.shape != cache[-1].shape:
            raise ShapeError(f"output gradient shape {g.shape} != output shape {cache[-1].shape}")
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.activation == RELU:
                g = g * (cache[i + 1] > 0.0)
            x = cache[i]
            tape.accumulate(f"{prefix}{i}.weight", g.T @ x)
            tape.accumulate(f"{prefix}{i}.bias", g.sum(axis=0))
            g = g @ layer.weight
        return g


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.step < 0:
            raise ValueError("Adam step must be non-negative")


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NumericError(
                f"non-finite gradient for {name!r} ({bad} entries) at Adam step {state.step + 1}"
            )
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"missing gradient for parameter {name!r}")
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1 ** step)
        v_hat = v / (1.0 - b2 ** step)
        new_params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(state.lr, b1, b2, state.eps, step, new_m, new_v)
    return new_params, new_state


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_parameter: str | None
    n_checked: int
    passed: bool


def finite_diff_check(params: dict[str, np.ndarray], loss_fn: Callable[[], float],
                      analytic: dict[str, np.ndarray], tolerance: float = 1e-4,
                      h: float = 1e-5, floor: float = 1e-7) -> GradCheckReport:
    """Compare analytic gradients with central differences, entry by entry.

    ``params`` must be the live arrays ``loss_fn`` reads; they are perturbed in
    place and restored. Relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    worst, worst_name, count = 0.0, None, 0
    for name, p in params.items():
        a = np.asarray(analytic[name])
        flat = p.reshape(-1)
        a_flat = a.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = loss_fn()
            flat[k] = orig - h
            down = loss_fn()
            flat[k] = orig
            num = (up - down) / (2.0 * h)
            denom = max(abs(a_flat[k]), abs(num), floor)
            err = abs(a_flat[k] - num) / denom
            count += 1
            if not np.isfinite(err) or err > worst:
                worst, worst_name = (err if np.isfinite(err) else np.inf), name
    return GradCheckReport(float(worst), worst_name, count, bool(worst <= tolerance))
