"""Minimal dense-network core: float64 layers, analytic gradients, Adam.

Everything is deliberately small and explicit. Arrays are numpy float64
throughout; forward and backward passes are plain functions so they can be
checked against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError
from .rng import Rng

ACTIVATION_NAMES = ("identity", "relu", "softplus", "sigmoid", "tanh")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z):
    # log(1 + e^z) in overflow-safe form
    return np.logaddexp(0.0, np.asarray(z, dtype=np.float64))


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "softplus":
        return softplus(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {name!r}")


def activate_grad(name: str, z: np.ndarray) -> np.ndarray:
    """d activation / d z, evaluated at pre-activation z.

    ReLU uses subgradient 0 at exactly z == 0 so backward passes are
    deterministic.
    """
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "softplus":
        return sigmoid(z)
    if name == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseLayer:
    """Fully connected layer y = act(W x + b), weight shaped (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


def make_dense(rng: Rng, in_dim: int, out_dim: int, activation: str = "identity") -> DenseLayer:
    """Uniform init in +-sqrt(6/(fan_in+fan_out)), zero bias."""
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    w = rng.uniforms(out_dim * in_dim, -limit, limit).reshape(out_dim, in_dim)
    b = np.zeros(out_dim, dtype=np.float64)
    return DenseLayer(w, b, activation)


def dense_forward(layer: DenseLayer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != layer.in_dim:
        raise DimensionError(
            f"dense_forward expected input of length {layer.in_dim}, got shape {x.shape}"
        )
    return activate(layer.activation, layer.weight @ x + layer.bias)


def dense_backward(layer: DenseLayer, x: np.ndarray, grad_out: np.ndarray):
    """Gradients of act(Wx + b) wrt x, W, b given upstream grad_out."""
    x = np.asarray(x, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != layer.in_dim:
        raise DimensionError(
            f"dense_backward expected input of length {layer.in_dim}, got shape {x.shape}"
        )
    if grad_out.shape != (layer.out_dim,):
        raise DimensionError(
            f"dense_backward expected grad of length {layer.out_dim}, got shape {grad_out.shape}"
        )
    z = layer.weight @ x + layer.bias
    gz = grad_out * activate_grad(layer.activation, z)
    grad_x = layer.weight.T @ gz
    grad_w = np.outer(gz, x)
    grad_b = gz
    return grad_x, grad_w, grad_b


@dataclass
class LayerNormParams:
    gain: np.ndarray
    shift: np.ndarray
    epsilon: float = 1e-5


def make_layernorm(dim: int, epsilon: float = 1e-5) -> LayerNormParams:
    return LayerNormParams(np.ones(dim, dtype=np.float64), np.zeros(dim, dtype=np.float64), epsilon)


def _check_layernorm_input(p: LayerNormParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != p.gain.shape[0]:
        raise DimensionError(
            f"layernorm expected input of length {p.gain.shape[0]}, got shape {x.shape}"
        )
    if x.shape[0] < 2:
        raise DimensionError("layernorm needs at least 2 elements")
    return x


def layernorm_forward(p: LayerNormParams, x: np.ndarray) -> np.ndarray:
    """(x - mean) / sqrt(pop_var + eps), scaled by gain, shifted by shift."""
    x = _check_layernorm_input(p, x)
    mu = x.mean()
    var = np.mean((x - mu) ** 2)
    xhat = (x - mu) / np.sqrt(var + p.epsilon)
    return p.gain * xhat + p.shift


def layernorm_backward(p: LayerNormParams, x: np.ndarray, grad_out: np.ndarray):
    """Gradients wrt x, gain, shift."""
    x = _check_layernorm_input(p, x)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != x.shape:
        raise DimensionError("layernorm grad shape mismatch")
    n = x.shape[0]
    mu = x.mean()
    xc = x - mu
    var = np.mean(xc * xc)
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * inv
    g = grad_out * p.gain
    grad_x = (inv / n) * (n * g - g.sum() - xhat * (g * xhat).sum())
    grad_gain = grad_out * xhat
    grad_shift = grad_out.copy()
    return grad_x, grad_gain, grad_shift


@dataclass
class AdamState:
    """Bias-corrected Adam over one flat parameter vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def for_params(cls, n_params: int, lr: float, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if lr < 0:
            raise ValueError("learning rate must be >= 0")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ValueError("betas must lie in (0, 1)")
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=np.zeros(n_params, dtype=np.float64),
                   v=np.zeros(n_params, dtype=np.float64))


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One in-place Adam update. Raises on non-finite gradients."""
    if params.shape != state.m.shape or grads.shape != state.m.shape:
        raise DimensionError(
            f"adam_step expected vectors of shape {state.m.shape}, "
            f"got params {params.shape} and grads {grads.shape}"
        )
    finite = np.isfinite(grads)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise NumericError(f"non-finite gradient at parameter index {bad}")
    state.step += 1
    t = state.step
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


class ParameterBlock:
    """All trainable arrays of a model packed into one flat float64 vector.

    Construction happens in two phases: submodules are built with standalone
    arrays and registered here; ``finalize`` then moves every array into a
    single flat buffer and swaps the owners' attributes for views into it.
    Gradient accumulation uses a mirrored flat buffer with matching views.
    """

    def __init__(self):
        self._entries: list[tuple[str, object, str]] = []
        self._finalized = False
        self.names: list[str] = []
        self.values = np.zeros(0, dtype=np.float64)
        self.grads = np.zeros(0, dtype=np.float64)
        self._value_views: dict[str, np.ndarray] = {}
        self._grad_views: dict[str, np.ndarray] = {}
        self._slices: dict[str, tuple[int, int, tuple[int, ...]]] = {}

    def register(self, name: str, owner: object, attr: str) -> None:
        if self._finalized:
            raise RuntimeError("cannot register parameters after finalize()")
        if any(name == n for n, _, _ in self._entries):
            raise ValueError(f"duplicate parameter name {name!r}")
        self._entries.append((name, owner, attr))

    def register_dense(self, name: str, layer: DenseLayer) -> None:
        self.register(f"{name}.weight", layer, "weight")
        self.register(f"{name}.bias", layer, "bias")

    def register_layernorm(self, name: str, p: LayerNormParams) -> None:
        self.register(f"{name}.gain", p, "gain")
        self.register(f"{name}.shift", p, "shift")

    def finalize(self) -> None:
        total = sum(getattr(owner, attr).size for _, owner, attr in self._entries)
        self.values = np.empty(total, dtype=np.float64)
        self.grads = np.zeros(total, dtype=np.float64)
        offset = 0
        for name, owner, attr in self._entries:
            arr = np.asarray(getattr(owner, attr), dtype=np.float64)
            lo, hi = offset, offset + arr.size
            view = self.values[lo:hi].reshape(arr.shape)
            view[...] = arr
            setattr(owner, attr, view)
            self._value_views[name] = view
            self._grad_views[name] = self.grads[lo:hi].reshape(arr.shape)
            self._slices[name] = (lo, hi, arr.shape)
            self.names.append(name)
            offset = hi
        self._finalized = True

    def value(self, name: str) -> np.ndarray:
        return self._value_views[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grad_views[name]

    def zero_grads(self) -> None:
        self.grads[:] = 0.0

    def named_values(self) -> list[tuple[str, np.ndarray]]:
        return [(name, self._value_views[name]) for name in self.names]

    def load_named(self, arrays: dict[str, np.ndarray]) -> None:
        """Overwrite parameter values from a name -> array mapping."""
        missing = [n for n in self.names if n not in arrays]
        if missing:
            raise KeyError(f"missing parameter arrays: {missing[:3]}")
        for name in self.names:
            view = self._value_views[name]
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != view.shape:
                raise DimensionError(
                    f"parameter {name!r} has shape {view.shape}, file has {arr.shape}"
                )
            view[...] = arr
