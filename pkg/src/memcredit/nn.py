"""Small deterministic numeric kernel: dense layers, losses, ADAM, init.

Everything is float64 and column-major in the batch sense: a batch of ``n``
vectors of length ``d`` is a ``(d, n)`` array.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DivergenceError, ParameterError

ACTIVATIONS = ("linear", "relu", "sigmoid")

LOG_CLAMP = 1e-12


class Rng:
    """Seeded random source backed by numpy's PCG64 bit generator.

    PCG64 is a fixed, documented algorithm, so a given seed yields the same
    stream on every platform. Only ``random``, ``integers`` and
    ``permutation`` draws are used by the package.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return low + (high - low) * self._gen.random(shape)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, sorted."""
        return np.sort(self._gen.choice(n, size=k, replace=False))

    def child(self, key: int) -> "Rng":
        """Independent generator derived from this seed and ``key``."""
        seq = np.random.SeedSequence([self.seed, int(key)])
        return Rng(int(seq.generate_state(1, dtype=np.uint64)[0]))


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out, 1)
    activation: str = "linear"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weights.shape[0], 1):
            raise DimensionError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.bias.copy(), self.activation)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), 0)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "linear":
        return pre
    if activation == "relu":
        return np.maximum(pre, 0.0)
    return expit(pre)


def _activation_grad(pre: np.ndarray, activation: str, g_act: np.ndarray) -> np.ndarray:
    if activation == "linear":
        return g_act
    if activation == "relu":
        return g_act * (pre > 0.0)
    s = expit(pre)
    return g_act * s * (1.0 - s)


def dense_forward(layer: DenseLayer, x: np.ndarray):
    """Return ``(pre, act)`` for a batch ``x`` of shape ``(in, n)``."""
    if x.ndim != 2 or x.shape[0] != layer.in_dim:
        raise DimensionError(
            f"input shape {x.shape} incompatible with weights {layer.weights.shape}"
        )
    pre = layer.weights @ x + layer.bias
    return pre, _activate(pre, layer.activation)


def dense_backward(layer: DenseLayer, x: np.ndarray, pre: np.ndarray,
                   g_act: np.ndarray, need_gx: bool = True):
    """Gradients ``(gW, gb, gx)`` given the upstream gradient ``g_act``.

    ``need_gx=False`` skips the input gradient (returned as ``None``); the
    encoder never needs it and it is the most expensive product for 784-wide
    inputs.
    """
    if pre.shape != g_act.shape or pre.shape[0] != layer.out_dim:
        raise DimensionError(
            f"pre-activation {pre.shape} / upstream gradient {g_act.shape} "
            f"incompatible with weights {layer.weights.shape}"
        )
    if x.shape[0] != layer.in_dim or x.shape[1] != pre.shape[1]:
        raise DimensionError(
            f"input shape {x.shape} incompatible with weights {layer.weights.shape} "
            f"and batch of {pre.shape[1]}"
        )
    g_pre = _activation_grad(pre, layer.activation, g_act)
    gW = g_pre @ x.T
    gb = g_pre.sum(axis=1, keepdims=True)
    gx = layer.weights.T @ g_pre if need_gx else None
    return gW, gb, gx


def softmax(s, tau: float = 1.0, axis: int = 0) -> np.ndarray:
    """Temperature softmax with max-subtraction.

    Works on a 1-D sequence or column-wise (``axis=0``) on a 2-D array.
    """
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    z = np.asarray(s, dtype=np.float64) / tau
    if z.size == 0:
        raise ParameterError("softmax of an empty sequence")
    z = z - z.max(axis=axis, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=axis, keepdims=True)


def cross_entropy(p, y: int):
    """Negative log-likelihood of class ``y`` and its gradient w.r.t. ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= y < p.shape[0]:
        raise ParameterError(f"class id {y} out of range for {p.shape[0]} classes")
    py = max(p[y], LOG_CLAMP)
    g = np.zeros_like(p)
    g[y] = -1.0 / py
    return -np.log(py), g


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected ADAM update, applied in place.

    Returns ``(param, state)`` for convenience. A non-finite gradient raises
    :class:`DivergenceError` before anything is modified.
    """
    if grad.shape != param.shape:
        raise DimensionError(f"gradient {grad.shape} does not match parameter {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient passed to adam_step")
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * (grad * grad)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, state


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                     eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``.

    ``x`` is perturbed in place and restored, so ``f`` may close over it.
    """
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + eps
        fp = f(x)
        x[idx] = orig - eps
        fm = f(x)
        x[idx] = orig
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def init_params(rng: Rng, in_dim: int, out_dim: int, activation: str = "linear",
                scheme: str = "glorot_uniform") -> DenseLayer:
    """Build a layer with uniform(-a, a) weights, a = sqrt(6 / (in + out)).

    ``scheme="zeros"`` gives all-zero weights (used for the synthetic-gradient
    output layer).
    """
    if in_dim < 1 or out_dim < 1:
        raise ParameterError(f"layer dims must be >= 1, got {in_dim}->{out_dim}")
    if scheme == "glorot_uniform":
        a = np.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-a, a, (out_dim, in_dim))
    elif scheme == "zeros":
        w = np.zeros((out_dim, in_dim))
    else:
        raise ParameterError(f"unknown init scheme {scheme!r}")
    return DenseLayer(w, np.zeros((out_dim, 1)), activation)


@dataclass
class NetGrads:
    """Gradients for a two-layer net, ordered (W1, b1, W2, b2)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def arrays(self):
        return (self.W1, self.b1, self.W2, self.b2)

    def __add__(self, other: "NetGrads") -> "NetGrads":
        return NetGrads(*(a + b for a, b in zip(self.arrays(), other.arrays())))

    def scaled(self, c: float) -> "NetGrads":
        return NetGrads(*(c * a for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def max_abs_diff(self, other: "NetGrads") -> float:
        return max(float(np.max(np.abs(a - b))) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardCache:
    x: np.ndarray
    pre1: np.ndarray
    h: np.ndarray
    pre2: np.ndarray
    out: np.ndarray


@dataclass
class TwoLayerNet:
    """One hidden layer plus an output layer, each with its own ADAM states."""

    layer1: DenseLayer
    layer2: DenseLayer
    lr: float = 1e-4
    adam: list = field(default_factory=list)

    def __post_init__(self):
        if self.layer1.out_dim != self.layer2.in_dim:
            raise DimensionError(
                f"layer1 outputs {self.layer1.out_dim} but layer2 expects {self.layer2.in_dim}"
            )
        if not self.adam:
            self.adam = [AdamState.like(p) for p in self.params()]

    def params(self):
        return (self.layer1.weights, self.layer1.bias, self.layer2.weights, self.layer2.bias)

    def forward(self, x: np.ndarray) -> ForwardCache:
        pre1, h = dense_forward(self.layer1, x)
        pre2, out = dense_forward(self.layer2, h)
        return ForwardCache(x, pre1, h, pre2, out)

    def backward(self, cache: ForwardCache, g_out: np.ndarray,
                 need_gx: bool = False):
        """Return ``(NetGrads, gx)``; ``gx`` is ``None`` unless requested."""
        gW2, gb2, gh = dense_backward(self.layer2, cache.h, cache.pre2, g_out)
        gW1, gb1, gx = dense_backward(self.layer1, cache.x, cache.pre1, gh, need_gx=need_gx)
        return NetGrads(gW1, gb1, gW2, gb2), gx

    def apply(self, grads: NetGrads, lr: Optional[float] = None) -> None:
        """ADAM step on every parameter tensor.

        All gradients are checked before any parameter moves, so a divergence
        never leaves the net half-updated.
        """
        if not grads.is_finite():
            raise DivergenceError(f"non-finite gradient for {type(self).__name__}")
        lr = self.lr if lr is None else lr
        for p, g, s in zip(self.params(), grads.arrays(), self.adam):
            adam_step(p, g, s, lr)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def copy(self):
        return type(self)(self.layer1.copy(), self.layer2.copy(), self.lr,
                          [s.copy() for s in self.adam])

    def equals(self, other: "TwoLayerNet") -> bool:
        """Bit-level equality of parameters and optimizer state."""
        same_params = all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))
        same_adam = all(
            a.t == b.t and np.array_equal(a.m, b.m) and np.array_equal(a.v, b.v)
            for a, b in zip(self.adam, other.adam)
        )
        return same_params and same_adam
