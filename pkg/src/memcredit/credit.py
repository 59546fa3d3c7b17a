"""Credit assignment from per-slot embedding gradients to encoder parameters.

Five mechanisms share one encoder backward pass and differ in where the
activations for that pass come from:

* ``baseline``: activations stored alongside each slot at write time.
* ``synthetic``: a learned model predicts the gradient at write time; true
  gradients only train that model.
* ``reinstate_exact``: stored embeddings are decoded and re-encoded, and the
  re-encoded embeddings are what the read head sees.
* ``reinstate_approx``: the read head sees stored embeddings, but their
  gradients are pushed through the re-encoded activations.
* ``oracle``: raw observations are stored and re-encoded directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, DivergenceError, MechanismContractError, ParameterError
from .memory import N_CLASSES, EpisodicMemory, ReadResult, read, read_backward
from .nn import NetGrads, Rng, TwoLayerNet, cross_entropy, init_params


class Mechanism(str, Enum):
    BASELINE = "baseline"
    SYNTHETIC = "synthetic"
    REINSTATE_EXACT = "reinstate_exact"
    REINSTATE_APPROX = "reinstate_approx"
    ORACLE = "oracle"


class EncoderParams(TwoLayerNet):
    """``obs_dim -> hidden (relu) -> d_e (linear)``."""

    @classmethod
    def init(cls, rng: Rng, embed_dim: int, hidden: int = 256, obs_dim: int = 784,
             lr: float = 1e-4) -> "EncoderParams":
        return cls(init_params(rng, obs_dim, hidden, "relu"),
                   init_params(rng, hidden, embed_dim, "linear"), lr)


class SynthNetParams(TwoLayerNet):
    """``d_e + 10 -> hidden (relu) -> d_e (linear)``; the output layer starts at zero."""

    @classmethod
    def init(cls, rng: Rng, embed_dim: int, hidden: int = 256,
             lr: float = 1e-4) -> "SynthNetParams":
        return cls(init_params(rng, embed_dim + N_CLASSES, hidden, "relu"),
                   init_params(rng, hidden, embed_dim, "linear", scheme="zeros"), lr)


class OracleDecoder:
    """Stands in for the decoder by returning each slot's stored observation."""

    def reconstruct(self, mem: EpisodicMemory, idx=None) -> np.ndarray:
        x = mem.observations
        if x is None:
            raise MechanismContractError("oracle reconstruction needs stored observations")
        return x if idx is None else x[:, idx]


def _as_columns(x, rows: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] != rows:
        raise DimensionError(f"expected {rows} rows, got array of shape {x.shape}")
    return x


def encode(enc: EncoderParams, x):
    """Return ``(h, e)`` for an observation batch ``(obs_dim, n)``."""
    cache = enc.forward(_as_columns(x, enc.layer1.in_dim))
    return cache.h, cache.out


def encoder_backward(enc: EncoderParams, x: np.ndarray, h: np.ndarray,
                     g_e: np.ndarray) -> NetGrads:
    """Encoder gradients from activations ``(x, h)`` and embedding gradients ``g_e``.

    Uses the encoder's current weights. The relu mask is read off ``h``
    (``h > 0`` exactly where the pre-activation is positive), so stored
    hidden activations are sufficient.
    """
    gW2 = g_e @ h.T
    gb2 = g_e.sum(axis=1, keepdims=True)
    g_pre1 = (enc.layer2.weights.T @ g_e) * (h > 0.0)
    gW1 = g_pre1 @ x.T
    gb1 = g_pre1.sum(axis=1, keepdims=True)
    return NetGrads(gW1, gb1, gW2, gb2)


def assign_baseline(enc: EncoderParams, mem: EpisodicMemory, g_e: np.ndarray) -> NetGrads:
    """Backprop stored-embedding gradients through activations stored at write time."""
    x, h = mem.observations, mem.hiddens
    if x is None or h is None:
        raise MechanismContractError("baseline credit needs stored observations and hidden activations")
    if g_e.shape != (mem.embed_dim, len(mem)):
        raise DimensionError(f"slot gradients {g_e.shape} do not match memory ({mem.embed_dim}, {len(mem)})")
    return encoder_backward(enc, x, h, g_e)


def _synth_input(e: np.ndarray, y) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    onehot = np.zeros((N_CLASSES, y.shape[0]))
    onehot[y, np.arange(y.shape[0])] = 1.0
    return np.vstack([e, onehot])


def synth_predict(syn: SynthNetParams, e, y, scale: float = 1.0) -> np.ndarray:
    """Predicted gradient for embedding(s) ``e`` carrying label(s) ``y``.

    The net is trained on targets multiplied by ``scale``; the prediction is
    divided by it, so the result is in true-gradient units.
    """
    e = _as_columns(e, syn.layer2.out_dim)
    return syn.forward(_synth_input(e, y)).out / scale


def synth_apply_at_write(enc: EncoderParams, x, h, e, g_hat) -> NetGrads:
    """Apply a synthetic gradient to the encoder through the fresh activations.

    ``e`` only pins the shape contract; the linear output layer makes the
    backward pass independent of it.
    """
    x = _as_columns(x, enc.layer1.in_dim)
    h = _as_columns(h, enc.layer1.out_dim)
    g_hat = _as_columns(g_hat, enc.layer2.out_dim)
    if np.asarray(e).size != g_hat.size:
        raise DimensionError("synthetic gradient does not match embedding shape")
    if not np.all(np.isfinite(g_hat)):
        raise DivergenceError("non-finite synthetic gradient")
    grads = encoder_backward(enc, x, h, g_hat)
    enc.apply(grads)
    return grads


def synth_loss_and_grads(syn: SynthNetParams, e: np.ndarray, y, g_true: np.ndarray,
                         scale: float = 1.0):
    cache = syn.forward(_synth_input(e, y))
    diff = cache.out - g_true * scale
    mse = float(np.mean(diff * diff))
    grads, _ = syn.backward(cache, 2.0 * diff / diff.size)
    return mse, grads


def synth_train(syn: SynthNetParams, e: np.ndarray, y, g_true: np.ndarray,
                scale: float = 1.0) -> float:
    """One supervised ADAM step of the synthetic net toward ``scale * g_true``.

    Returns the MSE before the update.
    """
    if g_true.shape[1] == 0:
        raise ParameterError("synth_train needs at least one target")
    mse, grads = synth_loss_and_grads(syn, e, y, g_true, scale)
    syn.apply(grads)
    return mse


@dataclass
class Reinstatement:
    x_hat: np.ndarray  # (obs_dim, n)
    h: np.ndarray  # (hidden, n)
    e: np.ndarray  # (d_e, n)


def reinstate_forward(mem: EpisodicMemory, dec, enc: EncoderParams,
                      subset: Optional[Sequence[int]] = None) -> Reinstatement:
    """Decode stored embeddings and re-run the encoder on the reconstructions.

    ``dec`` is anything with ``reconstruct(mem)``: a trained
    :class:`~memcredit.autoencoder.DecoderParams` or :class:`OracleDecoder`.
    ``subset`` limits the work to those slot positions.
    """
    if len(mem) == 0:
        raise ParameterError("cannot reinstate an empty memory")
    idx = None if subset is None else np.asarray(subset, dtype=np.int64)
    x_hat = dec.reconstruct(mem, idx)
    h, e = encode(enc, x_hat)
    return Reinstatement(x_hat, h, e)


@dataclass
class CreditResult:
    loss: float
    grads: NetGrads
    read: ReadResult
    g_e: np.ndarray
    embeddings: np.ndarray  # what the read head saw


def assign_reinstate_exact(mem: EpisodicMemory, dec, enc: EncoderParams, q, y: int,
                           tau: float = 1.0) -> CreditResult:
    """Classify through re-encoded reconstructions and return exact encoder gradients.

    ``q`` is a constant; gradients stop at the reconstructions, so neither the
    query path nor the decoder receives anything.
    """
    r_state = reinstate_forward(mem, dec, enc)
    r = read(mem, q, tau, embeddings=r_state.e)
    loss, g_p = cross_entropy(r.p, y)
    g_e = read_backward(mem, q, r, g_p, embeddings=r_state.e)
    grads = encoder_backward(enc, r_state.x_hat, r_state.h, g_e)
    return CreditResult(float(loss), grads, r, g_e, r_state.e)


def assign_reinstate_approx(mem: EpisodicMemory, dec, enc: EncoderParams, g_e: np.ndarray,
                            subset: Optional[Sequence[int]] = None,
                            scale: float = 1.0) -> NetGrads:
    """Push stored-embedding gradients through re-encoded activations.

    ``subset`` restricts credit to those slot positions (FIFO order);
    ``scale`` multiplies the result (``1 / fraction`` keeps a random subset
    unbiased).
    """
    n = len(mem)
    if g_e.shape != (mem.embed_dim, n):
        raise DimensionError(f"slot gradients {g_e.shape} do not match memory ({mem.embed_dim}, {n})")
    if subset is None:
        idx = np.arange(n)
    else:
        idx = np.asarray(subset, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ParameterError(f"subset index out of range for memory of {n} slots")
    r_state = reinstate_forward(mem, dec, enc, subset=idx)
    grads = encoder_backward(enc, r_state.x_hat, r_state.h, g_e[:, idx])
    return grads if scale == 1.0 else grads.scaled(scale)
