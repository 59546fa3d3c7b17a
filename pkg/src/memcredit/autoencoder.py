"""Decoder half of the reinstatement autoencoder.

The decoder maps embeddings back to pixel space. It is trained online on the
current example's reconstruction error and nothing else; the encoder is never
touched by this loss.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DimensionError
from .nn import Rng, TwoLayerNet, init_params


class DecoderParams(TwoLayerNet):
    """``d_e -> hidden (relu) -> obs_dim (sigmoid)``."""

    @classmethod
    def init(cls, rng: Rng, embed_dim: int, hidden: int = 256, obs_dim: int = 784,
             lr: float = 1e-4) -> "DecoderParams":
        return cls(init_params(rng, embed_dim, hidden, "relu"),
                   init_params(rng, hidden, obs_dim, "sigmoid"), lr)

    def reconstruct(self, mem, idx=None) -> np.ndarray:
        e = mem.embeddings
        return decode(self, e if idx is None else e[:, idx])


def decode(dec: DecoderParams, e: np.ndarray) -> np.ndarray:
    """Reconstruct observations ``(obs_dim, n)`` in ``[0, 1]`` from embeddings."""
    e = np.asarray(e, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] != dec.layer1.in_dim:
        raise DimensionError(f"embedding batch {e.shape} but decoder expects {dec.layer1.in_dim} rows")
    return dec.forward(e).out


def recon_loss_and_grads(dec: DecoderParams, e: np.ndarray, x: np.ndarray):
    e = np.asarray(e, dtype=np.float64).reshape(dec.layer1.in_dim, -1)
    x = np.asarray(x, dtype=np.float64).reshape(dec.layer2.out_dim, -1)
    cache = dec.forward(e)
    diff = cache.out - x
    loss = float(np.mean(diff * diff))
    grads, _ = dec.backward(cache, 2.0 * diff / diff.size)
    return loss, grads


def recon_step(dec: DecoderParams, e: np.ndarray, x: np.ndarray) -> float:
    """One ADAM step on the decoder's reconstruction MSE; returns the pre-update loss.

    ``e`` is treated as a constant input, so no gradient exists for whatever
    produced it.
    """
    loss, grads = recon_loss_and_grads(dec, e, x)
    dec.apply(grads)
    return loss


def write_pgm(path, image: np.ndarray, side: int = 28) -> None:
    """Save a ``[0, 1]`` image vector as a binary (P5) PGM file."""
    pixels = np.clip(np.rint(np.asarray(image).reshape(side, side) * 255.0), 0, 255).astype(np.uint8)
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{side} {side}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
