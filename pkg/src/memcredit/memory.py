"""Bounded FIFO episodic store and its cosine-attention read head."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DimensionError, EmptyMemoryError, ParameterError
from .nn import softmax

N_CLASSES = 10


@dataclass
class MemorySlot:
    embedding: np.ndarray  # (d_e,)
    label: int
    write_step: int
    x: Optional[np.ndarray] = None  # observation, stored by baseline / oracle
    h: Optional[np.ndarray] = None  # encoder hidden activation, baseline only


class EpisodicMemory:
    """Ring buffer of at most ``capacity`` slots, oldest evicted first.

    Contents are held column-wise in preallocated arrays so the read head can
    work on the whole memory at once. Every accessor returns slots in FIFO
    order (oldest first).
    """

    def __init__(self, capacity: int, embed_dim: int, *, store_x: bool = False,
                 store_h: bool = False, obs_dim: int = 784, hidden_dim: int = 256):
        if capacity < 1:
            raise ParameterError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.embed_dim = embed_dim
        self.store_x = store_x
        self.store_h = store_h
        self._e = np.zeros((embed_dim, capacity))
        self._labels = np.zeros(capacity, dtype=np.int64)
        self._steps = np.zeros(capacity, dtype=np.int64)
        self._x = np.zeros((obs_dim, capacity)) if store_x else None
        self._h = np.zeros((hidden_dim, capacity)) if store_h else None
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _order(self) -> np.ndarray:
        return (self._start + np.arange(self._size)) % self.capacity

    def _slot_at(self, j: int) -> MemorySlot:
        return MemorySlot(
            embedding=self._e[:, j].copy(),
            label=int(self._labels[j]),
            write_step=int(self._steps[j]),
            x=None if self._x is None else self._x[:, j].copy(),
            h=None if self._h is None else self._h[:, j].copy(),
        )

    @property
    def slots(self) -> list[MemorySlot]:
        return [self._slot_at(j) for j in self._order()]

    @property
    def embeddings(self) -> np.ndarray:
        """Stored embeddings, ``(d_e, n)``."""
        return self._e[:, self._order()]

    @property
    def labels(self) -> np.ndarray:
        return self._labels[self._order()]

    @property
    def write_steps(self) -> np.ndarray:
        return self._steps[self._order()]

    @property
    def observations(self) -> Optional[np.ndarray]:
        return None if self._x is None else self._x[:, self._order()]

    @property
    def hiddens(self) -> Optional[np.ndarray]:
        return None if self._h is None else self._h[:, self._order()]

    def write(self, slot: MemorySlot) -> Optional[MemorySlot]:
        e = np.asarray(slot.embedding, dtype=np.float64).reshape(-1)
        if e.shape[0] != self.embed_dim:
            raise DimensionError(f"embedding length {e.shape[0]} != memory width {self.embed_dim}")
        if not np.all(np.isfinite(e)):
            raise ParameterError("refusing to store a non-finite embedding")
        if not np.linalg.norm(e) > 0:
            raise ParameterError("refusing to store a zero-norm embedding")
        if self._size and slot.write_step <= self._steps[(self._start + self._size - 1) % self.capacity]:
            raise ParameterError(f"write_step {slot.write_step} is not newer than the last slot")
        if self.store_x and slot.x is None:
            raise ParameterError("this memory stores observations but the slot has none")
        if self.store_h and slot.h is None:
            raise ParameterError("this memory stores hidden activations but the slot has none")

        evicted = None
        if self._size == self.capacity:
            j = self._start
            evicted = self._slot_at(j)
            self._start = (self._start + 1) % self.capacity
        else:
            j = (self._start + self._size) % self.capacity
            self._size += 1
        self._e[:, j] = e
        self._labels[j] = slot.label
        self._steps[j] = slot.write_step
        if self._x is not None:
            self._x[:, j] = np.asarray(slot.x).reshape(-1)
        if self._h is not None:
            self._h[:, j] = np.asarray(slot.h).reshape(-1)
        return evicted

    def copy(self) -> "EpisodicMemory":
        other = EpisodicMemory.__new__(EpisodicMemory)
        other.__dict__.update(self.__dict__)
        for name in ("_e", "_labels", "_steps", "_x", "_h"):
            arr = getattr(self, name)
            setattr(other, name, None if arr is None else arr.copy())
        return other

    def equals(self, other: "EpisodicMemory") -> bool:
        if len(self) != len(other):
            return False
        pairs = [
            (self.embeddings, other.embeddings),
            (self.labels, other.labels),
            (self.write_steps, other.write_steps),
        ]
        if self.store_x or other.store_x:
            pairs.append((self.observations, other.observations))
        if self.store_h or other.store_h:
            pairs.append((self.hiddens, other.hiddens))
        return all(a is not None and b is not None and np.array_equal(a, b) for a, b in pairs)

    def dump(self, path, binary: bool = False) -> None:
        """Write ``(write_step, label, embedding...)`` rows, oldest first.

        Text form is CSV with a header. Binary form is little-endian: a header
        of two uint32 (rows, d_e), then per row int64 write_step, int64 label
        and d_e float64 values.
        """
        path = Path(path)
        steps, labels, e = self.write_steps, self.labels, self.embeddings
        if binary:
            with open(path, "wb") as fh:
                fh.write(struct.pack("<II", len(self), self.embed_dim))
                for k in range(len(self)):
                    fh.write(struct.pack("<qq", steps[k], labels[k]))
                    fh.write(e[:, k].astype("<f8").tobytes())
            return
        cols = ["write_step", "label"] + [f"e{i}" for i in range(self.embed_dim)]
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for k in range(len(self)):
                vals = [str(steps[k]), str(labels[k])] + [repr(float(v)) for v in e[:, k]]
                fh.write(",".join(vals) + "\n")


def load_dump(path, binary: bool = False):
    """Read a snapshot written by :meth:`EpisodicMemory.dump`.

    Returns ``(write_steps, labels, embeddings)`` with embeddings ``(d_e, n)``.
    """
    path = Path(path)
    if binary:
        raw = path.read_bytes()
        n, d = struct.unpack_from("<II", raw, 0)
        row = np.dtype([("step", "<i8"), ("label", "<i8"), ("e", "<f8", (d,))])
        rec = np.frombuffer(raw, dtype=row, count=n, offset=8)
        return rec["step"].copy(), rec["label"].copy(), rec["e"].T.copy()
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0].astype(np.int64), data[:, 1].astype(np.int64), data[:, 2:].T.copy()


def write(mem: EpisodicMemory, slot: MemorySlot) -> Optional[MemorySlot]:
    """Append ``slot``; return the evicted oldest slot if capacity was exceeded."""
    return mem.write(slot)


def cosine(q, e) -> float:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    e = np.asarray(e, dtype=np.float64).reshape(-1)
    if q.shape != e.shape:
        raise DimensionError(f"cosine of vectors with lengths {q.shape[0]} and {e.shape[0]}")
    nq, ne = np.linalg.norm(q), np.linalg.norm(e)
    if nq == 0 or ne == 0:
        raise ParameterError("cosine similarity with a zero vector")
    return float(np.clip(q @ e / (nq * ne), -1.0, 1.0))


@dataclass
class ReadResult:
    s: np.ndarray  # similarities, (n,)
    w: np.ndarray  # attention weights, (n,)
    p: np.ndarray  # class distribution, (N_CLASSES,)
    tau: float
    q_norm: float
    e_norms: np.ndarray


def _contents(mem: EpisodicMemory, embeddings: Optional[np.ndarray]):
    if len(mem) == 0:
        raise EmptyMemoryError("read from an empty episodic memory")
    E = mem.embeddings if embeddings is None else embeddings
    if E.shape != (mem.embed_dim, len(mem)):
        raise DimensionError(f"embeddings {E.shape} do not match memory ({mem.embed_dim}, {len(mem)})")
    return E, mem.labels


def read(mem: EpisodicMemory, q, tau: float = 1.0,
         embeddings: Optional[np.ndarray] = None) -> ReadResult:
    """Classify query ``q`` against the memory.

    ``embeddings`` substitutes different vectors for the stored ones (labels
    still come from the memory); reinstatement uses this to read through
    recomputed embeddings.
    """
    E, labels = _contents(mem, embeddings)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != E.shape[0]:
        raise DimensionError(f"query length {q.shape[0]} != embedding width {E.shape[0]}")
    q_norm = float(np.linalg.norm(q))
    if q_norm == 0:
        raise ParameterError("query embedding has zero norm")
    e_norms = np.linalg.norm(E, axis=0)
    if np.any(e_norms == 0):
        raise ParameterError("memory contains a zero-norm embedding")
    s = (q @ E) / (q_norm * e_norms)
    w = softmax(s, tau)
    p = np.bincount(labels, weights=w, minlength=N_CLASSES)
    return ReadResult(s, w, p, tau, q_norm, e_norms)


def _read_backward_full(mem: EpisodicMemory, q, r: ReadResult, g_p,
                        embeddings: Optional[np.ndarray] = None):
    E, labels = _contents(mem, embeddings)
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    g_p = np.asarray(g_p, dtype=np.float64)
    if r.s.shape[0] != E.shape[1] or g_p.shape != r.p.shape:
        raise ParameterError("read result does not belong to this memory / query")
    g_w = g_p[labels]
    g_s = r.w * (g_w - r.w @ g_w) / r.tau
    coef = g_s / (r.q_norm * r.e_norms)
    g_E = np.outer(q, coef) - E * (g_s * r.s / r.e_norms ** 2)
    g_q = (E / r.e_norms) @ g_s / r.q_norm - q * (g_s @ r.s) / r.q_norm ** 2
    return g_E, g_q


def read_backward(mem: EpisodicMemory, q, r: ReadResult, g_p,
                  embeddings: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-slot gradients ``(d_e, n)`` of the loss w.r.t. the read embeddings.

    The query gradient is computed alongside but dropped: the current
    example's own embedding never receives credit from its classification.
    """
    g_E, _ = _read_backward_full(mem, q, r, g_p, embeddings)
    return g_E


def read_batch(mem: EpisodicMemory, Q: np.ndarray, tau: float = 1.0,
               embeddings: Optional[np.ndarray] = None) -> np.ndarray:
    """Class distributions ``(N_CLASSES, m)`` for a batch of queries ``(d_e, m)``."""
    E, labels = _contents(mem, embeddings)
    qn = np.linalg.norm(Q, axis=0)
    en = np.linalg.norm(E, axis=0)
    if np.any(qn == 0) or np.any(en == 0):
        raise ParameterError("zero-norm vector in batched read")
    S = (E / en).T @ (Q / qn)
    W = softmax(S, tau, axis=0)
    onehot = np.zeros((N_CLASSES, E.shape[1]))
    onehot[labels, np.arange(E.shape[1])] = 1.0
    return onehot @ W
