from pathlib import Path

import numpy as np
import pytest

from memcredit.autoencoder import DecoderParams
from memcredit.credit import EncoderParams, SynthNetParams, encode
from memcredit.memory import EpisodicMemory, MemorySlot
from memcredit.nn import Rng

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist5k"
DATA_DIR = Path(__file__).resolve().parent / "data"


def rel_err(a, b):
    """||a - b|| / max(||a||, ||b||), falling back to the absolute error near zero."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    diff = np.linalg.norm(a - b)
    return diff if scale < 1e-8 else diff / scale


class Tiny:
    """Small networks for gradient checks: obs 6, hidden 8, d_e 4."""

    obs = 6
    hidden = 8
    d_e = 4

    def __init__(self, seed):
        self.rng = Rng(seed)
        self.enc = EncoderParams.init(self.rng, self.d_e, self.hidden, self.obs, lr=1e-3)
        self.dec = DecoderParams.init(self.rng, self.d_e, self.hidden, self.obs, lr=1e-3)
        self.syn = SynthNetParams.init(self.rng, self.d_e, self.hidden, lr=1e-3)
        # nonzero biases exercise the bias paths and keep embeddings away from 0
        for net in (self.enc, self.dec):
            net.layer1.bias[:] = 0.1 * self.rng.normal(net.layer1.bias.shape)
            net.layer2.bias[:] = 0.1 * self.rng.normal(net.layer2.bias.shape)

    def memory(self, n, store=True, labels=None):
        """Memory of ``n`` slots written from random observations with the current encoder."""
        mem = EpisodicMemory(max(n, 1), self.d_e, store_x=store, store_h=store,
                             obs_dim=self.obs, hidden_dim=self.hidden)
        xs = self.rng.random((self.obs, n))
        for i in range(n):
            h, e = encode(self.enc, xs[:, i:i + 1])
            y = int(self.rng.integers(10)) if labels is None else labels[i]
            mem.write(MemorySlot(e[:, 0], y, i + 1,
                                 x=xs[:, i] if store else None, h=h[:, 0] if store else None))
        return mem


@pytest.fixture
def tiny():
    return Tiny(1234)


# one (criterion, passed, detail) entry per acceptance check, printed after the run
_VERDICTS = []


@pytest.fixture
def verdict():
    def record(criterion, ok, detail=""):
        ok = bool(ok)
        _VERDICTS.append((criterion, ok, detail))
        print(f"{'PASS' if ok else 'FAIL'} {criterion}: {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in _VERDICTS:
        first, *rest = str(detail).splitlines() or [""]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {criterion}: {first}")
        for line in rest:
            terminalreporter.write_line("    " + line)
