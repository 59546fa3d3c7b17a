"""Experiment orchestration: training loop, evaluation, aggregation and outputs."""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .autoencoder import DecoderParams, recon_step
from .credit import (EncoderParams, Mechanism, OracleDecoder, SynthNetParams,
                     assign_baseline, assign_reinstate_approx, assign_reinstate_exact,
                     encode, reinstate_forward, synth_apply_at_write, synth_predict,
                     synth_train)
from .data import Dataset, load_mnist, split, stream, synthetic_blobs
from .errors import ConfigError, DivergenceError, ParameterError
from .memory import EpisodicMemory, MemorySlot, read, read_backward, read_batch
from .nn import Rng, cross_entropy

log = logging.getLogger(__name__)

CSV_COLUMNS = ("run", "step", "mechanism", "train_loss", "val_accuracy",
               "recon_loss", "synth_mse", "diverged")


@dataclass
class TrainConfig:
    mechanism: str = "reinstate_exact"
    capacity: int = 5000
    embed_dim: int = 64
    hidden: int = 256
    tau: float = 1.0
    lr_encoder: float = 1e-4
    lr_decoder: float = 1e-4
    lr_synth: float = 1e-4
    steps: int = 5000
    eval_every: int = 250
    eval_size: int = 1000
    runs: int = 10
    seed: int = 0
    subset_fraction: float = 1.0
    synth_scale: Optional[float] = None  # None means "use capacity"
    synth_batch: int = 256
    synth_true_grads: bool = False
    decoder_warmup: int = 0
    oracle_inference: str = "fresh"
    data_dir: Optional[str] = None  # None selects the synthetic blob dataset
    blob_per_class: int = 300
    blob_spread: float = 0.1
    out: Optional[str] = None
    svg: Optional[str] = None

    def validate(self) -> "TrainConfig":
        try:
            Mechanism(self.mechanism)
        except ValueError:
            raise ConfigError(f"unknown mechanism {self.mechanism!r}; "
                              f"choose from {[m.value for m in Mechanism]}") from None
        for name in ("capacity", "embed_dim", "hidden", "steps", "eval_every", "eval_size",
                     "runs", "synth_batch", "blob_per_class"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("tau", "lr_encoder", "lr_decoder", "lr_synth"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)}")
        if not 0 < self.subset_fraction <= 1:
            raise ConfigError(f"subset_fraction must lie in (0, 1], got {self.subset_fraction}")
        if self.synth_scale is not None and not self.synth_scale > 0:
            raise ConfigError("synth_scale must be > 0")
        if self.decoder_warmup < 0 or self.blob_spread < 0:
            raise ConfigError("decoder_warmup and blob_spread must be >= 0")
        if self.oracle_inference not in ("fresh", "stored"):
            raise ConfigError("oracle_inference must be 'fresh' or 'stored'")
        return self

    @property
    def mech(self) -> Mechanism:
        return Mechanism(self.mechanism)

    @property
    def effective_synth_scale(self) -> float:
        return float(self.capacity if self.synth_scale is None else self.synth_scale)

    def with_overrides(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        """Parse ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
            key, raw = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, types[key], raw)
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(key: str, type_name, raw: str):
    type_name = str(type_name)
    if raw.lower() in ("", "none") and "Optional" in type_name:
        return None
    try:
        if "bool" in type_name:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in type_name:
            return int(raw)
        if "float" in type_name:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


DESK_PROFILE = dict(capacity=500, steps=5000, runs=3)
FULL_PROFILE = dict(capacity=5000, runs=10)
# Reduced MNIST setting for comparing all five mechanisms over 10 seeds on one core.
# About 20 minutes in total.
MNIST_PROFILE = dict(capacity=500, steps=2000, eval_every=500, eval_size=500, runs=10)


@dataclass
class MetricsRecord:
    run: int
    step: int
    mechanism: str
    train_loss: Optional[float]
    val_accuracy: Optional[float]
    recon_loss: Optional[float]
    synth_mse: Optional[float]
    diverged: bool = False


@dataclass
class StepMetrics:
    loss: Optional[float]
    recon_loss: float
    synth_mse: Optional[float]


@dataclass
class TrainState:
    cfg: TrainConfig
    enc: EncoderParams
    dec: DecoderParams
    mem: EpisodicMemory
    rng: Rng
    syn: Optional[SynthNetParams] = None
    step: int = 0

    def copy(self) -> "TrainState":
        return TrainState(self.cfg, self.enc.copy(), self.dec.copy(), self.mem.copy(),
                          _copy_rng(self.rng), None if self.syn is None else self.syn.copy(),
                          self.step)

    def equals(self, other: "TrainState") -> bool:
        same_syn = (self.syn is None and other.syn is None) or (
            self.syn is not None and other.syn is not None and self.syn.equals(other.syn))
        return (self.step == other.step and self.enc.equals(other.enc)
                and self.dec.equals(other.dec) and self.mem.equals(other.mem) and same_syn
                and self.rng._gen.bit_generator.state == other.rng._gen.bit_generator.state)


def _copy_rng(rng: Rng) -> Rng:
    other = Rng(rng.seed)
    other._gen.bit_generator.state = rng._gen.bit_generator.state
    return other


def init_state(cfg: TrainConfig, seed: int, obs_dim: int = 784) -> TrainState:
    """Fresh networks and an empty memory, all derived from ``seed``."""
    cfg.validate()
    root = Rng(seed)
    init_rng = root.child(0)
    mech = cfg.mech
    enc = EncoderParams.init(init_rng, cfg.embed_dim, cfg.hidden, obs_dim, cfg.lr_encoder)
    dec = DecoderParams.init(init_rng, cfg.embed_dim, cfg.hidden, obs_dim, cfg.lr_decoder)
    syn = None
    if mech is Mechanism.SYNTHETIC:
        syn = SynthNetParams.init(init_rng, cfg.embed_dim, cfg.hidden, cfg.lr_synth)
    stores_activations = mech is Mechanism.BASELINE or (
        mech is Mechanism.SYNTHETIC and cfg.synth_true_grads)
    mem = EpisodicMemory(cfg.capacity, cfg.embed_dim,
                         store_x=stores_activations or mech is Mechanism.ORACLE,
                         store_h=stores_activations,
                         obs_dim=obs_dim, hidden_dim=cfg.hidden)
    return TrainState(cfg, enc, dec, mem, root.child(2), syn)


def _memory_view(state: TrainState):
    """Decoder used to recompute memory embeddings, or None to read stored ones."""
    mech = state.cfg.mech
    if mech is Mechanism.REINSTATE_EXACT:
        return state.dec
    if mech is Mechanism.ORACLE and state.cfg.oracle_inference == "fresh":
        return OracleDecoder()
    return None


def train_step(state: TrainState, x: np.ndarray, y: int) -> StepMetrics:
    """Predict with the memory, assign credit, then write the example.

    Order: encode; (if the memory is non-empty) read, loss, credit and encoder
    update; write the new slot; synthetic write-time update; decoder
    reconstruction step. The current example is never in the memory it is
    classified against.
    """
    cfg, mech = state.cfg, state.cfg.mech
    enc, mem = state.enc, state.mem
    state.step += 1
    crediting = state.step > cfg.decoder_warmup
    h, e_q = encode(enc, x)
    if not np.all(np.isfinite(e_q)):
        raise DivergenceError(f"non-finite embedding at step {state.step}")

    loss = synth_mse = None
    if len(mem):
        grads = None
        view = _memory_view(state)
        if view is not None:
            res = assign_reinstate_exact(mem, view, enc, e_q, y, cfg.tau)
            loss, grads = res.loss, res.grads
        else:
            r = read(mem, e_q, cfg.tau)
            loss, g_p = cross_entropy(r.p, y)
            g_e = read_backward(mem, e_q, r, g_p)
            if mech is Mechanism.BASELINE:
                grads = assign_baseline(enc, mem, g_e)
            elif mech is Mechanism.SYNTHETIC:
                if crediting:
                    synth_mse = _train_synth(state, g_e)
                if cfg.synth_true_grads:
                    grads = assign_baseline(enc, mem, g_e)
            else:
                dec = OracleDecoder() if mech is Mechanism.ORACLE else state.dec
                grads = _approx_credit(state, dec, g_e)
        loss = float(loss)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {state.step}")
        if grads is not None and crediting:
            enc.apply(grads)

    mem.write(MemorySlot(e_q[:, 0].copy(), y, state.step,
                         x=x[:, 0] if mem.store_x else None,
                         h=h[:, 0] if mem.store_h else None))

    if mech is Mechanism.SYNTHETIC and crediting:
        g_hat = synth_predict(state.syn, e_q, y, cfg.effective_synth_scale)
        synth_apply_at_write(enc, x, h, e_q, g_hat)

    recon = recon_step(state.dec, e_q, x)
    for net in (enc, state.dec, state.syn):
        if net is not None and not net.is_finite():
            raise DivergenceError(f"non-finite parameters at step {state.step}")
    return StepMetrics(loss, recon, synth_mse)


def _train_synth(state: TrainState, g_e: np.ndarray) -> float:
    mem, cfg = state.mem, state.cfg
    n = len(mem)
    idx = np.arange(n) if n <= cfg.synth_batch else state.rng.choice(n, cfg.synth_batch)
    return synth_train(state.syn, mem.embeddings[:, idx], mem.labels[idx], g_e[:, idx],
                       cfg.effective_synth_scale)


def _approx_credit(state: TrainState, dec, g_e: np.ndarray):
    n, frac = len(state.mem), state.cfg.subset_fraction
    if frac >= 1.0:
        return assign_reinstate_approx(state.mem, dec, state.enc, g_e)
    k = max(1, math.ceil(frac * n))
    subset = state.rng.choice(n, k)
    return assign_reinstate_approx(state.mem, dec, state.enc, g_e, subset, scale=1.0 / frac)


def memory_embeddings(state: TrainState) -> np.ndarray:
    """Embeddings the read head uses for this mechanism (recomputed where applicable)."""
    view = _memory_view(state)
    if view is None:
        return state.mem.embeddings
    return reinstate_forward(state.mem, view, state.enc).e


def evaluate(state: TrainState, valset: Dataset) -> float:
    """Validation accuracy with frozen parameters and memory. Writes nothing."""
    if len(state.mem) == 0:
        log.warning("evaluate called with an empty memory; reporting accuracy 0")
        return 0.0
    E = memory_embeddings(state)
    _, Q = encode(state.enc, valset.images)
    P = read_batch(state.mem, Q, state.cfg.tau, embeddings=E)
    return float(np.mean(np.argmax(P, axis=0) == valset.labels))


def _q(v: Optional[float]) -> Optional[float]:
    # 12 significant digits: records equal their CSV text, and the last few
    # bits of BLAS reductions do not leak into golden files
    return None if v is None else float(f"{v:.12g}")


def _mean(values: list) -> Optional[float]:
    return float(np.mean(values)) if values else None


@dataclass
class RunResult:
    records: list
    diverged_step: Optional[int] = None


def run_single(cfg: TrainConfig, run: int, train: Dataset, val: Dataset) -> RunResult:
    """Train one seeded run, evaluating every ``eval_every`` steps."""
    state = init_state(cfg, cfg.seed + run, train.images.shape[0])
    examples = stream(train, Rng(cfg.seed + run).child(1))
    records = []
    losses, recons, mses = [], [], []

    def record(step, acc, diverged=False):
        records.append(MetricsRecord(run, step, cfg.mechanism, _q(_mean(losses)), _q(acc),
                                     _q(_mean(recons)), _q(_mean(mses)), diverged))
        losses.clear(), recons.clear(), mses.clear()

    for step in range(1, cfg.steps + 1):
        x, y = next(examples)
        try:
            m = train_step(state, x, y)
        except DivergenceError as exc:
            log.warning("run %d (%s) diverged at step %d: %s", run, cfg.mechanism, step, exc)
            record(step, None, diverged=True)
            return RunResult(records, step)
        if m.loss is not None:
            losses.append(m.loss)
        recons.append(m.recon_loss)
        if m.synth_mse is not None:
            mses.append(m.synth_mse)
        if step % cfg.eval_every == 0 or step == cfg.steps:
            acc = evaluate(state, val)
            record(step, acc)
            log.info("run %d %s step %d acc %.4f", run, cfg.mechanism, step, acc)
    return RunResult(records)


@dataclass
class AggregateRow:
    mechanism: str
    step: int
    mean_accuracy: float
    std_accuracy: float
    n_runs: int
    n_diverged: int


@dataclass
class ExperimentResult:
    records: list
    aggregate: list
    diverged_runs: list = field(default_factory=list)

    @property
    def final(self) -> Optional[AggregateRow]:
        return self.aggregate[-1] if self.aggregate else None

    def final_accuracies(self) -> list:
        """Last-evaluation accuracy of every run that did not diverge."""
        last = {}
        for r in self.records:
            if r.run not in self.diverged_runs and r.val_accuracy is not None:
                last[r.run] = r.val_accuracy
        return [last[k] for k in sorted(last)]


def aggregate(records: Iterable[MetricsRecord]) -> list:
    """Mean and sample std of accuracy per (mechanism, step) over non-diverged runs."""
    records = list(records)
    diverged = {(r.mechanism, r.run) for r in records if r.diverged}
    by_key = {}
    for r in records:
        if (r.mechanism, r.run) in diverged or r.val_accuracy is None:
            continue
        by_key.setdefault((r.mechanism, r.step), []).append(r.val_accuracy)
    rows = []
    for (mech, step), accs in sorted(by_key.items()):
        n_div = sum(1 for m, _ in diverged if m == mech)
        std = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        rows.append(AggregateRow(mech, step, float(np.mean(accs)), std, len(accs), n_div))
    return rows


def load_datasets(cfg: TrainConfig):
    """``(train, val)`` for the configuration; val is the fixed evaluation subsample."""
    if cfg.data_dir is None:
        full = synthetic_blobs(Rng(cfg.seed).child(7), per_class=cfg.blob_per_class,
                               spread=cfg.blob_spread)
        train, val = split(full, len(full) // 5, Rng(cfg.seed).child(8))
    else:
        train, val = load_mnist(cfg.data_dir, "train"), load_mnist(cfg.data_dir, "test")
    if cfg.eval_size < len(val):
        val = val.subset(Rng(cfg.seed).child(9).choice(len(val), cfg.eval_size))
    return train, val


def run_experiment(cfg: TrainConfig, data=None) -> ExperimentResult:
    """All ``cfg.runs`` runs of one mechanism, seeded ``seed + run``.

    ``data`` optionally supplies ``(train, val)`` and skips loading.
    """
    cfg.validate()
    train, val = load_datasets(cfg) if data is None else data
    records, diverged = [], []
    for run in range(cfg.runs):
        res = run_single(cfg, run, train, val)
        records.extend(res.records)
        if res.diverged_step is not None:
            diverged.append(run)
    return ExperimentResult(records, aggregate(records), diverged)


@dataclass
class Scenario:
    n_memories: int
    obs_dims: int
    obs_bytes: int  # bytes per stored observation value
    embed_dim: int
    hidden_dim: int
    precision: int  # bytes per float


FOOTPRINT_PRESETS = {
    # 210x160 RGB frames stored as bytes
    "atari": Scenario(3_000_000, 210 * 160 * 3, 1, 64, 256, 8),
    "mnist": Scenario(5000, 784, 8, 64, 256, 8),
}


@dataclass
class FootprintReport:
    scenario: Scenario
    raw_observation_bytes: int
    embedding_bytes: int
    stored_activation_bytes: int

    def rows(self):
        return [("raw_observations", self.raw_observation_bytes),
                ("embeddings", self.embedding_bytes),
                ("stored_activations", self.stored_activation_bytes)]

    def to_text(self) -> str:
        s = self.scenario
        lines = [f"{s.n_memories} memories, {s.obs_dims}-dim observations, d_e={s.embed_dim}"]
        for name, b in self.rows():
            lines.append(f"  {name:<20s} {b:>18,d} bytes  ({_human(b)})")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        return "storage,bytes\n" + "".join(f"{n},{b}\n" for n, b in self.rows())


def _human(n: int) -> str:
    for unit, size in (("TB", 1e12), ("GB", 1e9), ("MB", 1e6), ("kB", 1e3)):
        if n >= size:
            return f"{n / size:.2f} {unit}"
    return f"{n} B"


def footprint_report(scenario) -> FootprintReport:
    """Bytes needed to keep observations, embeddings, or baseline activations."""
    if isinstance(scenario, str):
        try:
            scenario = FOOTPRINT_PRESETS[scenario]
        except KeyError:
            raise ParameterError(f"unknown footprint preset {scenario!r}") from None
    s = scenario
    return FootprintReport(
        s,
        s.n_memories * s.obs_dims * s.obs_bytes,
        s.n_memories * s.embed_dim * s.precision,
        s.n_memories * (s.obs_dims + s.hidden_dim) * s.precision,
    )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(records: Iterable[MetricsRecord]) -> str:
    lines = [",".join(CSV_COLUMNS)]
    for r in records:
        lines.append(",".join(_fmt(getattr(r, c)) for c in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def read_metrics_csv(path) -> list:
    def opt(v):
        return None if v == "" else float(v)

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ParameterError(f"{path}: unexpected header {reader.fieldnames}")
        return [MetricsRecord(int(row["run"]), int(row["step"]), row["mechanism"],
                              opt(row["train_loss"]), opt(row["val_accuracy"]),
                              opt(row["recon_loss"]), opt(row["synth_mse"]),
                              row["diverged"] == "1")
                for row in reader]


def emit_outputs(records, csv_path, svg_path=None) -> None:
    """Write the metrics CSV and, optionally, an SVG of mean accuracy per mechanism."""
    records = list(records)
    if not records:
        raise ParameterError("no metrics to write")
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(metrics_csv(records))
    except OSError as exc:
        raise OSError(f"cannot write metrics CSV {csv_path}: {exc.strerror}") from exc
    if svg_path is not None:
        try:
            Path(svg_path).write_text(accuracy_svg(aggregate(records)))
        except OSError as exc:
            raise OSError(f"cannot write SVG {svg_path}: {exc.strerror}") from exc


def accuracy_svg(rows: list) -> str:
    """Self-contained SVG line plot of mean validation accuracy against step."""
    import io

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "memcredit", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for mech in sorted({r.mechanism for r in rows}):
            pts = [r for r in rows if r.mechanism == mech]
            ax.plot([r.step for r in pts], [r.mean_accuracy for r in pts], label=mech)
        ax.set_xlabel("step")
        ax.set_ylabel("mean validation accuracy")
        ax.set_ylim(0, 1)
        ax.legend(loc="lower right")
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
