"""Experiment orchestration: pretrain, shift, adapt or train from scratch, time, record."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import defaults
from .bp import accuracy, bp_train_batch
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .data import NORMALIZATION, SHIFTS, Dataset, apply_shift, epoch_batches, load_dataset, normalize
from .errors import ConfigError, NonFiniteError
from .nn import ARCHITECTURES, Network, init_network, network_forward
from .optim import AdamWConfig, AdamWOptimizer, SGDMomentumConfig, WarmupCosine, loss_value_and_grad, one_hot
from .pc import PCConfig, pc_train_batch
from .plotting import plot_accuracy_vs_time

log = logging.getLogger(__name__)

CSV_COLUMNS = ["run_id", "regime", "arch", "shift", "seed", "epoch", "train_wall_time_s", "train_metric",
               "test_accuracy"]
TIME_COLUMNS = ("train_wall_time_s",)
SUMMARY_COLUMNS = ["regime", "arch", "shift", "epoch", "n_runs", "mean_wall_time_s", "mean_train_metric",
                   "mean_test_accuracy", "std_test_accuracy"]
PEAK_COLUMNS = ["regime", "arch", "shift", "budget_s", "n_runs", "status", "peak_mean", "peak_std"]
INPUT_SHAPES = {"mnist": (1, 28, 28), "cifar10": (3, 32, 32)}
DTYPES = {"float64": np.float64, "float32": np.float32}
# published PC/BP per-epoch time ratios, for comparison only
REFERENCE_TIME_RATIO = {"mlp": 1.56, "vgg5": 0.52, "vgg7": 0.52, "vgg9": 0.52}


@dataclass
class ExperimentConfig:
    arch: str = "mlp"
    dataset: str = "mnist"
    shift: str = "invert"
    shift_seed: int = 0
    regime: str = "pc_adapt"
    pretrained_checkpoint: str | None = None
    loss: str | None = None
    theta_lr: float | None = None
    weight_decay: float | None = None
    gamma: float | None = None
    momentum: float | None = None
    inference_steps: int | None = None
    epochs: int | None = None
    batch_size: int | None = None
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    warmup_steps: int | None = None
    total_steps: int | None = None
    warmup_fraction: float = 0.1
    schedule_floor: float = 0.0
    augment: bool | None = None
    norm_mean: list[float] | None = None
    norm_std: list[float] | None = None
    data_dir: str | None = None
    dtype: str = "float64"
    train_subset: int | None = None
    test_subset: int | None = None
    eval_batch_size: int = 1000

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @property
    def engine(self) -> str:
        return self.regime.split("_")[0]

    @property
    def adapts(self) -> bool:
        return self.regime.endswith("_adapt")

    def resolved(self) -> "ExperimentConfig":
        """Fill unset hyperparameters from the per-regime defaults and validate."""
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.regime not in defaults.REGIMES:
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.shift not in SHIFTS:
            raise ConfigError(f"unknown shift {self.shift!r}")
        if self.dataset not in INPUT_SHAPES:
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.dtype not in DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(DTYPES)}")
        d = self.to_dict()
        for k, v in defaults.lookup(self.shift, self.regime, self.arch).items():
            if d[k] is None:
                d[k] = v
        if d["epochs"] is None:
            d["epochs"] = defaults.EPOCHS["adapt" if self.adapts else "scratch"]
        if d["batch_size"] is None:
            d["batch_size"] = defaults.BATCH_SIZE[self.dataset]
        if d["augment"] is None:
            d["augment"] = self.dataset == "cifar10"
        mean, std = NORMALIZATION[self.dataset]
        d["norm_mean"] = list(d["norm_mean"] or mean)
        d["norm_std"] = list(d["norm_std"] or std)
        if self.adapts and not d["pretrained_checkpoint"]:
            raise ConfigError(f"regime {self.regime} requires pretrained_checkpoint")
        if self.engine == "pc":
            for k in ("gamma", "momentum", "inference_steps"):
                if d[k] is None:
                    raise ConfigError(f"PC regime needs {k}")
        if d["epochs"] < 0 or d["batch_size"] < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if not d["seeds"]:
            raise ConfigError("at least one seed is required")
        return ExperimentConfig(**d)


@dataclass
class RunRecord:
    run_id: str
    regime: str
    arch: str
    shift: str
    seed: int
    epoch: int
    train_wall_time_s: float
    train_metric: float
    test_accuracy: float

    def row(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class RunOutcome:
    run_id: str
    seed: int
    status: str  # "completed" or "failed"
    stable: bool
    message: str = ""
    mean_epoch_time_s: float = 0.0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RunRecord]
    runs: list[RunOutcome]


# ---------------------------------------------------------------------------
# Timing
# ---------------------------------------------------------------------------

def timed_epoch(train_step: Callable[[np.ndarray, np.ndarray], float],
                batches: Sequence[tuple[np.ndarray, np.ndarray]]) -> tuple[float, float]:
    """Run ``train_step`` over materialized batches; return (seconds, mean metric)."""
    if not batches:
        return 0.0, 0.0
    metrics = []
    t0 = time.perf_counter()
    for x, y in batches:
        metrics.append(train_step(x, y))
    seconds = time.perf_counter() - t0
    return seconds, float(np.mean(metrics))


def measure_epoch_time(train_step, batches) -> float:
    """Monotonic-clock duration of the training computation over ``batches``."""
    return timed_epoch(train_step, list(batches))[0]


def make_optimizer(cfg: ExperimentConfig, steps_total: int) -> AdamWOptimizer:
    total = cfg.total_steps or max(1, steps_total)
    if cfg.warmup_steps is not None:
        schedule = WarmupCosine(cfg.warmup_steps, total, cfg.schedule_floor)
    else:
        schedule = WarmupCosine.for_run(total, cfg.warmup_fraction, cfg.schedule_floor)
    return AdamWOptimizer(AdamWConfig(cfg.theta_lr, cfg.weight_decay), schedule)


def make_train_step(cfg: ExperimentConfig, net: Network, steps_total: int):
    """Per-batch training closure for the regime's engine; returns loss (BP) or energy (PC)."""
    opt = make_optimizer(cfg, steps_total)
    if cfg.engine == "bp":
        return lambda x, y: bp_train_batch(net, x, y, cfg.loss, opt)
    pc_cfg = PCConfig(cfg.inference_steps, SGDMomentumConfig(cfg.gamma, cfg.momentum), cfg.loss)
    return lambda x, y: pc_train_batch(net, x, y, pc_cfg, opt)


# ---------------------------------------------------------------------------
# Experiment
# ---------------------------------------------------------------------------

@dataclass
class PreparedData:
    train: Dataset
    test: Dataset
    test_x: np.ndarray  # normalized test images


def prepare_data(cfg: ExperimentConfig, data: tuple[Dataset, Dataset] | None = None) -> PreparedData:
    """Load (or take), shift and subset; nothing here is inside the training clock."""
    dtype = DTYPES[cfg.dtype]
    if data is None:
        train, test = load_dataset(cfg.dataset, cfg.data_dir, dtype)
    else:
        train, test = data
    train = train.subset(cfg.train_subset)
    test = test.subset(cfg.test_subset)
    train = apply_shift(Dataset(train.images.astype(dtype, copy=False), train.labels, "train", train.name),
                        cfg.shift, cfg.shift_seed)
    test = apply_shift(Dataset(test.images.astype(dtype, copy=False), test.labels, "test", test.name),
                       cfg.shift, cfg.shift_seed)
    return PreparedData(train, test, normalize(test.images, cfg.norm_mean, cfg.norm_std))


def initial_network(cfg: ExperimentConfig, seed: int) -> Network:
    dtype = DTYPES[cfg.dtype]
    if not cfg.adapts:
        return init_network(cfg.arch, seed, dtype=dtype, in_shape=INPUT_SHAPES[cfg.dataset])
    path = Path(cfg.pretrained_checkpoint)
    if not path.is_file():
        raise ConfigError(f"pretrained checkpoint {path} does not exist")
    meta = read_checkpoint(path)[0]["meta"]
    if meta.get("shift", "none") != "none":
        raise ConfigError(f"checkpoint {path} was trained on shifted data ({meta['shift']})")
    if meta.get("dataset", cfg.dataset) != cfg.dataset:
        raise ConfigError(f"checkpoint {path} was trained on {meta['dataset']}, config uses {cfg.dataset}")
    net = load_checkpoint(path, arch=cfg.arch)
    if tuple(net.in_shape) != INPUT_SHAPES[cfg.dataset]:
        raise ConfigError(f"checkpoint input shape {net.in_shape} does not fit {cfg.dataset}")
    return net.astype(dtype)


def is_stable(accuracies: Sequence[float], max_drop: float = 0.05) -> bool:
    """Screening flag: no epoch-to-epoch accuracy drop larger than ``max_drop``."""
    acc = list(accuracies)
    return all(a - b <= max_drop for a, b in zip(acc, acc[1:]))


def run_id_for(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.regime}-{cfg.arch}-{cfg.shift}-s{seed}"


def dataset_metric(net: Network, cfg: ExperimentConfig, ds: Dataset) -> float:
    """Mean training loss of ``net`` on ``ds``; at forward initialization this is also the PC energy."""
    x = normalize(ds.images, cfg.norm_mean, cfg.norm_std)
    total = 0.0
    for i in range(0, len(ds), cfg.eval_batch_size):
        logits = network_forward(net, x[i:i + cfg.eval_batch_size])[0]
        y = one_hot(ds.labels[i:i + cfg.eval_batch_size], logits.shape[1], dtype=logits.dtype)
        total += float(loss_value_and_grad(cfg.loss, logits, y)[0]) * logits.shape[0]
    return total / max(1, len(ds))


def run_single(cfg: ExperimentConfig, seed: int, data: PreparedData,
               progress: Callable[[RunRecord], None] | None = None) -> tuple[list[RunRecord], RunOutcome, Network]:
    """One seed of a resolved config; epoch 0 is the untrained (or pretrained) model."""
    run_id = run_id_for(cfg, seed)
    net = initial_network(cfg, seed)
    rng = np.random.default_rng([seed, 0x5EED])
    n_batches = math.ceil(len(data.train) / cfg.batch_size)
    step = make_train_step(cfg, net, cfg.epochs * n_batches)

    def record(epoch, elapsed, metric):
        acc = accuracy(net, data.test_x, data.test.labels, cfg.eval_batch_size)
        rec = RunRecord(run_id, cfg.regime, cfg.arch, cfg.shift, seed, epoch, elapsed, metric, acc)
        if progress:
            progress(rec)
        return rec

    records = [record(0, 0.0, dataset_metric(net, cfg, data.train))]
    elapsed, epoch_times = 0.0, []
    status, message = "completed", ""
    for epoch in range(1, cfg.epochs + 1):
        batches = epoch_batches(data.train, cfg.batch_size, rng, mean=cfg.norm_mean, std=cfg.norm_std,
                                augment=cfg.augment)
        try:
            seconds, metric = timed_epoch(step, batches)
        except (NonFiniteError, FloatingPointError) as exc:
            status, message = "failed", f"epoch {epoch}: {exc}"
            break
        if not math.isfinite(metric):
            status, message = "failed", f"epoch {epoch}: non-finite training metric"
            break
        elapsed += seconds
        epoch_times.append(seconds)
        records.append(record(epoch, elapsed, metric))
    stable = status == "completed" and is_stable([r.test_accuracy for r in records])
    outcome = RunOutcome(run_id, seed, status, stable, message,
                         float(np.mean(epoch_times)) if epoch_times else 0.0)
    return records, outcome, net


def run_experiment(cfg: ExperimentConfig, data=None, out_dir=None, progress=None) -> ExperimentResult:
    """Run every seed of ``cfg``; failed runs are kept and flagged."""
    cfg = cfg.resolved()
    prepared = prepare_data(cfg, data)
    records, runs = [], []
    for seed in cfg.seeds:
        recs, outcome, _ = run_single(cfg, seed, prepared, progress)
        if outcome.status == "failed":
            log.warning("run %s failed: %s", outcome.run_id, outcome.message)
        records.extend(recs)
        runs.append(outcome)
    result = ExperimentResult(cfg, records, runs)
    if out_dir is not None:
        write_experiment(result, out_dir)
    return result


def pretrain_config(cfg: ExperimentConfig) -> ExperimentConfig:
    d = {**cfg.to_dict(), "regime": "bp_scratch", "shift": "none", "pretrained_checkpoint": None}
    return ExperimentConfig(**d).resolved()


def pretrain(cfg: ExperimentConfig, out_path, data=None, progress=None) -> tuple[Network, dict]:
    """BP training on the unshifted dataset with the first seed; saves a checkpoint."""
    cfg = pretrain_config(cfg)
    prepared = prepare_data(cfg, data)
    seed = cfg.seeds[0]
    records, outcome, net = run_single(cfg, seed, prepared, progress)
    if outcome.status == "failed":
        raise NonFiniteError(f"pretraining diverged: {outcome.message}")
    meta = {"regime": "bp_pretrain", "seed": seed, "epochs": cfg.epochs, "config_hash": cfg.config_hash(),
            "dataset": cfg.dataset, "shift": "none", "clean_test_accuracy": records[-1].test_accuracy,
            "train_wall_time_s": records[-1].train_wall_time_s}
    save_checkpoint(net.astype(np.float64), meta, out_path)
    return net, meta


# ---------------------------------------------------------------------------
# Summaries
# ---------------------------------------------------------------------------

@dataclass
class EpochSummary:
    regime: str
    arch: str
    shift: str
    epoch: int
    n_runs: int
    mean_wall_time_s: float
    mean_train_metric: float
    mean_test_accuracy: float
    std_test_accuracy: float


@dataclass
class PeakSummary:
    regime: str
    arch: str
    shift: str
    budget_s: float
    n_runs: int
    status: str  # "ok" or "absent"
    peak_mean: float | None
    peak_std: float | None


@dataclass
class Summary:
    epochs: list[EpochSummary]
    peaks: list[PeakSummary]


def _groups(records: Iterable[RunRecord]) -> dict[tuple, dict[str, list[RunRecord]]]:
    out: dict[tuple, dict[str, list[RunRecord]]] = {}
    for r in records:
        out.setdefault((r.regime, r.arch, r.shift), {}).setdefault(r.run_id, []).append(r)
    return {k: out[k] for k in sorted(out)}


def peak_within_budget(run: Sequence[RunRecord], budget: float) -> float | None:
    """Best test accuracy among trained epochs whose cumulative time fits ``budget``."""
    fits = [r.test_accuracy for r in run if r.epoch >= 1 and r.train_wall_time_s <= budget]
    return max(fits) if fits else None


def summarize(records: Sequence[RunRecord], budget: float = math.inf) -> Summary:
    """Per (regime, arch, shift): epoch-wise mean and population std, plus peak within ``budget`` seconds."""
    records = list(records)
    if not records:
        raise ConfigError("summarize needs at least one record")
    epochs, peaks = [], []
    for (regime, arch, shift), runs in _groups(records).items():
        by_epoch: dict[int, list[RunRecord]] = {}
        for run in runs.values():
            for r in run:
                by_epoch.setdefault(r.epoch, []).append(r)
        for e in sorted(by_epoch):
            rs = by_epoch[e]
            acc = np.array([r.test_accuracy for r in rs])
            epochs.append(EpochSummary(regime, arch, shift, e, len(rs),
                                       float(np.mean([r.train_wall_time_s for r in rs])),
                                       float(np.mean([r.train_metric for r in rs])),
                                       float(acc.mean()), float(acc.std())))
        run_peaks = [p for p in (peak_within_budget(run, budget) for run in runs.values()) if p is not None]
        if run_peaks:
            arr = np.array(run_peaks)
            peaks.append(PeakSummary(regime, arch, shift, budget, len(run_peaks), "ok",
                                     float(arr.mean()), float(arr.std())))
        else:
            peaks.append(PeakSummary(regime, arch, shift, budget, 0, "absent", None, None))
    return Summary(epochs, peaks)


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def write_records_csv(records: Iterable[RunRecord], path) -> Path:
    return _write_csv(path, CSV_COLUMNS, (r.row() for r in records))


def read_records_csv(path) -> list[RunRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ConfigError(f"{path}: unexpected CSV columns {reader.fieldnames}")
        for row in reader:
            out.append(RunRecord(row["run_id"], row["regime"], row["arch"], row["shift"], int(row["seed"]),
                                 int(row["epoch"]), float(row["train_wall_time_s"]), float(row["train_metric"]),
                                 float(row["test_accuracy"])))
    return out


def read_records_dir(directory) -> list[RunRecord]:
    """All per-run CSVs in ``runs/`` folders under ``directory``, in path order."""
    paths = sorted(p for p in Path(directory).rglob("*.csv") if p.parent.name == "runs")
    if not paths:
        raise ConfigError(f"no run CSVs found under {directory}")
    return [r for p in paths for r in read_records_csv(p)]


def write_summary(records: Sequence[RunRecord], out_dir, budget: float = math.inf) -> Summary:
    """Write summary.csv, peaks.csv and the accuracy-vs-time figure into ``out_dir``."""
    out = Path(out_dir)
    summary = summarize(records, budget)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS,
               ([getattr(s, c) for c in SUMMARY_COLUMNS] for s in summary.epochs))
    _write_csv(out / "peaks.csv", PEAK_COLUMNS, ([getattr(p, c) for c in PEAK_COLUMNS] for p in summary.peaks))
    plot_accuracy_vs_time(summary.epochs, out / "accuracy_vs_time.png", budget=budget)
    return summary


def write_experiment(result: ExperimentResult, out_dir) -> Path:
    out = Path(out_dir)
    for outcome in result.runs:
        write_records_csv([r for r in result.records if r.run_id == outcome.run_id],
                          out / "runs" / f"{outcome.run_id}.csv")
    manifest = {"config": result.config.to_dict(), "config_hash": result.config.config_hash(),
                "runs": [asdict(r) for r in result.runs]}
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    write_summary(result.records, out)
    return out


# ---------------------------------------------------------------------------
# PC/BP timing report
# ---------------------------------------------------------------------------

@dataclass
class TimingRow:
    arch: str
    n_batches: int
    batch_size: int
    inference_steps: int
    bp_epoch_s: float
    pc_epoch_s: float
    ratio: float
    reference_ratio: float


TIMING_COLUMNS = [f.name for f in fields(TimingRow)]


def timing_report(archs: Sequence[str] = ARCHITECTURES, *, n_batches: int = 3, batch_size: int = 32,
                  dtype: str = "float32", shift: str = "invert", seed: int = 0,
                  repeats: int = 1) -> list[TimingRow]:
    """Per-epoch PC/BP time ratio on synthetic batches with each architecture's adaptation settings.

    Both engines see the same batches and start from the same weights; the
    fastest of ``repeats`` epochs is kept.
    """
    rows = []
    for arch in archs:
        dataset = "mnist" if arch == "mlp" else "cifar10"
        shape = INPUT_SHAPES[dataset]
        rng = np.random.default_rng(seed)
        batches = [(rng.standard_normal((batch_size, *shape)).astype(DTYPES[dtype]),
                    one_hot(rng.integers(0, 10, batch_size), 10, dtype=DTYPES[dtype])) for _ in range(n_batches)]
        times = {}
        for engine in ("bp", "pc"):
            hp = defaults.lookup(shift, f"{engine}_adapt", arch)
            cfg = ExperimentConfig(arch=arch, dataset=dataset, shift=shift, regime=f"{engine}_scratch",
                                   dtype=dtype, seeds=[seed], **hp).resolved()
            best = math.inf
            for _ in range(repeats):
                net = init_network(arch, seed, dtype=DTYPES[dtype], in_shape=shape)
                best = min(best, measure_epoch_time(make_train_step(cfg, net, n_batches), batches))
            times[engine] = best
        steps = defaults.lookup(shift, "pc_adapt", arch)["inference_steps"]
        ratio = times["pc"] / times["bp"] if times["bp"] > 0 else math.nan
        rows.append(TimingRow(arch, n_batches, batch_size, int(steps), times["bp"], times["pc"], ratio,
                              REFERENCE_TIME_RATIO[arch]))
    return rows


def write_timing_csv(rows: Sequence[TimingRow], path) -> Path:
    return _write_csv(path, TIMING_COLUMNS, ([getattr(r, c) for c in TIMING_COLUMNS] for r in rows))
