"""Experiment drivers: the synthetic benchmark, the three evaluation settings,
sweeps and report output."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset, GeneratorSpec, Shift, default_spec, derive_shifted_subject, generate_subject
from .engine import AdaptationConfig, run_continual, run_stream
from .nn import Network
from .training import TrainConfig, preprocess, train_source

log = logging.getLogger(__name__)

SETTINGS = ("cross_session", "cross_subject", "continual")
BUFFER_SIZES = (1, 2, 4, 8, 16, 32, 64, 128)
DELTAS = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)

Subjects = dict[str, list[Dataset]]


class PartitionError(ValueError):
    pass


# ------------------------------------------------------------------ benchmark


@dataclass(frozen=True)
class BenchmarkConfig:
    """Synthetic multi-subject, multi-session data.

    Every subject shares the class templates of one base generator and
    differs by a subject shift; every later session of a subject differs
    from its first by a session shift. Defaults follow the 4-class, 22-channel
    geometry (4 s at 250 Hz, 288 trials per session, 9 subjects).
    """

    n_channels: int = 22
    n_samples: int = 1000
    n_classes: int = 4
    sample_rate: float = 250.0
    noise: float = 1.5
    band_hz: float = 12.0  # 0: class frequencies spread over 8-30 Hz
    n_subjects: int = 9
    n_sessions: int = 2
    trials_per_session: int = 288
    rotation: float = 0.1
    gain_low: float = 0.7
    gain_high: float = 1.4
    bias: float = 0.5
    mixing: float = 0.7
    scale: float = 3.0
    session_rotation: float = 0.1
    session_gain_low: float = 0.7
    session_gain_high: float = 1.4
    session_bias: float = 0.1
    session_mixing: float = 0.1
    session_scale: float = 1.0
    seed: int = 0

    @classmethod
    def desk(cls, **kw) -> "BenchmarkConfig":
        """Small preset used by the acceptance suite: 8 channels, 1 s at
        128 Hz, 4 subjects with 96 trials per session."""
        base = dict(n_channels=8, n_samples=128, sample_rate=128.0, n_subjects=4, trials_per_session=96)
        base.update(kw)
        return cls(**base)

    @property
    def subject_shift(self) -> Shift:
        return Shift(self.rotation, (self.gain_low, self.gain_high), self.bias, self.mixing, self.scale)

    @property
    def session_shift(self) -> Shift:
        return Shift(self.session_rotation, (self.session_gain_low, self.session_gain_high),
                     self.session_bias, self.session_mixing, self.session_scale)

    def base_spec(self) -> GeneratorSpec:
        spec = default_spec(self.n_channels, self.n_samples, self.n_classes, self.sample_rate,
                            noise=self.noise, seed=self.seed)
        if self.band_hz:
            spec = replace(spec, freqs=np.full(self.n_classes, float(self.band_hz)))
        return spec

    def subject_specs(self) -> dict[str, list[GeneratorSpec]]:
        base = self.base_spec()
        specs = {}
        for s in range(self.n_subjects):
            first = derive_shifted_subject(base, self.subject_shift, self.seed * 1000 + s)
            sessions = [first]
            for k in range(1, self.n_sessions):
                sessions.append(derive_shifted_subject(first, self.session_shift, self.seed * 1000 + 100 * k + s))
            specs[f"S{s + 1}"] = sessions
        return specs


def make_benchmark(cfg: BenchmarkConfig) -> Subjects:
    return {
        name: [generate_subject(spec, cfg.trials_per_session) for spec in sessions]
        for name, sessions in cfg.subject_specs().items()
    }


# ------------------------------------------------------------------ methods


@dataclass(frozen=True)
class Method:
    """An adaptation recipe plus the source-training choices it needs: the
    model is trained with the same alignment as it adapts with, and with
    label smoothing ``delta``."""

    name: str
    adapt: AdaptationConfig
    delta: float = 0.0

    @property
    def train_alignment(self) -> str:
        return self.adapt.alignment

    def to_dict(self) -> dict:
        return {"name": self.name, "adapt": self.adapt.to_dict(), "delta": self.delta}


def method(adapt: AdaptationConfig, delta: float = 0.0, name: str | None = None) -> Method:
    if name is None:
        name = adapt.label + (f"(delta={delta:g})" if adapt.entropy_min or delta else "")
    return Method(name, adapt, delta)


def table_grid(delta_em: float = 0.4, base: AdaptationConfig | None = None) -> list[Method]:
    """Rows of the results tables: source, EA/RA with three weightings, the
    three BN modes, RA x BN combinations, and RA(ema)-bn1 with entropy
    minimization at delta 0 and ``delta_em``."""
    base = base or AdaptationConfig()
    a = lambda **kw: base.with_(**kw)  # noqa: E731
    rows = [Method("source", a(alignment="none", bn_mode="source", entropy_min=False))]
    weightings = (("", "uniform"), ("(linear)", "linear"), ("(EMA)", "ema(0.1)"))
    for align in ("ea", "ra"):
        for suffix, w in weightings:
            rows.append(Method(f"{align.upper()}{suffix}", a(alignment=align, weighting=w, bn_mode="source", entropy_min=False)))
    bn_modes = (("BN-1", "bn1"), ("BN-0.5", "bn_alpha(0.5)"), ("BN-EMA", "bn_ema(0.1)"))
    for label, mode in bn_modes:
        rows.append(Method(label, a(alignment="none", bn_mode=mode, entropy_min=False)))
    for label, mode in bn_modes:
        for suffix, w in weightings[1:]:
            rows.append(Method(f"RA{suffix}-{label}", a(alignment="ra", weighting=w, bn_mode=mode, entropy_min=False)))
    full = a(alignment="ra", weighting="ema(0.1)", bn_mode="bn1", entropy_min=True)
    rows.append(Method("RA(EMA)-BN-1(delta=0)+EM", full, 0.0))
    rows.append(Method(f"RA(EMA)-BN-1(delta={delta_em:g})+EM", full, delta_em))
    return rows


# ------------------------------------------------------------------ reports


@dataclass(frozen=True)
class RunRecord:
    seed: int
    subject: str
    accuracy: float
    n_trials: int


@dataclass
class ExperimentReport:
    setting: str
    method: str
    records: list[RunRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    point: str = ""

    def per_seed(self) -> dict[int, float]:
        """Mean accuracy over subjects, per seed."""
        by_seed: dict[int, list[float]] = {}
        for r in self.records:
            by_seed.setdefault(r.seed, []).append(r.accuracy)
        return {s: float(np.mean(v)) for s, v in sorted(by_seed.items())}

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.per_seed().values())))

    @property
    def std(self) -> float:
        """Population standard deviation over seeds."""
        return float(np.std(list(self.per_seed().values())))

    def accuracy(self, seed: int, subject: str) -> float:
        for r in self.records:
            if r.seed == seed and r.subject == subject:
                return r.accuracy
        raise KeyError((seed, subject))

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "setting": self.setting,
            "method": self.method,
            "point": self.point,
            "mean": self.mean if self.records else None,
            "std": self.std if self.records else None,
            "records": [asdict(r) for r in self.records],
            "config": self.config,
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(
            setting=d["setting"],
            method=d["method"],
            records=[RunRecord(**r) for r in d["records"]],
            config=d.get("config", {}),
            wall_clock=d.get("wall_clock", 0.0),
            point=d.get("point", ""),
        )

    def summary(self) -> str:
        label = f"{self.point} " if self.point else ""
        return f"{self.setting} {label}{self.method}: {100 * self.mean:.2f} +- {100 * self.std:.2f}"


CSV_FIELDS = ("point", "setting", "method", "seed", "subject", "accuracy", "n_trials")


def emit_report(reports: ExperimentReport | list[ExperimentReport], path, fmt: str | None = None,
                include_timing: bool = True) -> Path:
    """Write reports as JSON (full config echo) or CSV (one row per point,
    seed and subject). The format defaults to the file suffix."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".") or "json").lower()
    items = [reports] if isinstance(reports, ExperimentReport) else list(reports)
    if fmt == "json":
        payload = items[0].to_dict(include_timing) if isinstance(reports, ExperimentReport) else [
            r.to_dict(include_timing) for r in items
        ]
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    elif fmt == "csv":
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_FIELDS)
            for rep in items:
                for r in rep.records:
                    writer.writerow([rep.point, rep.setting, rep.method, r.seed, r.subject, repr(r.accuracy), r.n_trials])
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


def load_report(path) -> ExperimentReport | list[ExperimentReport]:
    payload = json.loads(Path(path).read_text())
    if isinstance(payload, list):
        return [ExperimentReport.from_dict(d) for d in payload]
    return ExperimentReport.from_dict(payload)


def read_csv_records(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


# ------------------------------------------------------------------ settings


@dataclass(frozen=True)
class Partition:
    """Which (subject, session) blocks train the model and which are streamed."""

    subject: str
    train: tuple[tuple[str, int], ...]
    stream: tuple[str, int]
    warmup: tuple[str, int] | None = None

    def train_subjects(self) -> tuple[str, ...]:
        return tuple(sorted({s for s, _ in self.train}))


def validate_subjects(subjects: Subjects) -> None:
    if not subjects:
        raise PartitionError("no subjects given")
    shapes = set()
    for name, sessions in subjects.items():
        if len(sessions) < 2:
            raise PartitionError(f"subject {name} needs at least two sessions, has {len(sessions)}")
        for k, ds in enumerate(sessions):
            if len(ds) == 0:
                raise PartitionError(f"subject {name} session {k + 1} is empty")
            shapes.add((ds.n_channels, ds.n_samples, ds.n_classes, ds.sample_rate))
    if len(shapes) != 1:
        raise PartitionError(f"subjects disagree on trial geometry: {sorted(shapes)}")


def partitions(setting: str, subjects: Subjects, held_out: Iterable[str] | None = None) -> list[Partition]:
    """Train/stream splits; streamed data is always the second session."""
    if setting not in SETTINGS:
        raise PartitionError(f"unknown setting {setting!r}")
    validate_subjects(subjects)
    names = list(subjects)
    targets = names if held_out is None else list(held_out)
    missing = [t for t in targets if t not in subjects]
    if missing:
        raise PartitionError(f"unknown held-out subjects {missing}")
    if setting == "cross_session":
        return [Partition(t, ((t, 0),), (t, 1)) for t in targets]
    if len(names) < 2:
        raise PartitionError("cross-subject settings need at least two subjects")
    out = []
    for t in targets:
        train = tuple((s, 0) for s in names if s != t)
        out.append(Partition(t, train, (t, 1), (t, 0) if setting == "continual" else None))
    return out


class CheckpointCache:
    """Trained source models keyed by everything that determines them."""

    def __init__(self):
        self._nets: dict[tuple, Network] = {}
        self.trained = 0

    def get(self, subjects: Subjects, part: Partition, cfg: TrainConfig, seed: int) -> Network:
        key = (part.train, cfg, seed)
        net = self._nets.get(key)
        if net is None:
            net = train_source([subjects[s][k] for s, k in part.train], cfg, seed)
            self._nets[key] = net
            self.trained += 1
        return net


def run_methods(setting: str, subjects: Subjects, train_cfg: TrainConfig, methods: list[Method],
                held_out: Iterable[str] | None = None, cache: CheckpointCache | None = None,
                checkpoint: Network | None = None, point: str = "") -> list[ExperimentReport]:
    """One report per method; source models are shared between methods that
    need the same training. ``checkpoint`` replaces training entirely."""
    parts = partitions(setting, subjects, held_out)
    cache = cache or CheckpointCache()
    reports = [
        ExperimentReport(setting, m.name, config={"train": train_cfg.to_dict(), "method": m.to_dict(), "setting": setting},
                         point=point)
        for m in methods
    ]
    for seed in train_cfg.seeds:
        for part in parts:
            stream = preprocess(subjects[part.stream[0]][part.stream[1]], train_cfg).trials()
            warm = preprocess(subjects[part.warmup[0]][part.warmup[1]], train_cfg).trials() if part.warmup else None
            for m, rep in zip(methods, reports):
                t0 = time.perf_counter()
                cfg = replace(train_cfg, alignment=m.train_alignment, delta=m.delta)
                net = checkpoint if checkpoint is not None else cache.get(subjects, part, cfg, seed)
                if warm is not None:
                    res = run_continual(net, m.adapt, warm, stream, seed=seed)
                else:
                    res = run_stream(net, m.adapt, stream, seed=seed)
                rep.records.append(RunRecord(seed, part.subject, float(res.accuracy), len(res.records)))
                rep.wall_clock += time.perf_counter() - t0
                log.info("%s %s seed=%d subject=%s acc=%.4f", setting, m.name, seed, part.subject, res.accuracy)
    return reports


def run_setting(setting: str, subjects: Subjects, train_cfg: TrainConfig, adapt: AdaptationConfig | Method,
                held_out: Iterable[str] | None = None, cache: CheckpointCache | None = None,
                checkpoint: Network | None = None) -> ExperimentReport:
    """A plain ``AdaptationConfig`` keeps the label smoothing of ``train_cfg``;
    the training alignment always follows the adaptation alignment."""
    m = adapt if isinstance(adapt, Method) else method(adapt, train_cfg.delta)
    return run_methods(setting, subjects, train_cfg, [m], held_out, cache, checkpoint)[0]


def sweep(axis: str, subjects: Subjects, train_cfg: TrainConfig, base: AdaptationConfig | None = None,
          setting: str = "cross_subject", values: Iterable | None = None, delta: float = 0.4,
          bn_modes: Iterable[str] = ("bn1", "bn_alpha(0.5)", "bn_ema(0.1)"),
          held_out: Iterable[str] | None = None, cache: CheckpointCache | None = None) -> list[ExperimentReport]:
    """Reports for every grid point of ``axis``.

    ``buffer``: each batch-norm mode in ``bn_modes`` at each buffer size.
    ``delta``: the full method (``base`` with entropy minimization) trained
    with each label smoothing value. ``grid``: the results-table rows.
    """
    cache = cache or CheckpointCache()
    held_out = None if held_out is None else list(held_out)
    reports: list[ExperimentReport] = []
    if axis == "buffer":
        base = base or AdaptationConfig()
        for b in values or BUFFER_SIZES:
            ms = [method(base.with_(bn_mode=mode, buffer_size=int(b))) for mode in bn_modes]
            reports += run_methods(setting, subjects, train_cfg, ms, held_out, cache, point=f"buffer={int(b)}")
    elif axis == "delta":
        base = base or AdaptationConfig(alignment="ra", bn_mode="bn1", entropy_min=True)
        for d in values or DELTAS:
            reports += run_methods(setting, subjects, train_cfg, [method(base, float(d))], held_out, cache,
                                   point=f"delta={float(d):g}")
    elif axis == "grid":
        reports += run_methods(setting, subjects, train_cfg, table_grid(delta, base), held_out, cache, point="grid")
    else:
        raise ValueError(f"unknown sweep axis {axis!r}")
    return reports
