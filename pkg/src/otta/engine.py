"""Single-instance online test-time adaptation.

Per incoming trial, :meth:`Engine.process_trial` runs, in order:

1. push the raw trial into the FIFO buffer;
2. re-estimate the alignment reference from the buffer;
3. align every buffered trial with that reference;
4. forward the aligned buffer as one batch under the configured batch-norm
   mode (source statistics while the buffer is below the warmup floor);
5. emit the newest row as the prediction;
6. every ``buffer_size`` trials, if enabled, take one Adam step on the mean
   prediction entropy of that same batch.

Labels are never shown to the engine; streams strip them before processing
and use them only for scoring.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .alignment import AlignmentState
from .buffer import RingBuffer, Trial, Weighting
from .nn import Adam, BNMode, Network, entropy_loss, load_checkpoint
from .nn.losses import log_softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdaptationConfig:
    alignment: str = "none"
    weighting: Weighting = field(default_factory=lambda: Weighting("ema", 0.1))
    bn_mode: BNMode = field(default_factory=BNMode)
    entropy_min: bool = False
    buffer_size: int = 32
    lr: float = 5e-4
    param_scope: str = "bn_affine"
    bn_warmup_floor: int = 8

    def __post_init__(self):
        if isinstance(self.weighting, str):
            object.__setattr__(self, "weighting", Weighting.parse(self.weighting))
        if isinstance(self.bn_mode, str):
            object.__setattr__(self, "bn_mode", BNMode.parse(self.bn_mode))
        object.__setattr__(self, "alignment", self.alignment.lower())
        if self.alignment not in ("none", "ea", "ra"):
            raise ValueError(f"unknown alignment {self.alignment!r}")
        if self.buffer_size < 1:
            raise ValueError("buffer_size must be >= 1")
        if self.bn_warmup_floor < 0:
            raise ValueError("bn_warmup_floor must be >= 0")
        if self.param_scope not in ("bn_affine", "all"):
            raise ValueError(f"unknown param_scope {self.param_scope!r}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")

    @property
    def label(self) -> str:
        """Short method name in the style of ``RA(ema)-bn1+EM``."""
        parts = []
        if self.alignment != "none":
            parts.append(f"{self.alignment.upper()}({self.weighting})")
        if self.bn_mode.kind != "source":
            parts.append(str(self.bn_mode))
        name = "-".join(parts) or "source"
        return name + "+EM" if self.entropy_min else name

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weighting"] = str(self.weighting)
        d["bn_mode"] = str(self.bn_mode)
        return d

    def with_(self, **kw) -> "AdaptationConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    label: int | None
    predicted: int
    confidence: float
    entropy: float

    @property
    def correct(self) -> bool | None:
        return None if self.label is None else self.predicted == self.label


@dataclass
class StreamResult:
    records: list[TrialRecord] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int | None = None
    errors: list[str] = field(default_factory=list)

    @property
    def scored(self) -> list[TrialRecord]:
        return [r for r in self.records if r.label is not None]

    @property
    def n_correct(self) -> int:
        return sum(1 for r in self.scored if r.correct)

    @property
    def accuracy(self) -> float | None:
        scored = self.scored
        return self.n_correct / len(scored) if scored else None

    def predictions(self) -> list[int]:
        return [r.predicted for r in self.records]

    def tail_accuracy(self, n: int) -> float | None:
        tail = [r for r in self.records[-n:] if r.label is not None]
        return sum(r.correct for r in tail) / len(tail) if tail else None


@dataclass(frozen=True)
class Prediction:
    trial_id: int
    predicted: int
    probabilities: np.ndarray

    @property
    def confidence(self) -> float:
        return float(self.probabilities[self.predicted])

    @property
    def entropy(self) -> float:
        p = self.probabilities
        nz = p > 0
        return float(-np.sum(p[nz] * np.log(p[nz])))


class Engine:
    """Owns one stream's buffer, alignment state, adapted network and Adam state."""

    def __init__(self, network: Network | bytes, config: AdaptationConfig):
        net = load_checkpoint(network) if isinstance(network, (bytes, bytearray)) else network.copy()
        self.config = config
        self.net = net
        net.bn_mode = config.bn_mode
        net.set_scope(config.param_scope)
        self.buffer = RingBuffer(config.buffer_size, config.weighting)
        self.alignment = AlignmentState(config.alignment)
        self.optimizer = Adam(lr=config.lr)
        self.n_seen = 0
        self.n_updates = 0
        self.errors: list[str] = []

    @property
    def warmup_floor(self) -> int:
        # a buffer smaller than the floor could never leave the warmup
        return min(self.config.bn_warmup_floor, self.config.buffer_size)

    def process_trial(self, trial: Trial) -> Prediction:
        if trial.label is not None:
            trial = Trial(trial.data, None, trial.trial_id)
        cfg = self.config
        self.buffer.push(trial)
        self.n_seen += 1
        self.alignment.update_reference(self.buffer)
        batch = self.alignment.align_data(self.buffer.stacked())
        source_stats = len(self.buffer) < self.warmup_floor
        step_due = cfg.entropy_min and self.n_seen % cfg.buffer_size == 0
        logits = self.net.forward(batch, "adapt" if step_due else "eval", source_stats=source_stats)
        probs = np.exp(log_softmax(logits[-1:]))[0]
        pred = Prediction(trial.trial_id, int(np.argmax(probs)), probs)
        if step_due:
            try:
                _, grad = entropy_loss(logits)
                self.optimizer.step(self.net.params, self.net.backward(grad))
                self.n_updates += 1
            except (FloatingPointError, ValueError) as exc:
                msg = f"entropy step at trial {trial.trial_id} failed: {exc}"
                log.warning(msg)
                self.errors.append(msg)
        return pred


def _unlabelled(trials: list[Trial], first_id: int) -> list[Trial]:
    return [Trial(t.data, None, first_id + i) for i, t in enumerate(trials)]


def run_stream(network: Network | bytes, config: AdaptationConfig, trials: list[Trial],
               labels=None, seed: int | None = None, engine: Engine | None = None,
               first_id: int = 1) -> StreamResult:
    """Process ``trials`` in order with a fresh engine (or ``engine``).

    ``labels`` default to the trials' own labels and are used for scoring only.
    """
    if labels is None:
        labels = [t.label for t in trials]
    if len(labels) != len(trials):
        raise ValueError("one scoring label per trial required")
    engine = engine or Engine(network, config)
    result = StreamResult(config=config.to_dict(), seed=seed)
    for trial, label in zip(_unlabelled(trials, first_id), labels):
        pred = engine.process_trial(trial)
        result.records.append(
            TrialRecord(trial.trial_id, None if label is None else int(label), pred.predicted, pred.confidence, pred.entropy)
        )
    result.errors = list(engine.errors)
    return result


def run_continual(network: Network | bytes, config: AdaptationConfig, phase1: list[Trial],
                  phase2: list[Trial], labels2=None, seed: int | None = None) -> StreamResult:
    """Adapt through ``phase1`` unscored, then score ``phase2``; buffer,
    alignment, batch-norm and optimizer state carry over."""
    if phase1 and phase2 and phase1[0].shape != phase2[0].shape:
        raise ValueError("phases disagree on trial dimensions")
    engine = Engine(network, config)
    for trial in _unlabelled(phase1, 1):
        engine.process_trial(trial)
    return run_stream(network, config, phase2, labels2, seed=seed, engine=engine, first_id=len(phase1) + 1)


def evaluate(network: Network, data: np.ndarray, labels, batch_size: int = 256) -> float:
    """Plain accuracy of ``network`` under its current batch-norm mode
    (source statistics by default)."""
    labels = np.asarray(labels)
    correct = 0
    for start in range(0, len(labels), batch_size):
        logits = network.forward(data[start:start + batch_size], "eval")
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[start:start + batch_size]))
    return correct / len(labels) if len(labels) else float("nan")
