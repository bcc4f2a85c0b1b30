"""Source training: label-smoothed cross-entropy, Adam, linear warmup then
cosine decay, optional per-chunk alignment of every source domain."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .alignment import align_chunks
from .data import Dataset, lowpass_dataset
from .nn import Adam, ArchConfig, Network, NonFiniteError, label_smoothed_ce, warmup_cosine

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    warmup_epochs: int = 20
    base_lr: float = 1e-3
    batch_size: int = 64
    delta: float = 0.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    alignment: str = "none"
    lowpass_hz: float = 40.0
    n_temporal: int = 8
    depth: int = 2
    kernel_length: int = 0  # 0: a quarter of the sample rate
    pool: int = 8
    dropout: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.epochs < 1 or not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError("need epochs >= 1 and 0 <= warmup_epochs < epochs")
        if self.batch_size < 1 or not self.base_lr > 0:
            raise ValueError("batch_size and base_lr must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise ValueError("label smoothing delta must lie in [0, 1)")
        if self.alignment not in ("none", "ea", "ra"):
            raise ValueError(f"unknown training alignment {self.alignment!r}")
        if not self.seeds:
            raise ValueError("at least one seed required")

    def lr_at(self, epoch: int) -> float:
        return warmup_cosine(epoch, self.base_lr, self.warmup_epochs, self.epochs)

    def arch_for(self, ds: Dataset) -> ArchConfig:
        kw = dict(n_temporal=self.n_temporal, depth=self.depth, pool=self.pool, dropout=self.dropout)
        if self.kernel_length:
            kw["kernel_length"] = self.kernel_length
        return ArchConfig.for_rate(ds.n_channels, ds.n_samples, ds.n_classes, ds.sample_rate, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d


def preprocess(ds: Dataset, cfg: TrainConfig) -> Dataset:
    """Ingest filter shared by training and streaming."""
    if cfg.lowpass_hz and cfg.lowpass_hz < ds.sample_rate / 2:
        return lowpass_dataset(ds, cfg.lowpass_hz)
    return ds


def prepare_source(domains: list[Dataset], cfg: TrainConfig) -> Dataset:
    """Filter each source domain, align it in chunks of ``batch_size`` trials
    when training alignment is on, and pool the result."""
    parts = []
    for ds in domains:
        ds = preprocess(ds, cfg)
        if cfg.alignment != "none":
            ds = Dataset(align_chunks(ds.data, cfg.alignment, cfg.batch_size), ds.labels, ds.n_classes, ds.sample_rate)
        parts.append(ds)
    return Dataset.concat(parts)


def train_source(domains: list[Dataset] | Dataset, cfg: TrainConfig, seed: int = 0) -> Network:
    """Train a fresh network on the pooled source domains."""
    if isinstance(domains, Dataset):
        domains = [domains]
    train = prepare_source(domains, cfg)
    if len(train) < 1:
        raise ValueError("no training trials")
    net = Network(cfg.arch_for(train), seed=seed)
    net.set_scope("all")
    opt = Adam(lr=cfg.base_lr)
    rng = np.random.default_rng(seed + 7919)
    n = len(train)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                with np.errstate(over="ignore"):
                    logits = net.forward(train.data[idx], "train")
            except NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite activations at epoch {epoch}, lr {opt.lr:.3e}") from exc
            loss, grad = label_smoothed_ce(logits, train.labels[idx], cfg.delta)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss {loss} at epoch {epoch}, batch starting {start}, lr {opt.lr:.3e}"
                )
            with np.errstate(over="ignore"):
                if opt.lr > 0:
                    opt.step(net.params, net.backward(grad))
                else:
                    net.backward(grad)
            if not _finite_state(net):
                raise TrainingDiverged(f"parameters or running statistics overflowed at epoch {epoch}, lr {opt.lr:.3e}")
    return net


def _finite_state(net: Network) -> bool:
    arrays = [*net.params.values(), net.bn.running_mean, net.bn.running_var]
    return all(np.all(np.isfinite(a)) for a in arrays)
