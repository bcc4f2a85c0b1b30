"""Compact EEGNet-style classifier assembled from the layers module."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    ELU,
    AvgPool,
    BatchNorm,
    BNMode,
    Dropout,
    Layer,
    Linear,
    NonFiniteError,
    SpatialConv,
    TapeError,
    TemporalConv,
)

PHASES = ("train", "adapt", "eval")
PARAM_SCOPES = ("bn_affine", "all")


@dataclass(frozen=True)
class ArchConfig:
    n_channels: int
    n_samples: int
    n_classes: int
    n_temporal: int = 8
    depth: int = 2
    kernel_length: int = 62
    pool: int = 8
    dropout: float = 0.25
    bn_momentum: float = 0.1

    def __post_init__(self):
        for key in ("n_channels", "n_samples", "n_classes", "n_temporal", "depth", "kernel_length", "pool"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be >= 1")
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if self.n_samples < self.pool:
            raise ValueError("trial shorter than the pooling factor")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def n_features(self) -> int:
        return self.n_temporal * self.depth

    @property
    def n_pooled(self) -> int:
        return self.n_samples // self.pool

    @classmethod
    def for_rate(cls, n_channels: int, n_samples: int, n_classes: int, sample_rate: float, **kw) -> "ArchConfig":
        """Temporal kernels span a quarter second by default."""
        kw.setdefault("kernel_length", max(1, int(round(sample_rate / 4))))
        return cls(n_channels, n_samples, n_classes, **kw)


class Network:
    """temporal conv -> spatial conv -> batch norm -> ELU -> avg pool ->
    dropout -> linear.

    ``params`` is the flat registry ``"<layer>.<param>" -> array``; ``adapt``
    maps the same names to whether backward/Adam should touch them.
    """

    def __init__(self, arch: ArchConfig, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.rng = np.random.default_rng(seed)
        a = arch
        self.bn = BatchNorm(a.n_features, a.bn_momentum)
        self.layers: list[Layer] = [
            TemporalConv(a.n_temporal, a.kernel_length),
            SpatialConv(a.n_temporal, a.depth, a.n_channels),
            self.bn,
            ELU(),
            AvgPool(a.pool),
            Dropout(a.dropout, self.rng),
            Linear(a.n_features * a.n_pooled, a.n_classes),
        ]
        self._init_params()
        self.adapt = {name: True for name in self.params}
        self._recorded = False

    def _init_params(self):
        conv, spatial, lin = self.layers[0], self.layers[1], self.layers[6]
        for layer, key, fan_in in (
            (conv, "weight", self.arch.kernel_length),
            (spatial, "weight", self.arch.n_channels),
            (lin, "weight", lin.params["weight"].shape[1]),
            (lin, "bias", lin.params["weight"].shape[1]),
        ):
            bound = 1.0 / np.sqrt(fan_in)
            shape = layer.params[key].shape
            layer.params[key] = self.rng.uniform(-bound, bound, shape)
        self.astype(self.dtype)

    def astype(self, dtype) -> "Network":
        """Change the parameter storage dtype in place."""
        self.dtype = np.dtype(dtype)
        for layer in self.layers:
            for key in layer.params:
                layer.params[key] = np.ascontiguousarray(layer.params[key], dtype=self.dtype)
        self.bn.running_mean = self.bn.running_mean.astype(self.dtype)
        self.bn.running_var = self.bn.running_var.astype(self.dtype)
        return self

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{i}.{layer.name}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def _locate(self, name: str) -> tuple[Layer, str]:
        idx, _, key = name.split(".")
        return self.layers[int(idx)], key

    def set_param(self, name: str, value: np.ndarray) -> None:
        layer, key = self._locate(name)
        if np.shape(value) != layer.params[key].shape:
            raise ValueError(f"shape mismatch for {name}: {np.shape(value)} vs {layer.params[key].shape}")
        layer.params[key] = np.array(value, dtype=self.dtype)

    def set_scope(self, scope: str) -> None:
        """``bn_affine``: only batch-norm gamma/beta adapt. ``all``: everything."""
        if scope not in PARAM_SCOPES:
            raise ValueError(f"unknown parameter scope {scope!r}")
        for name in self.adapt:
            self.adapt[name] = scope == "all" or ".batch_norm." in name

    @property
    def bn_mode(self) -> BNMode:
        return self.bn.mode

    @bn_mode.setter
    def bn_mode(self, mode: BNMode | str) -> None:
        self.bn.mode = BNMode.parse(mode) if isinstance(mode, str) else mode
        self.bn.reset_ema()

    def forward(self, batch: np.ndarray, phase: str = "eval", source_stats: bool = False) -> np.ndarray:
        """Logits ``(B, n_classes)`` for a ``(B, C, T)`` batch.

        ``train`` uses batch statistics and dropout and updates the running
        statistics; ``adapt`` and ``eval`` use the batch-norm mode, and only
        ``train``/``adapt`` record the tape for :meth:`backward`.
        ``source_stats`` forces source statistics whatever the mode.
        """
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        x = np.asarray(batch, dtype=np.float64)
        a = self.arch
        if x.ndim != 3 or x.shape[1:] != (a.n_channels, a.n_samples) or len(x) < 1:
            raise ValueError(f"expected batch (B, {a.n_channels}, {a.n_samples}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("input", "input")
        record = phase != "eval"
        self.bn.force_source = source_stats
        try:
            for layer in self.layers:
                x = layer.forward(x, phase, record)
                if not np.all(np.isfinite(x)):
                    raise NonFiniteError(layer.name)
        finally:
            self.bn.force_source = False
        self._recorded = record
        return x

    def backward(self, grad_logits: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate ``dL/dlogits``; returns gradients for parameters whose
        adapt flag is set (others are absent)."""
        if not self._recorded:
            raise TapeError("backward needs a preceding train/adapt forward pass")
        self._recorded = False
        for layer in self.layers:
            layer.grads.clear()
        g = np.asarray(grad_logits, dtype=np.float64)
        for i in range(len(self.layers) - 1, -1, -1):
            g = self.layers[i].backward(g, need_input_grad=i > 0)
        grads = {}
        for i, layer in enumerate(self.layers):
            for key, value in layer.grads.items():
                name = f"{i}.{layer.name}.{key}"
                if self.adapt[name]:
                    grads[name] = value
            layer.grads.clear()
        return grads

    def predict_proba(self, batch: np.ndarray, source_stats: bool = False) -> np.ndarray:
        from .losses import softmax

        return softmax(self.forward(batch, "eval", source_stats))

    def copy(self) -> "Network":
        from .checkpoint import clone

        return clone(self)

    def config_dict(self) -> dict:
        return asdict(self.arch)
