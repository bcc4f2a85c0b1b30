"""Layers with explicit forward/backward passes.

Each layer caches what its backward pass needs during ``forward`` when
``record=True``; calling ``backward`` without a recorded forward raises
:class:`TapeError`. Parameters live in ``layer.params`` (storage dtype set
by the network) and gradients land in ``layer.grads`` as float64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


class TapeError(RuntimeError):
    """Backward requested without a recorded forward pass."""


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str, where: str = "output"):
        super().__init__(f"non-finite values in {where} of layer {layer!r}")
        self.layer = layer


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, phase: str, record: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def _pop_cache(self):
        if self._cache is None:
            raise TapeError(f"layer {self.name!r} has no recorded forward pass")
        cache, self._cache = self._cache, None
        return cache

    def p(self, key: str) -> np.ndarray:
        return self.params[key].astype(np.float64, copy=False)


class TemporalConv(Layer):
    """``(B, C, T) -> (B, F, C, T)``: each of F kernels slides along time on
    every channel, zero padded to keep length T (left pad ``(K-1)//2``)."""

    name = "temporal_conv"

    def __init__(self, n_kernels: int, length: int):
        super().__init__()
        self.length = length
        self.params["weight"] = np.zeros((n_kernels, length))

    def _pad(self, x):
        k = self.length
        return np.pad(x, ((0, 0), (0, 0), ((k - 1) // 2, k // 2)))

    def forward(self, x, phase, record):
        windows = sliding_window_view(self._pad(x), self.length, axis=2)  # B, C, T, K
        b, c, t, k = windows.shape
        out = (windows.reshape(-1, k) @ self.p("weight").T).reshape(b, c, t, -1)
        if record:
            self._cache = windows
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))

    def backward(self, grad, need_input_grad=True):
        windows = self._pop_cache()
        b, c, t, k = windows.shape
        g = grad.transpose(0, 2, 3, 1).reshape(-1, grad.shape[1])  # (B C T), F
        self.grads["weight"] = g.T @ windows.reshape(-1, k)
        if not need_input_grad:
            return None
        gw = (g @ self.p("weight")).reshape(b, c, t, k)
        gx = np.zeros((b, c, t + k - 1))
        for j in range(k):
            gx[:, :, j:j + t] += gw[:, :, :, j]
        lo = (k - 1) // 2
        return gx[:, :, lo:lo + t]


class SpatialConv(Layer):
    """Depthwise spatial filter: ``(B, F, C, T) -> (B, F*D, T)``; output
    feature ``f*D + d`` mixes all C channels of input map ``f``."""

    name = "spatial_conv"

    def __init__(self, n_maps: int, depth: int, n_channels: int):
        super().__init__()
        self.n_maps, self.depth = n_maps, depth
        self.params["weight"] = np.zeros((n_maps * depth, n_channels))

    def forward(self, x, phase, record):
        w = self.p("weight").reshape(self.n_maps, self.depth, -1)
        out = np.einsum("bfct,fdc->bfdt", x, w, optimize=True)
        if record:
            self._cache = x
        return out.reshape(x.shape[0], -1, x.shape[3])

    def backward(self, grad, need_input_grad=True):
        x = self._pop_cache()
        g = grad.reshape(grad.shape[0], self.n_maps, self.depth, -1)
        self.grads["weight"] = np.einsum("bfdt,bfct->fdc", g, x, optimize=True).reshape(self.n_maps * self.depth, -1)
        if not need_input_grad:
            return None
        w = self.p("weight").reshape(self.n_maps, self.depth, -1)
        return np.einsum("bfdt,fdc->bfct", g, w, optimize=True)


@dataclass(frozen=True)
class BNMode:
    """Which statistics normalize activations outside training.

    ``source``: running (source) statistics. ``bn1``: statistics of the
    current batch. ``bn_alpha``: ``(1 - value) * source + value * batch``.
    ``bn_ema``: exponential average of batch statistics with rate ``value``,
    started from the source statistics.
    """

    kind: str = "source"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("source", "bn1", "bn_alpha", "bn_ema"):
            raise ValueError(f"unknown batch-norm mode {self.kind!r}")
        if self.kind == "bn_alpha" and not 0.0 <= self.value <= 1.0:
            raise ValueError("bn_alpha needs alpha in [0, 1]")
        if self.kind == "bn_ema" and not 0.0 < self.value <= 1.0:
            raise ValueError("bn_ema needs a rate in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "BNMode":
        text = text.strip().lower().replace("-", "_")
        if "(" in text:
            kind, _, rest = text.partition("(")
            if not rest.endswith(")"):
                raise ValueError(f"cannot parse batch-norm mode {text!r}")
            return cls(kind.strip(), float(rest[:-1]))
        if text == "bn_ema":
            return cls("bn_ema", 0.1)
        if text == "bn_alpha":
            return cls("bn_alpha", 0.5)
        return cls(text)

    def __str__(self) -> str:
        return f"{self.kind}({self.value:g})" if self.kind in ("bn_alpha", "bn_ema") else self.kind


class BatchNorm(Layer):
    """Per-feature normalization of ``(B, F, T)``; statistics over batch and time.

    Training uses batch statistics and updates the running (source) statistics
    with ``momentum``. Otherwise ``mode`` picks the statistics; whenever they
    depend on the batch, gradients flow through them.
    """

    name = "batch_norm"

    def __init__(self, num_features: int, momentum: float = 0.1):
        super().__init__()
        self.num_features = num_features
        self.momentum = momentum
        self.eps = BN_EPS
        self.params["gamma"] = np.ones(num_features)
        self.params["beta"] = np.zeros(num_features)
        self.running_mean = np.zeros(num_features)
        self.running_var = np.ones(num_features)
        self.mode = BNMode()
        self.ema_mean: np.ndarray | None = None
        self.ema_var: np.ndarray | None = None
        self.force_source = False

    def reset_ema(self):
        self.ema_mean = None
        self.ema_var = None

    def statistics(self, batch_mean: np.ndarray, batch_var: np.ndarray, update: bool = True):
        """Return ``(mean, var, batch_weight)`` for the current mode.

        ``batch_weight`` is how strongly the returned statistics depend on the
        batch statistics, which the backward pass needs.
        """
        if np.any(batch_var < 0):
            raise ValueError("negative batch variance")
        mu_s = self.running_mean.astype(np.float64)
        var_s = self.running_var.astype(np.float64)
        mode = self.mode
        if self.force_source or mode.kind == "source":
            return mu_s, var_s, 0.0
        if mode.kind == "bn1":
            return batch_mean, batch_var, 1.0
        if mode.kind == "bn_alpha":
            a = mode.value
            return (1.0 - a) * mu_s + a * batch_mean, (1.0 - a) * var_s + a * batch_var, a
        mean = mu_s if self.ema_mean is None else self.ema_mean
        var = var_s if self.ema_var is None else self.ema_var
        r = mode.value
        mean = (1.0 - r) * mean + r * batch_mean
        var = (1.0 - r) * var + r * batch_var
        if update:
            self.ema_mean, self.ema_var = mean, var
        return mean, var, 0.0

    def forward(self, x, phase, record):
        batch_mean = x.mean(axis=(0, 2))
        batch_var = x.var(axis=(0, 2))
        if phase == "train":
            mean, var, weight = batch_mean, batch_var, 1.0
            m = self.momentum
            dtype = self.running_mean.dtype
            self.running_mean = ((1 - m) * self.running_mean + m * batch_mean).astype(dtype)
            self.running_var = ((1 - m) * self.running_var + m * batch_var).astype(dtype)
        else:
            mean, var, weight = self.statistics(batch_mean, batch_var)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv_std[None, :, None]
        if record:
            self._cache = (x, xhat, batch_mean, mean, inv_std, weight)
        return xhat * self.p("gamma")[None, :, None] + self.p("beta")[None, :, None]

    def backward(self, grad, need_input_grad=True):
        x, xhat, batch_mean, mean, inv_std, weight = self._pop_cache()
        self.grads["gamma"] = np.sum(grad * xhat, axis=(0, 2))
        self.grads["beta"] = np.sum(grad, axis=(0, 2))
        if not need_input_grad:
            return None
        gxhat = grad * self.p("gamma")[None, :, None]
        gx = gxhat * inv_std[None, :, None]
        if weight:
            n = x.shape[0] * x.shape[2]
            g_mean = -np.sum(gxhat, axis=(0, 2)) * inv_std
            g_var = -0.5 * np.sum(gxhat * (x - mean[None, :, None]), axis=(0, 2)) * inv_std ** 3
            gx = gx + weight * (g_mean[None, :, None] / n
                                + g_var[None, :, None] * 2.0 * (x - batch_mean[None, :, None]) / n)
        return gx


class ELU(Layer):
    name = "elu"

    def forward(self, x, phase, record):
        neg = x < 0
        expm = np.expm1(np.minimum(x, 0.0))
        if record:
            self._cache = (neg, expm)
        return np.where(neg, expm, x)

    def backward(self, grad, need_input_grad=True):
        neg, expm = self._pop_cache()
        return grad * np.where(neg, expm + 1.0, 1.0)


class AvgPool(Layer):
    """Non-overlapping mean over ``factor`` time steps; a trailing remainder
    shorter than ``factor`` is dropped."""

    name = "avg_pool"

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x, phase, record):
        b, f, t = x.shape
        n = t // self.factor
        if record:
            self._cache = t
        return x[:, :, :n * self.factor].reshape(b, f, n, self.factor).mean(axis=3)

    def backward(self, grad, need_input_grad=True):
        t = self._pop_cache()
        b, f, n = grad.shape
        out = np.zeros((b, f, t))
        out[:, :, :n * self.factor] = np.repeat(grad / self.factor, self.factor, axis=2)
        return out


class Dropout(Layer):
    """Inverted dropout, active only in the train phase."""

    name = "dropout"

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x, phase, record):
        if phase != "train" or self.rate == 0.0:
            if record:
                self._cache = None, True
            return x
        keep = (self.rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        if record:
            self._cache = keep, True
        return x * keep

    def backward(self, grad, need_input_grad=True):
        keep, _ = self._pop_cache()
        return grad if keep is None else grad * keep


class Linear(Layer):
    """Flattens everything after the batch axis, then ``x W^T + b``."""

    name = "linear"

    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.params["weight"] = np.zeros((out_features, in_features))
        self.params["bias"] = np.zeros(out_features)

    def forward(self, x, phase, record):
        flat = x.reshape(x.shape[0], -1)
        if record:
            self._cache = (flat, x.shape)
        return flat @ self.p("weight").T + self.p("bias")

    def backward(self, grad, need_input_grad=True):
        flat, shape = self._pop_cache()
        self.grads["weight"] = grad.T @ flat
        self.grads["bias"] = grad.sum(axis=0)
        if not need_input_grad:
            return None
        return (grad @ self.p("weight")).reshape(shape)
