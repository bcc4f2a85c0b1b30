"""Adam and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    """Bias-corrected Adam over a name -> array parameter registry.

    Moments are kept in float64; updated parameters are written back in
    their storage dtype.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Update every parameter that has an entry in ``grads``, in place."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            p = params[name]
            g = np.asarray(g, dtype=np.float64)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p[...] = (p.astype(np.float64) - update).astype(p.dtype)


def warmup_cosine(epoch: int, base_lr: float, warmup_epochs: int, total_epochs: int) -> float:
    """Learning rate for ``epoch`` (0-based): linear ramp ``base_lr * epoch /
    warmup_epochs`` then cosine decay reaching 0 at ``total_epochs``."""
    if warmup_epochs >= total_epochs:
        raise ValueError("warmup_epochs must be smaller than total epochs")
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    progress = (epoch - warmup_epochs) / (total_epochs - warmup_epochs)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))
