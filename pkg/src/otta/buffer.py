"""FIFO trial buffer with per-slot weighting for the reference estimate."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class Trial:
    """One C x T window. ``label`` is only ever used for scoring."""

    data: np.ndarray
    label: int | None = None
    trial_id: int = 0

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"trial data must be C x T, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError(f"trial {self.trial_id} has non-finite samples")
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def with_data(self, data: np.ndarray) -> "Trial":
        return Trial(data, self.label, self.trial_id)


@dataclass(frozen=True)
class Weighting:
    """Slot weighting: ``uniform``, ``linear`` or ``ema`` with a momentum."""

    kind: str = "uniform"
    momentum: float = 0.1

    def __post_init__(self):
        if self.kind not in ("uniform", "linear", "ema"):
            raise ValueError(f"unknown weighting scheme {self.kind!r}")
        if self.kind == "ema" and not 0.0 < self.momentum < 1.0:
            raise ValueError("ema momentum must lie in (0, 1)")

    @classmethod
    def parse(cls, text: str) -> "Weighting":
        """Accept ``uniform``, ``linear``, ``ema`` or ``ema(0.1)``."""
        text = text.strip().lower()
        if text.startswith("ema"):
            rest = text[3:].strip()
            if rest:
                if not (rest.startswith("(") and rest.endswith(")")):
                    raise ValueError(f"cannot parse weighting {text!r}")
                return cls("ema", float(rest[1:-1]))
            return cls("ema")
        return cls(text)

    def __str__(self) -> str:
        return f"ema({self.momentum:g})" if self.kind == "ema" else self.kind

    def weights(self, n: int) -> np.ndarray:
        """Normalized weights for ``n`` slots, oldest first."""
        if n < 1:
            raise ValueError("weights need a non-empty buffer")
        if self.kind == "uniform":
            raw = np.ones(n)
        elif self.kind == "linear":
            raw = np.arange(1, n + 1, dtype=np.float64)
        else:
            # newest gets m, each step back multiplies by (1 - m)
            raw = self.momentum * (1.0 - self.momentum) ** np.arange(n - 1, -1, -1, dtype=np.float64)
        return raw / raw.sum()


@dataclass
class RingBuffer:
    """The most recent ``capacity`` trials of a stream, oldest first."""

    capacity: int = 32
    scheme: Weighting = field(default_factory=Weighting)
    _slots: deque = field(init=False, repr=False)
    _shape: tuple[int, int] | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self._slots = deque(maxlen=self.capacity)

    def push(self, trial: Trial) -> Trial | None:
        """Append ``trial``; returns the evicted trial when the buffer was full."""
        if self._shape is not None and trial.shape != self._shape:
            raise ValueError(f"trial shape {trial.shape} does not match stream shape {self._shape}")
        if self._slots and trial.trial_id <= self._slots[-1].trial_id:
            raise ValueError("trial ids must increase along the stream")
        self._shape = trial.shape
        evicted = self._slots[0] if len(self._slots) == self.capacity else None
        self._slots.append(trial)
        return evicted

    def weights(self) -> np.ndarray:
        return self.scheme.weights(len(self._slots))

    def trials(self) -> list[Trial]:
        return list(self._slots)

    def ids(self) -> list[int]:
        return [t.trial_id for t in self._slots]

    def stacked(self) -> np.ndarray:
        return np.stack([t.data for t in self._slots])

    @property
    def newest(self) -> Trial:
        return self._slots[-1]

    @property
    def full(self) -> bool:
        return len(self._slots) == self.capacity

    def __len__(self) -> int:
        return len(self._slots)

    def __iter__(self) -> Iterator[Trial]:
        return iter(self._slots)
