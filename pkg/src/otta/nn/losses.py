"""Losses on logits. Each returns ``(value, gradient w.r.t. logits)``."""

from __future__ import annotations

import numpy as np


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def entropy(logits: np.ndarray) -> np.ndarray:
    """Per-sample softmax entropy in nats."""
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    return -np.sum(np.exp(logp) * logp, axis=1)


def entropy_loss(logits: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax entropy over the batch."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or len(logits) == 0:
        raise ValueError("entropy_loss expects a non-empty (B, n_classes) array")
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -np.sum(p * logp, axis=1)
    grad = -p * (logp + h[:, None]) / len(logits)
    return float(h.mean()), grad


def smoothed_targets(labels, n_classes: int, delta: float) -> np.ndarray:
    """One-hot targets softened to ``y * (1 - delta) + delta / n_classes``."""
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"label smoothing must lie in [0, 1), got {delta}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or np.any(labels < 0) or np.any(labels >= n_classes):
        raise ValueError("labels must be class indices in [0, n_classes)")
    y = np.zeros((len(labels), n_classes))
    y[np.arange(len(labels)), labels] = 1.0
    return y * (1.0 - delta) + delta / n_classes


def label_smoothed_ce(logits: np.ndarray, labels, delta: float = 0.0) -> tuple[float, np.ndarray]:
    logits = np.asarray(logits, dtype=np.float64)
    y = smoothed_targets(labels, logits.shape[1], delta)
    if len(y) != len(logits):
        raise ValueError("labels and logits disagree on batch size")
    logp = log_softmax(logits)
    loss = -np.sum(y * logp, axis=1).mean()
    return float(loss), (np.exp(logp) - y) / len(logits)


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    return label_smoothed_ce(logits, labels, 0.0)
