"""Online reference estimation and whitening of trials.

The reference is the weighted arithmetic (``ea``) or geometric (``ra``) mean
of the buffered trial covariances; a trial is aligned by left-multiplying it
with the reference's inverse square root.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import spd
from .buffer import RingBuffer, Trial, Weighting

METHODS = ("none", "ea", "ra")

# eigenvalue floor of the reference, relative to trace / C
RIDGE = 1e-6


def whitener(reference: np.ndarray, ridge: float = RIDGE) -> np.ndarray:
    """Inverse square root of ``reference`` with eigenvalues floored at
    ``ridge * trace / C``. Well-conditioned references are not modified."""
    eig = spd.sym_eig(reference)
    lam = eig.eigenvalues
    floor = ridge * float(lam.sum()) / lam.shape[-1]
    if not floor > 0:
        raise spd.SingularMatrixError("reference matrix has non-positive trace")
    lam = np.maximum(lam, floor)
    v = eig.eigenvectors
    return spd.symmetrize((v / np.sqrt(lam)) @ v.T)


def reference(covs: np.ndarray, weights: np.ndarray, method: str,
              tol: float = spd.KARCHER_TOL, max_iter: int = spd.KARCHER_MAX_ITER) -> np.ndarray:
    if method == "ea":
        return spd.arithmetic_mean(covs, weights)
    if method == "ra":
        init = spd.arithmetic_mean(covs, weights)
        return spd.geometric_mean(covs, weights, tol=tol, max_iter=max_iter, init=init)
    raise ValueError(f"no reference for alignment method {method!r}")


@dataclass
class AlignmentState:
    """Per-stream alignment state.

    Covariances are computed once per trial and cached by ``trial_id``; the
    cache is pruned to the ids currently in the buffer.
    """

    method: str = "none"
    regularization: float = 0.0
    center: bool = False
    last_reference: np.ndarray | None = None
    covariance_cache: dict[int, np.ndarray] = field(default_factory=dict)
    _whitener: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.method = self.method.lower()
        if self.method not in METHODS:
            raise ValueError(f"unknown alignment method {self.method!r}")

    def covariance(self, trial: Trial) -> np.ndarray:
        cov = self.covariance_cache.get(trial.trial_id)
        if cov is None:
            cov = spd.covariance(trial.data, self.regularization, self.center)
            self.covariance_cache[trial.trial_id] = cov
        return cov

    def update_reference(self, buf: RingBuffer) -> np.ndarray | None:
        if len(buf) == 0:
            raise ValueError("cannot estimate a reference from an empty buffer")
        if self.method == "none":
            return None
        live = set(buf.ids())
        for key in [k for k in self.covariance_cache if k not in live]:
            del self.covariance_cache[key]
        covs = np.stack([self.covariance(t) for t in buf])
        self.last_reference = reference(covs, buf.weights(), self.method)
        self._whitener = whitener(self.last_reference)
        return self.last_reference

    def align_data(self, data: np.ndarray) -> np.ndarray:
        """Whiten a ``C x T`` array or a ``(B, C, T)`` stack."""
        if self.method == "none":
            return np.asarray(data, dtype=np.float64)
        if self._whitener is None:
            raise RuntimeError("align called before any reference was estimated")
        return np.matmul(self._whitener, data)

    def align(self, trial: Trial) -> Trial:
        return trial.with_data(self.align_data(trial.data))


def align_chunks(data: np.ndarray, method: str, chunk: int, weighting: Weighting | None = None) -> np.ndarray:
    """Align a ``(N, C, T)`` array in consecutive chunks of ``chunk`` trials,
    one reference per chunk. Used to align source-training data the same way
    a full buffer aligns a stream."""
    data = np.asarray(data, dtype=np.float64)
    if method == "none":
        return data.copy()
    weighting = weighting or Weighting("uniform")
    out = np.empty_like(data)
    for start in range(0, len(data), chunk):
        part = data[start:start + chunk]
        covs = np.stack([spd.covariance(x) for x in part])
        ref = reference(covs, weighting.weights(len(part)), method)
        out[start:start + chunk] = np.matmul(whitener(ref), part)
    return out
