"""Dense symmetric / SPD linear algebra.

Covariances, a cyclic Jacobi eigensolver, matrix functions built on it,
and the arithmetic and geometric (Karcher) means of SPD matrices.

Every function accepts a single ``(n, n)`` matrix; the eigen routines and
matrix functions also accept stacks ``(..., n, n)`` and work on all of
them at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

SYMMETRY_RTOL = 1e-10
EIG_FLOOR = 1e-12
JACOBI_MAX_SWEEPS = 100
KARCHER_TOL = 1e-8
KARCHER_MAX_ITER = 50


class SPDError(ValueError):
    """Base class for SPD-core failures."""


class NotSymmetricError(SPDError):
    pass


class NotPositiveDefiniteError(SPDError):
    pass


class SingularMatrixError(SPDError):
    pass


class ConvergenceError(SPDError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class EigDecomp:
    """Eigenvalues ascending along the last axis, eigenvectors as columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues[..., None, :]) @ np.swapaxes(v, -1, -2)


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def check_symmetric(m: np.ndarray, rtol: float = SYMMETRY_RTOL) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise NotSymmetricError(f"expected square matrices, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise SPDError("matrix has non-finite entries")
    scale = max(float(np.max(np.abs(m), initial=0.0)), np.finfo(float).tiny)
    asym = float(np.max(np.abs(m - np.swapaxes(m, -1, -2)), initial=0.0))
    if asym > rtol * scale:
        raise NotSymmetricError(f"matrix not symmetric: max |m - m^T| = {asym:.3e}")
    return m


def as_spd(m: np.ndarray) -> np.ndarray:
    """Validate ``m`` as symmetric positive definite and return it as float64."""
    m = check_symmetric(m)
    lam = sym_eig(m).eigenvalues
    if np.any(lam <= 0):
        raise NotPositiveDefiniteError(
            f"matrix not positive definite: min eigenvalue {float(lam.min()):.3e}"
        )
    return symmetrize(m)


def covariance(trial: np.ndarray, regularization: float = 0.0, center: bool = False) -> np.ndarray:
    """Unnormalized spatial covariance ``X X^T + regularization * I``.

    No ``1/T`` factor is applied; it cancels in the whitening step because all
    trials of a stream share ``T``.
    """
    x = np.asarray(trial, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError(f"trial must be C x T with T >= 1, got shape {x.shape}")
    if regularization < 0:
        raise ValueError("regularization must be non-negative")
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))
        raise ValueError(f"trial has {len(bad)} non-finite entries, first at {tuple(bad[0])}")
    if center:
        x = x - x.mean(axis=1, keepdims=True)
    cov = x @ x.T
    if regularization:
        cov = cov + regularization * np.eye(x.shape[0])
    return symmetrize(cov)


@njit(cache=True)
def _jacobi_kernel(a, v, max_sweeps, tol):
    k, n, _ = a.shape
    status = np.zeros(k, dtype=np.int64)
    residual = np.zeros(k)
    for m in range(k):
        fro = 0.0
        for i in range(n):
            for j in range(n):
                fro += a[m, i, j] * a[m, i, j]
        thresh = tol * max(np.sqrt(fro), 1e-300)
        sweep = 0
        while True:
            off = 0.0
            for i in range(n - 1):
                for j in range(i + 1, n):
                    off += 2.0 * a[m, i, j] * a[m, i, j]
            off = np.sqrt(off)
            residual[m] = off
            if off <= thresh:
                break
            if sweep == max_sweeps:
                status[m] = 1
                break
            sweep += 1
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[m, p, q]
                    if apq == 0.0:
                        continue
                    theta = (a[m, q, q] - a[m, p, p]) / (2.0 * apq)
                    if theta == 0.0:
                        t = 1.0
                    else:
                        t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    for i in range(n):
                        aip = a[m, i, p]
                        aiq = a[m, i, q]
                        a[m, i, p] = c * aip - s * aiq
                        a[m, i, q] = s * aip + c * aiq
                    for i in range(n):
                        api = a[m, p, i]
                        aqi = a[m, q, i]
                        a[m, p, i] = c * api - s * aqi
                        a[m, q, i] = s * api + c * aqi
                    a[m, p, q] = 0.0
                    a[m, q, p] = 0.0
                    for i in range(n):
                        vip = v[m, i, p]
                        viq = v[m, i, q]
                        v[m, i, p] = c * vip - s * viq
                        v[m, i, q] = s * vip + c * viq
    return status, residual


def _jacobi(a: np.ndarray, max_sweeps: int, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations on a stack ``(k, n, n)`` of symmetric matrices."""
    k, n, _ = a.shape
    a = np.ascontiguousarray(a, dtype=np.float64).copy()
    v = np.ascontiguousarray(np.broadcast_to(np.eye(n), (k, n, n))).copy()
    status, residual = _jacobi_kernel(a, v, max_sweeps, tol)
    if status.any():
        worst = int(np.argmax(status * residual))
        lam = np.abs(np.diagonal(a[worst]))
        cond = float(lam.max() / max(lam.min(), np.finfo(float).tiny))
        raise ConvergenceError(
            f"Jacobi did not converge in {max_sweeps} sweeps "
            f"(off-diagonal norm {residual[worst]:.3e}, diagonal spread ~{cond:.3e})",
            residual=float(residual[worst]),
        )
    return np.diagonal(a, axis1=1, axis2=2).copy(), v


def sym_eig(m: np.ndarray, max_sweeps: int = JACOBI_MAX_SWEEPS, tol: float = 1e-14) -> EigDecomp:
    """Eigendecomposition of symmetric matrices by cyclic Jacobi rotations.

    Parameters
    ----------
    m : ndarray of shape (..., n, n)
        Symmetric matrices.
    max_sweeps : int
        Sweep cap; exceeding it raises :class:`ConvergenceError`.
    tol : float
        Stop once the off-diagonal Frobenius norm is below ``tol`` times the
        matrix Frobenius norm.

    Returns
    -------
    EigDecomp
        Ascending eigenvalues and orthonormal eigenvectors (columns).
    """
    m = check_symmetric(m)
    shape = m.shape
    n = shape[-1]
    stack = symmetrize(m).reshape(-1, n, n)
    lam, vec = _jacobi(stack, max_sweeps, tol)
    order = np.argsort(lam, axis=1, kind="stable")
    lam = np.take_along_axis(lam, order, axis=1)
    vec = np.take_along_axis(vec, order[:, None, :], axis=2)
    return EigDecomp(lam.reshape(shape[:-1]), vec.reshape(shape))


def _apply(m: np.ndarray, fn, floor: float | None = None) -> np.ndarray:
    eig = sym_eig(m)
    lam = eig.eigenvalues
    if floor is not None and np.any(lam < floor):
        raise SingularMatrixError(
            f"eigenvalue {float(lam.min()):.3e} below floor {floor:.0e}; matrix effectively singular"
        )
    v = eig.eigenvectors
    return symmetrize((v * fn(lam)[..., None, :]) @ np.swapaxes(v, -1, -2))


def inv_sqrt(m: np.ndarray) -> np.ndarray:
    return _apply(m, lambda lam: 1.0 / np.sqrt(lam), floor=EIG_FLOOR)


def sqrt_m(m: np.ndarray) -> np.ndarray:
    return _apply(m, np.sqrt, floor=0.0)


def log_m(m: np.ndarray) -> np.ndarray:
    return _apply(m, np.log, floor=EIG_FLOOR)


def exp_m(s: np.ndarray) -> np.ndarray:
    return _apply(s, np.exp)


def _check_weights(weights, count: int) -> np.ndarray:
    if weights is None:
        return np.full(count, 1.0 / count)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (count,):
        raise ValueError(f"expected {count} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    if abs(float(w.sum()) - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {float(w.sum())!r}")
    return w


def _stack(mats) -> np.ndarray:
    stack = np.asarray(mats, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3 or stack.shape[0] < 1 or stack.shape[1] != stack.shape[2]:
        raise ValueError(f"expected a non-empty list of equal-size square matrices, got {stack.shape}")
    return stack


def arithmetic_mean(mats, weights=None) -> np.ndarray:
    """Weighted sum ``sum_i w_i M_i``; uniform weights when none are given."""
    stack = _stack(mats)
    w = _check_weights(weights, stack.shape[0])
    return symmetrize(np.tensordot(w, stack, axes=1))


def geometric_mean(
    mats,
    weights=None,
    tol: float = KARCHER_TOL,
    max_iter: int = KARCHER_MAX_ITER,
    init: np.ndarray | None = None,
    step: float = 1.0,
) -> np.ndarray:
    """Weighted Karcher mean under the affine-invariant metric.

    Fixed-point iteration ``G <- G^1/2 exp(step * S) G^1/2`` with
    ``S = sum_i w_i log(G^-1/2 M_i G^-1/2)``, started from the weighted
    arithmetic mean unless ``init`` is given. Stops when ``||S||_F < tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    stack = _stack(mats)
    w = _check_weights(weights, stack.shape[0])
    g = arithmetic_mean(stack, w) if init is None else symmetrize(np.asarray(init, dtype=np.float64))
    if stack.shape[0] == 1:
        return symmetrize(stack[0].copy())
    residual = np.inf
    for _ in range(max_iter):
        eig = sym_eig(g)
        if np.any(eig.eigenvalues < EIG_FLOOR):
            raise SingularMatrixError("Karcher iterate lost positive definiteness")
        v, lam = eig.eigenvectors, eig.eigenvalues
        g_half = (v * np.sqrt(lam)) @ v.T
        g_ihalf = (v / np.sqrt(lam)) @ v.T
        tangent = np.tensordot(w, log_m(symmetrize(g_ihalf @ stack @ g_ihalf)), axes=1)
        residual = float(np.linalg.norm(tangent))
        if residual < tol:
            return symmetrize(g)
        g = symmetrize(g_half @ exp_m(step * symmetrize(tangent)) @ g_half)
    raise ConvergenceError(
        f"Karcher mean did not converge in {max_iter} iterations (residual {residual:.3e})",
        residual=residual,
    )


def riemannian_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Affine-invariant distance ``||log(A^-1/2 B A^-1/2)||_F``."""
    ia = inv_sqrt(a)
    lam = sym_eig(symmetrize(ia @ b @ ia)).eigenvalues
    return float(np.sqrt(np.sum(np.log(lam) ** 2)))
