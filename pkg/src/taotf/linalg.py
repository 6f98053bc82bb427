"""Dense linear algebra: Jacobi SVD, polar factor, symmetric power iteration.

Everything works on float64 numpy arrays. Small matrices go through a
one-sided (Hestenes) Jacobi SVD with a round-robin pair ordering so each
round rotates ``p // 2`` disjoint column pairs at once. Matrices above
``JACOBI_MAX_ENTRIES`` are handed to LAPACK, which the training loops need
for the wide first layers.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

MAX_SWEEPS = 60
JACOBI_TOL = 1e-12
RANK_TOL = 1e-12
JACOBI_MAX_ENTRIES = 4096


class SvdConvergenceError(RuntimeError):
    pass


class RankDeficientError(ValueError):
    pass


class SvdResult(NamedTuple):
    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"matrix must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def oriented(w: np.ndarray) -> np.ndarray:
    """Return ``w`` transposed if it has fewer rows than columns."""
    return w.T if w.shape[0] < w.shape[1] else w


def _round_robin(p: int) -> list[tuple[np.ndarray, np.ndarray]]:
    # circle-method tournament; index p is a bye when p is odd
    m = p + (p % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        left, right = [], []
        for k in range(m // 2):
            i, j = players[k], players[m - 1 - k]
            if i < p and j < p:
                left.append(min(i, j))
                right.append(max(i, j))
        rounds.append((np.array(left, dtype=np.intp), np.array(right, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _complete_basis(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    # replace the columns of u flagged ~good by unit vectors orthogonal to the rest
    n, r = u.shape
    u = u.copy()
    basis = [u[:, k] for k in range(r) if good[k]]
    for k in range(r):
        if good[k]:
            continue
        # the coordinate vector with the largest residual; averaging over all
        # n of them shows that residual is at least sqrt((n - len(basis)) / n)
        resid = np.eye(n)
        for _ in range(2):
            for b in basis:
                resid -= np.outer(resid @ b, b)
        norms = np.linalg.norm(resid, axis=1)
        v = resid[int(np.argmax(norms))]
        v = v / np.linalg.norm(v)
        u[:, k] = v
        basis.append(v)
    return u


def jacobi_svd(a, max_sweeps: int = MAX_SWEEPS, tol: float = JACOBI_TOL) -> SvdResult:
    """Thin SVD by one-sided Jacobi rotations.

    Returns ``u`` (n x r), ``sigma`` (r,) non-increasing and ``v`` (p x r)
    with ``r = min(n, p)``. Raises SvdConvergenceError when the columns are
    still not mutually orthogonal after ``max_sweeps`` sweeps.
    """
    a = as_matrix(a)
    n, p = a.shape
    if n < p:
        u, s, v = jacobi_svd(a.T, max_sweeps, tol)
        return SvdResult(v, s, u)

    # work at unit scale so squared column norms cannot overflow or underflow
    scale = float(np.max(np.abs(a)))
    work = a / scale if scale > 0 else a.copy()
    v = np.eye(p)
    rounds = _round_robin(p) if p > 1 else []
    tiny = np.finfo(np.float64).tiny
    # columns this small relative to the whole matrix are numerically zero
    negligible = (np.finfo(np.float64).eps * np.linalg.norm(work)) ** 2
    for _ in range(max_sweeps):
        rotated = False
        for left, right in rounds:
            ai = work[:, left]
            aj = work[:, right]
            alpha = np.einsum("ij,ij->j", ai, ai)
            beta = np.einsum("ij,ij->j", aj, aj)
            gamma = np.einsum("ij,ij->j", ai, aj)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            active &= alpha * beta > tiny
            active &= np.minimum(alpha, beta) > negligible
            if not active.any():
                continue
            rotated = True
            li, ri = left[active], right[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for m in (work, v):
                xi = m[:, li]
                xj = m[:, ri]
                m[:, li] = c * xi - s * xj
                m[:, ri] = s * xi + c * xj
        if not rotated:
            break
    else:
        raise SvdConvergenceError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")

    sigma = np.sqrt(np.einsum("ij,ij->j", work, work))
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    floor = sigma[0] * max(n, p) * np.finfo(np.float64).eps
    good = sigma > floor
    u = np.zeros_like(work)
    u[:, good] = work[:, good] / sigma[good]
    if not good.all():
        u = _complete_basis(u, good)
    return SvdResult(u, sigma * scale if scale > 0 else sigma, v)


def svd(a) -> SvdResult:
    """Thin SVD, deterministic for identical input.

    Jacobi for matrices up to ``JACOBI_MAX_ENTRIES`` entries, LAPACK above.
    """
    a = as_matrix(a)
    if a.size <= JACOBI_MAX_ENTRIES:
        return jacobi_svd(a)
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    return SvdResult(u, s, vt.T)


def polar(a) -> np.ndarray:
    """Orthonormal polar factor ``U V^T`` of a tall full-column-rank matrix.

    This is the column-orthonormal matrix nearest to ``a`` in Frobenius norm.
    """
    a = as_matrix(a)
    n, p = a.shape
    if n < p:
        raise ValueError(f"polar needs rows >= cols, got {a.shape}")
    u, s, v = svd(a)
    if s[-1] <= RANK_TOL * s[0] or s[0] == 0.0:
        raise RankDeficientError(
            f"polar factor is not unique: sigma_min={s[-1]:.3e}, sigma_max={s[0]:.3e}"
        )
    return u @ v.T


def _check_symmetric(s: np.ndarray) -> None:
    if s.shape[0] != s.shape[1]:
        raise ValueError(f"expected a square matrix, got {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s))))
    if np.max(np.abs(s - s.T)) > 1e-12 * scale:
        raise ValueError("matrix is not symmetric")


def dominant_eigenpair(s) -> tuple[float, np.ndarray, float]:
    """Exact eigenpair of largest magnitude for a symmetric matrix.

    Returns ``(eigenvalue, unit eigenvector, gap)`` where ``gap`` is the
    difference between the two largest eigenvalue magnitudes.
    """
    s = as_matrix(s)
    _check_symmetric(s)
    u, sig, v = svd(s)
    sign = 1.0 if u[:, 0] @ v[:, 0] >= 0 else -1.0
    gap = float(sig[0] - sig[1]) if sig.size > 1 else math.inf
    return sign * float(sig[0]), v[:, 0].copy(), gap


def spectral_norm_sym(s, iters: int = 0, seed: int = 0, u0=None) -> tuple[float, np.ndarray]:
    """Largest |eigenvalue| of a symmetric matrix and its eigenvector.

    ``iters == 0`` computes it exactly through the SVD. Otherwise runs
    ``iters`` power iterations from ``u0`` (warm start) or from a seeded
    random unit vector. A zero matrix gives 0.
    """
    s = as_matrix(s)
    _check_symmetric(s)
    n = s.shape[0]
    if not np.any(s):
        e = np.zeros(n)
        e[0] = 1.0
        return 0.0, e
    if iters == 0:
        lam, u, _ = dominant_eigenpair(s)
        return abs(lam), u

    if u0 is not None and np.linalg.norm(u0) > 0:
        v = np.asarray(u0, dtype=np.float64) / np.linalg.norm(u0)
    else:
        v = np.random.default_rng(seed).standard_normal(n)
        v /= np.linalg.norm(v)
    sv = s @ v
    for _ in range(iters):
        norm = np.linalg.norm(sv)
        if norm == 0.0:
            return 0.0, v
        v = sv / norm
        sv = s @ v
        rho = v @ sv
        if np.linalg.norm(sv - rho * v) <= 1e-15 * abs(rho):
            break

    est = float(np.linalg.norm(sv))
    rho = float(v @ sv)
    if abs(rho) < (1.0 - 1e-3) * est:
        # v is mixing a +/- pair of equal magnitude; split out one member
        plus = sv + est * v
        minus = sv - est * v
        w = plus if np.linalg.norm(plus) >= np.linalg.norm(minus) else minus
        v = w / np.linalg.norm(w)
        rho = float(v @ (s @ v))
    return abs(rho), v


def frobenius_distance_to_identity(w) -> float:
    """``||W^T W - I||_F`` for ``w`` oriented so rows >= cols."""
    w = oriented(as_matrix(w))
    gram = w.T @ w
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.linalg.norm(gram))
