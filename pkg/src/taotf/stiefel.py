"""Stiefel manifold St(p, n) = {X in R^{n x p} : X^T X = I_p}.

Euclidean-metric tangent projection and polar retraction. The
``riemannian_step`` here is the hard-constraint baseline: a projected
gradient step that never leaves the manifold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, polar

DEFAULT_TOL = 1e-8


def _gram_error(x: np.ndarray) -> float:
    gram = x.T @ x
    gram[np.diag_indices_from(gram)] -= 1.0
    return float(np.linalg.norm(gram))


@dataclass(frozen=True)
class StiefelPoint:
    mat: np.ndarray
    tol: float = DEFAULT_TOL

    def __post_init__(self):
        mat = as_matrix(self.mat)
        if mat.shape[0] < mat.shape[1]:
            raise ValueError(f"Stiefel point needs n >= p, got {mat.shape}")
        err = _gram_error(mat)
        if err > self.tol:
            raise ValueError(f"not on the Stiefel manifold: ||X^T X - I||_F = {err:.3e}")
        object.__setattr__(self, "mat", mat)

    @property
    def shape(self):
        return self.mat.shape


def is_on_manifold(x, tol: float = DEFAULT_TOL) -> bool:
    x = as_matrix(x)
    if x.shape[0] < x.shape[1]:
        raise ValueError(f"Stiefel membership needs n >= p, got {x.shape}")
    return _gram_error(x) <= tol


def project(a) -> StiefelPoint:
    """Nearest point on the manifold (the polar factor)."""
    return StiefelPoint(polar(a))


def random_point(n: int, p: int, seed: int) -> StiefelPoint:
    """Haar-distributed point from the QR of a seeded Gaussian matrix.

    R's diagonal is made positive so the output is a deterministic function
    of the seed.
    """
    if not n >= p >= 1:
        raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
    g = np.random.default_rng(seed).standard_normal((n, p))
    q, r = np.linalg.qr(g)
    signs = np.where(np.diag(r) < 0, -1.0, 1.0)
    return StiefelPoint(q * signs)


def tangent_project(x: StiefelPoint, g) -> np.ndarray:
    """``G - X sym(X^T G)``; the result T satisfies X^T T + T^T X = 0."""
    g = as_matrix(g)
    xm = x.mat
    if g.shape != xm.shape:
        raise ValueError(f"shape mismatch: point {xm.shape}, direction {g.shape}")
    xtg = xm.T @ g
    return g - xm @ (0.5 * (xtg + xtg.T))


def riemannian_step(x: StiefelPoint, g, lr: float) -> StiefelPoint:
    """One retraction step ``polar(X - lr * grad_R)``."""
    if lr <= 0:
        raise ValueError(f"lr must be positive, got {lr}")
    return project(x.mat - lr * tangent_project(x, g))
