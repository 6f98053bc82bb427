"""Spectral restricted isometry penalty ``sigma(W^T W - I)`` and its gradient.

``W`` is always the oriented weight view (rows >= cols), so the Gram
deviation is the smaller of the two possible square matrices.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, dominant_eigenpair, oriented, spectral_norm_sym, svd

GAP_TOL = 1e-10
# |lambda| at or below this is rounding noise around a minimizer (S = 0),
# where the zero matrix is the subgradient returned
ZERO_TOL = 1e-12


class DegenerateSpectrumWarning(RuntimeWarning):
    """The top two eigenvalue magnitudes of the Gram deviation coincide."""


@dataclass
class SripConfig:
    lam: float = 1e-3
    power_iters: int = 4
    exact_mode: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not self.exact_mode and self.power_iters < 1:
            raise ValueError("power_iters must be >= 1 unless exact_mode is set")


def gram_deviation(w) -> np.ndarray:
    w = oriented(as_matrix(w))
    s = w.T @ w
    s = 0.5 * (s + s.T)
    s[np.diag_indices_from(s)] -= 1.0
    return s


def _eigenpair(s: np.ndarray, cfg: SripConfig, u0=None, warn: bool = False):
    """(signed eigenvalue, eigenvector) of largest magnitude."""
    if cfg.exact_mode:
        lam, u, gap = dominant_eigenpair(s)
        if warn and gap < GAP_TOL and s.shape[0] > 1 and abs(lam) > ZERO_TOL:
            warnings.warn(
                f"dominant eigenvalue of the Gram deviation is not simple (gap {gap:.2e})",
                DegenerateSpectrumWarning,
                stacklevel=3,
            )
        return lam, u
    _, u = spectral_norm_sym(s, cfg.power_iters, cfg.seed, u0=u0)
    return float(u @ s @ u), u


def srip_penalty(w, cfg: SripConfig) -> float:
    s = gram_deviation(w)
    return abs(_eigenpair(s, cfg)[0])


def _grad_from(w: np.ndarray, lam: float, u: np.ndarray) -> np.ndarray:
    flip = w.shape[0] < w.shape[1]
    if abs(lam) <= ZERO_TOL:
        return np.zeros_like(w)
    wo = w.T if flip else w
    g = np.sign(lam) * 2.0 * np.outer(wo @ u, u)
    return g.T if flip else g


def srip_grad(w, cfg: SripConfig) -> np.ndarray:
    """Gradient of ``srip_penalty`` with the eigenvector held fixed.

    Shape matches ``w`` (the orientation transpose is undone).
    """
    w = as_matrix(w)
    lam, u = _eigenpair(gram_deviation(w), cfg, warn=True)
    return _grad_from(w, lam, u)


def rip_constant(w) -> float:
    """Smallest delta with (1-delta)|x|^2 <= |Wx|^2 <= (1+delta)|x|^2."""
    s = svd(oriented(as_matrix(w))).sigma
    return float(max(s[0] ** 2 - 1.0, 1.0 - s[-1] ** 2))


class SripState:
    """Per-layer power-iteration state, warm-started between training steps."""

    def __init__(self, cfg: SripConfig):
        self.cfg = cfg
        self.u = None

    def penalty_and_grad(self, w) -> tuple[float, np.ndarray]:
        w = as_matrix(w)
        lam, u = _eigenpair(gram_deviation(w), self.cfg, u0=self.u, warn=True)
        self.u = u
        return abs(lam), _grad_from(w, lam, u)
