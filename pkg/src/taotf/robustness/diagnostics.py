"""Robustness tables and the Lipschitz / spectrum diagnostics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from ..linalg import frobenius_distance_to_identity, svd
from ..nn import Network, logits, weight_view
from .corruptions import CorruptionSpec, corrupt_batch


@dataclass
class LayerSpectrum:
    layer: int
    sigma_max: float
    sigma_min: float
    orth_error: float


def spectrum_report(net: Network) -> list[LayerSpectrum]:
    """Singular-value extremes and ``||W^T W - I||_F`` for each weight view."""
    idx = net.view_indices()
    if not idx:
        raise ValueError("network has no weight views")
    report = []
    for i in idx:
        w = weight_view(net.layers[i])
        s = svd(w).sigma
        report.append(LayerSpectrum(i, float(s[0]), float(s[-1]), frobenius_distance_to_identity(w)))
    return report


def empirical_lipschitz(net: Network, samples, n_pairs: int, seed: int = 0, delta: float = 1e-3) -> float:
    """Lower bound on the logit-level Lipschitz constant.

    Takes the largest ``|f(x1) - f(x2)| / |x1 - x2|`` over ``n_pairs`` random
    sample pairs and ``n_pairs`` pairs ``(x, x + delta * noise)``. Coincident
    pairs are skipped.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(len(x), -1)
    rng = np.random.default_rng(seed)
    i = rng.integers(0, len(x), n_pairs)
    j = rng.integers(0, len(x), n_pairs)
    a = np.concatenate([x[i], x[i]])
    b = np.concatenate([x[j], x[i] + delta * rng.standard_normal((n_pairs, x.shape[1]))])
    dx = np.linalg.norm(a - b, axis=1)
    keep = dx > 0
    if not keep.any():
        raise ValueError("all sampled pairs coincide")
    fa = logits(net, a[keep])
    fb = logits(net, b[keep])
    return float(np.max(np.linalg.norm(fa - fb, axis=1) / dx[keep]))


@dataclass
class RobustnessTable:
    clean: float
    columns: dict

    def as_row(self) -> dict:
        return {"clean": self.clean, **self.columns}

    def to_csv(self) -> str:
        buf = io.StringIO()
        row = self.as_row()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(row))
        writer.writerow([f"{v:.6f}" for v in row.values()])
        return buf.getvalue()


def robustness_table(net: Network, data, specs: list[CorruptionSpec], split: str = "test") -> RobustnessTable:
    """Clean accuracy plus accuracy under each corruption on one split.

    Columns are keyed by corruption kind; a repeated kind gets its severity
    appended to keep keys unique.
    """
    from ..trainer import evaluate

    if not specs:
        raise ValueError("empty corruption list")
    images, labels = data.split(split)
    clean = evaluate(net, images, labels)[0]
    columns = {}
    for spec in specs:
        key = spec.kind if spec.kind not in columns else f"{spec.kind}@{spec.severity:g}"
        columns[key] = evaluate(net, corrupt_batch(images, spec), labels)[0]
    return RobustnessTable(clean, columns)
