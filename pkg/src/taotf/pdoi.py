"""Polar-decomposition orthogonal initialization (stage one).

Repeats ``X_k = polar(s * grad g(X_{k-1}) + gamma * X_{k-1})`` until the
iterates stop moving, where ``s`` is ``gradient_sign``. Default ``+1`` is the
update exactly as originally published; ``-1`` turns it into a descent-like
step for a minimized loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import as_matrix, oriented, polar
from .stiefel import StiefelPoint, is_on_manifold, project


class PdoiError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"PDOI iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class PdoiConfig:
    gamma: float = 1.0
    # 0 disables stage one entirely (weights are left untouched)
    max_iters: int = 50
    rel_tol: float = 1e-6
    gradient_sign: int = 1
    calib_batch: int = 256
    seed: int = 0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if not self.rel_tol > 0:
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.gradient_sign not in (1, -1):
            raise ValueError(f"gradient_sign must be +1 or -1, got {self.gradient_sign}")
        if self.calib_batch < 1:
            raise ValueError(f"calib_batch must be >= 1, got {self.calib_batch}")


@dataclass
class PdoiTrace:
    iterates_used: int = 0
    final_delta: float = math.nan
    objectives: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterates_used": self.iterates_used,
            "final_delta": self.final_delta,
            "objectives": list(self.objectives),
        }


def pdoi_step(x, g, cfg: PdoiConfig) -> StiefelPoint:
    x = as_matrix(x)
    g = as_matrix(g)
    if x.shape != g.shape:
        raise ValueError(f"shape mismatch: x {x.shape}, gradient {g.shape}")
    return StiefelPoint(polar(cfg.gradient_sign * g + cfg.gamma * x))


def pdoi_init(
    x0,
    grad_fn: Callable[[np.ndarray], np.ndarray],
    cfg: PdoiConfig,
    objective_fn: Optional[Callable[[np.ndarray], float]] = None,
) -> tuple[StiefelPoint, PdoiTrace]:
    """Run the PDOI loop from ``x0``.

    An off-manifold ``x0`` is first projected, and that projection counts as
    iterate 1. Stops when ``||X_k - X_{k-1}||_F / sqrt(p) < rel_tol`` or after
    ``max_iters`` iterates. ``objective_fn``, if given, is recorded for each
    iterate in the trace.
    """
    x0 = as_matrix(x0)
    p = x0.shape[1]
    trace = PdoiTrace()
    if cfg.max_iters == 0:
        return project(x0), trace

    def record(x):
        if objective_fn is not None:
            trace.objectives.append(float(objective_fn(x)))

    if is_on_manifold(x0):
        x = x0
        k = 0
    else:
        x = project(x0).mat
        k = 1
        trace.final_delta = float(np.linalg.norm(x - x0) / math.sqrt(p))
        record(x)

    while k < cfg.max_iters:
        k += 1
        try:
            g = grad_fn(x)
        except Exception as exc:
            raise PdoiError(f"gradient callback failed: {exc}", k) from exc
        x_new = pdoi_step(x, g, cfg).mat
        delta = float(np.linalg.norm(x_new - x) / math.sqrt(p))
        x = x_new
        trace.final_delta = delta
        record(x)
        if delta < cfg.rel_tol:
            break
    trace.iterates_used = k
    return StiefelPoint(x), trace


def calibration_batch(images: np.ndarray, labels: np.ndarray, cfg: PdoiConfig):
    """Fixed seeded subset reused for every PDOI gradient evaluation."""
    n = len(labels)
    size = min(cfg.calib_batch, n)
    idx = np.sort(np.random.default_rng(cfg.seed).permutation(n)[:size])
    return images[idx], labels[idx]


def pdoi_init_network(net, data, cfg: PdoiConfig, skip=frozenset()):
    """Orthogonalize every weight view of ``net`` in forward order.

    ``data`` is a calibration batch ``(images, labels)``. For each layer the
    task-loss gradient is recomputed with earlier layers already replaced,
    so later layers see the orthogonalized front of the network. Mutates
    ``net`` in place and returns ``(net, traces)`` with one trace per
    orthogonalized layer index.
    """
    from .nn import backward, forward, weight_view

    images, labels = data
    traces = {}
    if cfg.max_iters == 0:
        return net, traces

    for idx in net.view_indices():
        if idx in skip:
            continue
        layer = net.layers[idx]
        view = weight_view(layer)
        flip = view.shape[0] < view.shape[1]

        def load(x, view=view, flip=flip):
            view[...] = x.T if flip else x

        def grad_fn(x, idx=idx, view=view, flip=flip, layer=layer):
            load(x)
            _, cache = forward(net, images)
            _, grads = backward(net, cache, labels)
            g = grads[idx][layer.weight_name].reshape(view.shape)
            return g.T if flip else g

        def objective(x):
            load(x)
            _, cache = forward(net, images)
            loss, _ = backward(net, cache, labels)
            return loss

        x0 = oriented(view).copy()
        point, trace = pdoi_init(x0, grad_fn, cfg, objective_fn=objective)
        load(point.mat)
        traces[idx] = trace
    return net, traces
