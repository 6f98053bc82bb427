"""Two-stage training and the ablation baselines.

Modes:

* ``plain``          Adam on the task loss.
* ``srip_only``      Adam on task loss + lambda * SRIP, standard init.
* ``orth_init_only`` Haar-orthogonal init of every weight view, then plain Adam.
* ``hard``           weight views projected onto the Stiefel manifold and kept
                     there with polar-retraction Riemannian SGD; biases use Adam.
                     A representative hard-constraint baseline, not a specific
                     published algorithm.
* ``taotf``          PDOI on every weight view, then Adam on task + lambda * SRIP.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import oriented
from .nn import Network, backward, forward, logits, softmax_xent, weight_view
from .pdoi import PdoiConfig, calibration_batch, pdoi_init_network
from .robustness.diagnostics import spectrum_report
from .srip import SripConfig, SripState
from .stiefel import StiefelPoint, project, random_point, riemannian_step

MODES = ("plain", "srip_only", "orth_init_only", "hard", "taotf")


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    mode: str = "taotf"
    lr: float = 3e-4
    weight_decay: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 8
    srip: SripConfig = field(default_factory=SripConfig)
    pdoi: PdoiConfig = field(default_factory=PdoiConfig)
    seed: int = 0
    layer_optout: frozenset = frozenset()
    label_smoothing: float = 0.0
    # step size of the Riemannian SGD used by mode="hard"
    hard_lr: float = 0.05
    # experimental: rerun PDOI before every epoch (not the default two-stage schedule)
    repdoi_each_epoch: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.lr <= 0 or self.hard_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        self.layer_optout = frozenset(int(i) for i in self.layer_optout)

    @property
    def effective_lambda(self) -> float:
        return self.srip.lam if self.mode in ("srip_only", "taotf") else 0.0

    @property
    def uses_pdoi(self) -> bool:
        return self.mode == "taotf"


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, cfg: TrainConfig, decay=None):
    """In-place Adam update followed by decoupled weight decay.

    ``params`` and ``grads`` map the same keys to arrays. ``decay`` is the set
    of keys that receive weight decay (all keys when None).
    """
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for key, p in params.items():
        g = grads[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        if cfg.weight_decay and (decay is None or key in decay):
            p -= cfg.lr * cfg.weight_decay * p
    return params, state


def evaluate(net: Network, images, labels, chunk: int = 512) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy. Ties go to the lowest class."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("cannot evaluate on an empty split")
    correct = 0
    loss = 0.0
    for start in range(0, len(labels), chunk):
        z = logits(net, images[start:start + chunk])
        y = labels[start:start + chunk]
        correct += int(np.sum(np.argmax(z, axis=1) == y))
        loss += softmax_xent(z, y)[0] * len(y)
    return correct / len(labels), loss / len(labels)


@dataclass
class MetricsLog:
    layers: list
    rows: list = field(default_factory=list)
    pdoi: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)

    def columns(self) -> list[str]:
        cols = ["epoch", "train_loss", "task_loss", "srip_loss", "val_accuracy"]
        for i in self.layers:
            cols += [f"orth_error_{i}", f"sigma_max_{i}", f"sigma_min_{i}"]
        return cols

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = self.columns()
        writer.writerow(cols)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in cols])
        return buf.getvalue()

    def summary(self) -> dict:
        last = self.rows[-1] if self.rows else {}
        return {
            "final_epoch": last,
            "pdoi": {str(k): v for k, v in self.pdoi.items()},
            "corruptions": self.final,
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _set_view(layer, mat):
    view = weight_view(layer)
    view[...] = mat.T if view.shape[0] < view.shape[1] else mat


def _param_dict(net: Network, skip_views=()) -> dict:
    params = {}
    for i, layer in enumerate(net.layers):
        for name, p in layer.params().items():
            if i in skip_views and name == layer.weight_name:
                continue
            params[(i, name)] = p
    return params


def initialize(net: Network, data, cfg: TrainConfig) -> dict:
    """Mode-specific initialization in place; returns PDOI traces (if any)."""
    views = [i for i in net.view_indices() if i not in cfg.layer_optout]
    if cfg.mode == "orth_init_only":
        for i in views:
            w = oriented(weight_view(net.layers[i]))
            _set_view(net.layers[i], random_point(*w.shape, seed=cfg.seed * 1009 + i).mat)
    elif cfg.mode == "hard":
        for i in views:
            _set_view(net.layers[i], project(oriented(weight_view(net.layers[i]))).mat)
    elif cfg.uses_pdoi:
        batch = calibration_batch(*data.train, cfg.pdoi)
        _, traces = pdoi_init_network(net, batch, cfg.pdoi, skip=cfg.layer_optout)
        return {i: t.to_dict() for i, t in traces.items()}
    return {}


def train(net: Network, data, cfg: TrainConfig) -> tuple[Network, MetricsLog]:
    """Train a copy of ``net`` on ``data.train``; validate on ``data.val``.

    Raises DivergenceError when the epoch train loss exceeds ten times the
    initial task loss for three consecutive epochs.
    """
    net = net.copy()
    xtr, ytr = data.train
    xval, yval = data.val
    views = [i for i in net.view_indices() if i not in cfg.layer_optout]
    log = MetricsLog(layers=net.view_indices())
    log.pdoi = initialize(net, data, cfg)

    lam = cfg.effective_lambda
    hard = cfg.mode == "hard"
    srip_states = {i: SripState(cfg.srip) for i in views} if lam > 0 else {}
    params = _param_dict(net, skip_views=set(views) if hard else ())
    decay = set(params)
    adam = AdamState()
    rng = np.random.default_rng(cfg.seed)
    initial_loss = evaluate(net, xtr, ytr)[1]
    strikes = 0

    for epoch in range(cfg.epochs):
        if cfg.repdoi_each_epoch and cfg.uses_pdoi and epoch > 0:
            batch = calibration_batch(xtr, ytr, cfg.pdoi)
            pdoi_init_network(net, batch, cfg.pdoi, skip=cfg.layer_optout)
        order = rng.permutation(len(ytr))
        tot = task_tot = srip_tot = 0.0
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, cache = forward(net, xtr[idx])
            task, grads = backward(net, cache, ytr[idx], cfg.label_smoothing)
            penalty = 0.0
            for i, state in srip_states.items():
                layer = net.layers[i]
                p, g = state.penalty_and_grad(weight_view(layer))
                penalty += p
                grads[i][layer.weight_name] = grads[i][layer.weight_name] + lam * g.reshape(
                    grads[i][layer.weight_name].shape)
            if hard:
                for i in views:
                    layer = net.layers[i]
                    view = weight_view(layer)
                    g = grads[i][layer.weight_name].reshape(view.shape)
                    flip = view.shape[0] < view.shape[1]
                    x = StiefelPoint(view.T if flip else view, tol=1e-6)
                    new = riemannian_step(x, g.T if flip else g, cfg.hard_lr).mat
                    view[...] = new.T if flip else new
            flat = {key: grads[key[0]][key[1]] for key in params}
            adam_step(params, flat, adam, cfg, decay)
            tot += task + lam * penalty
            task_tot += task
            srip_tot += penalty
            n_batches += 1

        n_batches = max(n_batches, 1)
        row = {
            "epoch": epoch,
            "train_loss": tot / n_batches,
            "task_loss": task_tot / n_batches,
            "srip_loss": srip_tot / n_batches,
            "val_accuracy": evaluate(net, xval, yval)[0] if len(yval) else math.nan,
        }
        for spec in spectrum_report(net):
            row[f"orth_error_{spec.layer}"] = spec.orth_error
            row[f"sigma_max_{spec.layer}"] = spec.sigma_max
            row[f"sigma_min_{spec.layer}"] = spec.sigma_min
        log.rows.append(row)

        if not math.isfinite(row["train_loss"]):
            raise DivergenceError(f"non-finite training loss at epoch {epoch}")
        strikes = strikes + 1 if row["train_loss"] > 10.0 * initial_loss else 0
        if strikes >= 3:
            raise DivergenceError(
                f"train loss above 10x its initial value ({initial_loss:.4g}) for 3 epochs"
            )
    return net, log


def mean_orth_error(log: MetricsLog) -> float:
    last = log.rows[-1]
    return float(np.mean([last[f"orth_error_{i}"] for i in log.layers]))
