"""The (mode x seed) ablation grid behind the ``bench`` subcommand."""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import ExperimentConfig
from .nn import ARCHITECTURES
from .robustness import (
    CorruptionSpec,
    empirical_lipschitz,
    load_dataset,
    robustness_table,
    spectrum_report,
    synthesize_dataset,
)
from .trainer import MetricsLog, mean_orth_error, train

LIPSCHITZ_PAIRS = 1000


def build_dataset(cfg: ExperimentConfig):
    d = cfg.data
    if d.path is not None:
        return load_dataset(d.path)
    return synthesize_dataset(d.n, d.h, d.w, d.n_classes, d.seed, noise=d.noise)


def build_network(cfg: ExperimentConfig, data, seed: int):
    return ARCHITECTURES[cfg.model](data.shape, data.n_classes, seed)


@dataclass
class CellResult:
    mode: str
    seed: int
    table: dict
    mean_orth_error: float
    mean_sigma_dev: float
    lipschitz: float
    log: MetricsLog


def run_cell(cfg: ExperimentConfig, mode: str, seed: int, data=None) -> CellResult:
    data = build_dataset(cfg) if data is None else data
    tcfg = replace(cfg.train, mode=mode, seed=seed)
    net, log = train(build_network(cfg, data, seed), data, tcfg)
    specs = [CorruptionSpec(s.kind, s.severity, seed) for s in cfg.corruptions]
    table = robustness_table(net, data, specs).as_row()
    log.final = dict(table)
    spectrum = spectrum_report(net)
    sigma_dev = float(np.mean([abs(s.sigma_max - 1.0) for s in spectrum]))
    lip = empirical_lipschitz(net, data.test[0], LIPSCHITZ_PAIRS, seed)
    return CellResult(mode, seed, table, mean_orth_error(log), sigma_dev, lip, log)


def _worker(args):
    cfg, mode, seed = args
    return run_cell(cfg, mode, seed)


def run_grid(cfg: ExperimentConfig, workers: int | None = None) -> list[CellResult]:
    """Every (mode, seed) cell, in config order. Parallel across processes
    when ``workers`` (default: $TAOTF_THREADS, else 1) exceeds one."""
    if workers is None:
        workers = int(os.environ.get("TAOTF_THREADS", "1") or 1)
    cells = [(cfg, m, s) for m in cfg.modes for s in cfg.seeds]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_worker, cells))
    data = build_dataset(cfg)
    return [run_cell(cfg, m, s, data) for _, m, s in cells]


def _f(v: float) -> str:
    return f"{v:.6f}"


def bench_csv(results: list[CellResult]) -> str:
    """mode, seed, clean, one column per corruption; a mean row per mode."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = list(results[0].table)
    writer.writerow(["mode", "seed", *cols])
    modes = list(dict.fromkeys(r.mode for r in results))
    for mode in modes:
        rows = [r for r in results if r.mode == mode]
        for r in rows:
            writer.writerow([mode, r.seed, *(_f(r.table[c]) for c in cols)])
        writer.writerow([mode, "mean", *(_f(float(np.mean([r.table[c] for r in rows]))) for c in cols)])
    return buf.getvalue()


def diagnostics_csv(results: list[CellResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["mode", "seed", "mean_orth_error", "mean_abs_sigma_max_minus_1", "empirical_lipschitz"])
    for r in results:
        writer.writerow([r.mode, r.seed, _f(r.mean_orth_error), _f(r.mean_sigma_dev), _f(r.lipschitz)])
    return buf.getvalue()


def mode_means(results: list[CellResult]) -> dict:
    """Per-mode averages of every table column and diagnostic."""
    out = {}
    for mode in dict.fromkeys(r.mode for r in results):
        rows = [r for r in results if r.mode == mode]
        means = {c: float(np.mean([r.table[c] for r in rows])) for c in rows[0].table}
        means["mean_orth_error"] = float(np.mean([r.mean_orth_error for r in rows]))
        means["mean_sigma_dev"] = float(np.mean([r.mean_sigma_dev for r in rows]))
        means["lipschitz"] = float(np.mean([r.lipschitz for r in rows]))
        out[mode] = means
    return out
