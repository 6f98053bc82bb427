"""Command-line entry point: ``taotf <subcommand> [options]``.

Subcommands write everything under ``--output-dir`` (default: the config's
``output_dir``) and leave a ``manifest-<subcommand>.json`` recording the
config hash, seeds, package versions and a sha256 of each output.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import tempfile
from dataclasses import replace

import numpy as np

from . import __version__
from .bench import bench_csv, build_dataset, build_network, diagnostics_csv, run_grid
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .nn import dump_network, load_network, weight_view
from .pdoi import calibration_batch, pdoi_init_network
from .robustness import CorruptionSpec, corrupt_batch, load_dataset, robustness_table
from .robustness.data import Dataset, dump_dataset
from .stiefel import is_on_manifold
from .linalg import RankDeficientError, SvdConvergenceError, oriented
from .trainer import MODES, DivergenceError, evaluate, train

log = logging.getLogger("taotf")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def write_atomic(path: str, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class Outputs:
    def __init__(self, directory: str):
        self.directory = directory
        self.files: dict[str, str] = {}

    def write(self, name: str, data: bytes | str) -> str:
        path = os.path.join(self.directory, name)
        write_atomic(path, data)
        raw = data.encode() if isinstance(data, str) else data
        self.files[name] = hashlib.sha256(raw).hexdigest()
        return path

    def manifest(self, command: str, cfg: ExperimentConfig, seeds, argv) -> str:
        doc = {
            "command": command,
            "argv": list(argv),
            "config_sha256": cfg.sha256,
            "config_text": cfg.text,
            "base_dir": cfg.base_dir,
            "modes": list(cfg.modes),
            "seeds": list(seeds),
            "versions": {
                "taotf": __version__,
                "numpy": np.__version__,
                "python": platform.python_version(),
            },
            "outputs": self.files,
        }
        return self.write(f"manifest-{command}.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _config(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config("")
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg


def _dataset(args, cfg) -> Dataset:
    if getattr(args, "data", None):
        return load_dataset(args.data)
    return build_dataset(cfg)


def cmd_gen_data(args, argv):
    cfg = _config(args)
    for field in ("n", "h", "w", "n_classes", "seed"):
        value = getattr(args, field)
        if value is not None:
            cfg.data = replace(cfg.data, **{field: value})
    data = build_dataset(replace(cfg, data=replace(cfg.data, path=None)))
    out = Outputs(cfg.output_dir)
    path = out.write("data.ds", dump_dataset(data))
    out.manifest("gen-data", cfg, [cfg.data.seed], argv)
    print(path)


def cmd_init(args, argv):
    cfg = _config(args)
    data = _dataset(args, cfg)
    seed = args.seed if args.seed is not None else cfg.train.seed
    net = build_network(cfg, data, seed)
    pcfg = replace(cfg.train.pdoi, max_iters=cfg.train.pdoi.max_iters or 1)
    if args.objective == "zero":
        from .pdoi import pdoi_init

        traces = {}
        for idx in net.view_indices():
            if idx in cfg.train.layer_optout:
                continue
            view = weight_view(net.layers[idx])
            flip = view.shape[0] < view.shape[1]
            point, trace = pdoi_init(oriented(view).copy(), np.zeros_like, pcfg)
            view[...] = point.mat.T if flip else point.mat
            traces[idx] = trace
    else:
        batch = calibration_batch(*data.train, pcfg)
        _, traces = pdoi_init_network(net, batch, pcfg, skip=cfg.train.layer_optout)
    out = Outputs(cfg.output_dir)
    out.write("init.ckpt", dump_network(net))
    report = {str(k): t.to_dict() for k, t in traces.items()}
    for k in report:
        report[k]["on_manifold"] = bool(is_on_manifold(oriented(weight_view(net.layers[int(k)]))))
    out.write("pdoi_trace.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    out.manifest("init", cfg, [seed], argv)
    print(os.path.join(cfg.output_dir, "init.ckpt"))


def cmd_train(args, argv):
    cfg = _config(args)
    data = _dataset(args, cfg)
    seed = args.seed if args.seed is not None else cfg.train.seed
    tcfg = replace(cfg.train, seed=seed)
    if args.mode:
        tcfg = replace(tcfg, mode=args.mode)
    if args.epochs is not None:
        tcfg = replace(tcfg, epochs=args.epochs)
    net = load_network(args.checkpoint) if args.checkpoint else build_network(cfg, data, seed)
    net, metrics = train(net, data, tcfg)
    specs = [CorruptionSpec(s.kind, s.severity, seed) for s in cfg.corruptions]
    if specs:
        metrics.final = robustness_table(net, data, specs).as_row()
    out = Outputs(cfg.output_dir)
    out.write("model.ckpt", dump_network(net))
    out.write("metrics.csv", metrics.to_csv())
    out.write("summary.json", json.dumps(metrics.summary(), indent=2, sort_keys=True) + "\n")
    out.manifest("train", cfg, [seed], argv)
    last = metrics.rows[-1] if metrics.rows else {}
    print(json.dumps({"mode": tcfg.mode, "seed": seed, "val_accuracy": last.get("val_accuracy")}))


def cmd_eval(args, argv):
    cfg = _config(args)
    data = _dataset(args, cfg)
    net = load_network(args.checkpoint)
    images, labels = data.split(args.split)
    acc, loss = evaluate(net, images, labels)
    result = {"split": args.split, "accuracy": acc, "loss": loss}
    if args.corruptions:
        specs = [CorruptionSpec(s.kind, s.severity, args.seed) for s in cfg.corruptions]
        result["corruptions"] = robustness_table(net, data, specs, split=args.split).columns
    out = Outputs(cfg.output_dir)
    out.write("eval.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    out.manifest("eval", cfg, [args.seed], argv)
    print(json.dumps(result))


def cmd_bench(args, argv):
    if args.replay:
        with open(args.replay) as f:
            manifest = json.load(f)
        cfg = parse_config(manifest["config_text"], base_dir=manifest["base_dir"])
        cfg.seeds = manifest["seeds"]
        cfg.modes = manifest["modes"]
        if args.output_dir:
            cfg.output_dir = args.output_dir
    else:
        cfg = _config(args)
    if args.seeds:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if args.modes:
        cfg.modes = args.modes.split(",")
    results = run_grid(cfg)
    out = Outputs(cfg.output_dir)
    out.write("bench.csv", bench_csv(results))
    out.write("diagnostics.csv", diagnostics_csv(results))
    for r in results:
        out.write(os.path.join("cells", f"{r.mode}_seed{r.seed}.csv"), r.log.to_csv())
    out.manifest("bench", cfg, cfg.seeds, argv)
    print(os.path.join(cfg.output_dir, "bench.csv"))


def cmd_corrupt(args, argv):
    cfg = _config(args)
    data = _dataset(args, cfg)
    spec = CorruptionSpec(args.kind, args.severity, args.seed)
    images = corrupt_batch(data.images, spec)
    out = Outputs(cfg.output_dir)
    path = out.write(f"corrupted_{spec.kind}.ds", dump_dataset(Dataset(images, data.labels, data.n_classes)))
    out.manifest("corrupt", cfg, [args.seed], argv)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="taotf", description="Two-stage approximately orthogonal training")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--output-dir", help="overrides the config's output_dir")
        if data:
            p.add_argument("--data", help="TAOTF-DS dataset file (default: synthesize from config)")

    p = sub.add_parser("gen-data", help="synthesize a dataset file")
    common(p, data=False)
    p.add_argument("--n", type=int)
    p.add_argument("--h", type=int)
    p.add_argument("--w", type=int)
    p.add_argument("--n-classes", dest="n_classes", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("init", help="run PDOI only and write the checkpoint and trace")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--objective", choices=("task", "zero"), default="task",
                   help="'zero' uses a constant objective (pure projection)")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="train one model")
    common(p)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--checkpoint", help="start from this checkpoint instead of a fresh init")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--corruptions", action="store_true", help="also evaluate the configured corruptions")
    p.add_argument("--seed", type=int, default=0, help="corruption seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="multi-seed ablation grid -> bench.csv")
    common(p, data=False)
    p.add_argument("--seeds", help="comma-separated seeds (overrides config)")
    p.add_argument("--modes", help="comma-separated modes (overrides config)")
    p.add_argument("--replay", help="re-run the config and seeds stored in a bench manifest")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("corrupt", help="write a corrupted copy of a dataset")
    common(p)
    p.add_argument("--kind", required=True)
    p.add_argument("--severity", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, RankDeficientError, SvdConvergenceError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
