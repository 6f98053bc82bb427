"""Experiment configuration: bracketed sections of ``key = value`` lines.

Example::

    [experiment]
    model = mlp3
    output_dir = runs/demo
    seeds = 1, 2, 3, 4, 5
    modes = plain, srip_only, orth_init_only, hard, taotf

    [data]
    n = 2000
    h = 16
    w = 16
    n_classes = 4
    seed = 0

    [train]
    epochs = 30
    lr = 3e-4

    [srip]
    lambda = 1e-3

    [pdoi]
    gamma = 1.0

    [corruptions]
    gaussian_noise = 1.0
    rotation = 20

Unknown sections or keys are errors. ``[corruptions]`` lists kinds with
their severities; when the section is absent the calibrated defaults apply.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field, replace

from .pdoi import PdoiConfig
from .robustness.corruptions import DEFAULT_SEVERITIES, KINDS, CorruptionSpec
from .srip import SripConfig
from .trainer import MODES, TrainConfig

MODELS = ("mlp3", "conv_s")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, key: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(key)
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


@dataclass
class DataConfig:
    path: str | None = None
    n: int = 2000
    h: int = 16
    w: int = 16
    n_classes: int = 4
    seed: int = 0
    noise: float = 0.2


@dataclass
class ExperimentConfig:
    model: str = "mlp3"
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corruptions: list = field(default_factory=lambda: [
        CorruptionSpec(k, DEFAULT_SEVERITIES[k]) for k in KINDS])
    output_dir: str = "runs/default"
    seeds: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    modes: list = field(default_factory=lambda: list(MODES))
    text: str = ""
    base_dir: str = "."

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


def _ints(v: str) -> list[int]:
    return [int(t) for t in v.replace(",", " ").split()]


def _words(v: str) -> list[str]:
    return [t for t in v.replace(",", " ").split()]


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


SCHEMA = {
    "experiment": {"model": str, "output_dir": str, "seeds": _ints, "modes": _words},
    "data": {"path": str, "n": int, "h": int, "w": int, "n_classes": int, "seed": int, "noise": float},
    "train": {
        "mode": str, "lr": float, "weight_decay": float, "adam_beta1": float, "adam_beta2": float,
        "adam_eps": float, "epochs": int, "batch_size": int, "seed": int, "layer_optout": _ints,
        "label_smoothing": float, "hard_lr": float, "repdoi_each_epoch": _bool,
    },
    "srip": {"lambda": float, "power_iters": int, "exact_mode": _bool, "seed": int},
    "pdoi": {"gamma": float, "max_iters": int, "rel_tol": float, "gradient_sign": int,
             "calib_batch": int, "seed": int},
    "corruptions": {**{k: float for k in KINDS}, "seed": int},
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
            if key is None and current == section:
                return n
        elif current == section and key is not None:
            name = s.split("=", 1)[0].strip()
            if name == key and "=" in s:
                return n
    return None


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    """Parse config text. Raises ConfigError naming the line and field."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], getattr(exc, "lineno", None)) from exc

    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", _line_of(text, section, None))
        values[section] = {}
        for key, raw in parser.items(section):
            conv = SCHEMA[section].get(key)
            where = f"{section}.{key}"
            if conv is None:
                raise ConfigError("unknown field", _line_of(text, section, key), where)
            try:
                values[section][key] = conv(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"bad value {raw.strip()!r} ({exc})", _line_of(text, section, key), where) from exc

    def fail(section, key, msg):
        raise ConfigError(msg, _line_of(text, section, key), f"{section}.{key}")

    exp = values.get("experiment", {})
    cfg = ExperimentConfig(text=text, base_dir=os.path.abspath(base_dir))
    cfg.model = exp.get("model", cfg.model)
    if cfg.model not in MODELS:
        fail("experiment", "model", f"unknown model {cfg.model!r}; expected one of {MODELS}")
    cfg.output_dir = exp.get("output_dir", cfg.output_dir)
    if not os.path.isabs(cfg.output_dir):
        cfg.output_dir = os.path.join(base_dir, cfg.output_dir)
    cfg.seeds = exp.get("seeds", cfg.seeds)
    if not cfg.seeds:
        fail("experiment", "seeds", "seed list is empty")
    cfg.modes = exp.get("modes", cfg.modes)
    for m in cfg.modes:
        if m not in MODES:
            fail("experiment", "modes", f"unknown mode {m!r}; expected one of {MODES}")

    cfg.data = DataConfig(**values.get("data", {}))
    if cfg.data.path is not None:
        path = cfg.data.path
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        if not os.path.exists(path):
            fail("data", "path", f"dataset file {path} does not exist")
        cfg.data = replace(cfg.data, path=path)

    try:
        srip_vals = dict(values.get("srip", {}))
        if "lambda" in srip_vals:
            srip_vals["lam"] = srip_vals.pop("lambda")
        srip = SripConfig(**srip_vals)
    except ValueError as exc:
        raise ConfigError(str(exc), _line_of(text, "srip", None), "srip") from exc
    try:
        pdoi = PdoiConfig(**values.get("pdoi", {}))
    except ValueError as exc:
        raise ConfigError(str(exc), _line_of(text, "pdoi", None), "pdoi") from exc
    try:
        cfg.train = TrainConfig(srip=srip, pdoi=pdoi, **values.get("train", {}))
    except ValueError as exc:
        raise ConfigError(str(exc), _line_of(text, "train", None), "train") from exc

    if "corruptions" in values:
        corr = dict(values["corruptions"])
        seed = corr.pop("seed", 0)
        try:
            cfg.corruptions = [CorruptionSpec(k, v, seed) for k, v in corr.items()]
        except ValueError as exc:
            raise ConfigError(str(exc), _line_of(text, "corruptions", None), "corruptions") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        text = f.read()
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))
