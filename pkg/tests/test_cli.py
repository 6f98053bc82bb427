import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from taotf.cli import main
from taotf.config import ConfigError, load_config, parse_config
from taotf.linalg import oriented
from taotf.nn import load_network, weight_view
from taotf.robustness import KINDS, load_dataset
from taotf.stiefel import is_on_manifold
from taotf.trainer import MODES

TINY = """\
[experiment]
model = mlp3
output_dir = out
seeds = 1, 2

[data]
n = 200
h = 8
w = 8
n_classes = 4
seed = 3

[train]
epochs = 2
batch_size = 16
lr = 1e-3

[pdoi]
max_iters = 3
calib_batch = 32
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestConfig:
    def test_defaults(self):
        cfg = parse_config("")
        assert cfg.model == "mlp3" and cfg.seeds == [1, 2, 3, 4, 5]
        assert cfg.modes == list(MODES)
        assert [s.kind for s in cfg.corruptions] == list(KINDS)

    def test_values_and_lambda(self, tmp_path):
        cfg = parse_config("[srip]\nlambda = 0.25\nexact_mode = yes\n[train]\nlayer_optout = 1, 3\n"
                           "[corruptions]\nrotation = 5\nseed = 9\n", base_dir=str(tmp_path))
        assert cfg.train.srip.lam == 0.25 and cfg.train.srip.exact_mode
        assert cfg.train.layer_optout == frozenset({1, 3})
        assert [(s.kind, s.severity, s.seed) for s in cfg.corruptions] == [("rotation", 5.0, 9)]
        assert cfg.output_dir == os.path.join(str(tmp_path), "runs/default")

    def test_relative_paths(self, tiny):
        cfg = load_config(tiny)
        assert cfg.output_dir == os.path.join(str(tiny.parent), "out")
        assert cfg.sha256 == parse_config(TINY).sha256

    @pytest.mark.parametrize("text, line, key", [
        ("[train]\nlr = fast\n", 2, "train.lr"),
        ("[train]\nepochs = 3\nwobble = 1\n", 3, "train.wobble"),
        ("[experiment]\nmodes = plain, fancy\n", 2, "experiment.modes"),
        ("[experiment]\nmodel = resnet\n", 2, "experiment.model"),
        ("\n[nonsense]\na = 1\n", 2, None),
        ("[data]\npath = missing.ds\n", 2, "data.path"),
        ("[srip]\nlambda = -1\n", 1, "srip"),
    ])
    def test_errors_name_line_and_field(self, text, line, key, tmp_path):
        with pytest.raises(ConfigError) as info:
            parse_config(text, base_dir=str(tmp_path))
        assert info.value.line == line
        assert info.value.key == key
        assert f"line {line}" in str(info.value)


class TestCommands:
    def test_gen_train_eval_consistent(self, tiny, tmp_path, capsys):
        out = tmp_path / "out"
        assert run("gen-data", "--config", tiny) == 0
        data = out / "data.ds"
        assert load_dataset(data).images.shape == (200, 8, 8)
        assert run("train", "--config", tiny, "--data", data, "--mode", "plain", "--seed", 4) == 0
        with open(out / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert run("eval", "--config", tiny, "--data", data, "--checkpoint", out / "model.ckpt",
                   "--split", "val") == 0
        result = json.loads((out / "eval.json").read_text())
        assert result["accuracy"] == float(rows[-1]["val_accuracy"])
        manifest = json.loads((out / "manifest-train.json").read_text())
        assert manifest["seeds"] == [4] and manifest["config_text"] == TINY
        assert set(manifest["outputs"]) == {"model.ckpt", "metrics.csv", "summary.json"}
        assert set(manifest["versions"]) == {"taotf", "numpy", "python"}

    def test_eval_with_corruptions(self, tiny, tmp_path):
        assert run("train", "--config", tiny, "--mode", "hard") == 0
        out = tmp_path / "out"
        assert run("eval", "--config", tiny, "--checkpoint", out / "model.ckpt", "--corruptions") == 0
        result = json.loads((out / "eval.json").read_text())
        assert set(result["corruptions"]) == set(KINDS)

    def test_init_zero_objective_on_manifold(self, tiny, tmp_path):
        assert run("init", "--config", tiny, "--objective", "zero", "--seed", 2) == 0
        out = tmp_path / "out"
        net = load_network(out / "init.ckpt")
        for i in net.view_indices():
            assert is_on_manifold(oriented(weight_view(net.layers[i])))
        trace = json.loads((out / "pdoi_trace.json").read_text())
        assert sorted(trace) == [str(i) for i in net.view_indices()]
        assert all(t["on_manifold"] for t in trace.values())

    def test_init_task_objective(self, tiny, tmp_path):
        assert run("init", "--config", tiny) == 0
        trace = json.loads((tmp_path / "out" / "pdoi_trace.json").read_text())
        assert all(t["on_manifold"] and len(t["objectives"]) == t["iterates_used"] for t in trace.values())

    def test_corrupt_command(self, tiny, tmp_path):
        assert run("corrupt", "--config", tiny, "--kind", "brightness", "--severity", 0.1) == 0
        d = load_dataset(tmp_path / "out" / "corrupted_brightness.ds")
        assert d.images.min() >= 0.1 - 1e-12

    def test_config_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[train]\nlr = fast\n")
        assert run("train", "--config", bad) == 2
        assert "line 2" in capsys.readouterr().err

    def test_unknown_corruption_exit_2(self, tiny):
        assert run("corrupt", "--config", tiny, "--kind", "fog", "--severity", 1) == 2

    def test_divergence_exit_3(self, tmp_path, capsys):
        cfg = tmp_path / "hot.cfg"
        cfg.write_text(TINY.replace("epochs = 2", "epochs = 6").replace("lr = 1e-3", "lr = 100"))
        assert run("train", "--config", cfg, "--mode", "plain") == 3
        assert "numerical abort" in capsys.readouterr().err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "taotf", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("gen-data", "init", "train", "eval", "bench", "corrupt"):
            assert sub in proc.stdout


class TestBench:
    def test_shape_and_replay(self, tiny, tmp_path):
        out = tmp_path / "out"
        assert run("bench", "--config", tiny, "--seeds", "1,2,3,4,5") == 0
        text = (out / "bench.csv").read_text()
        rows = list(csv.reader(text.splitlines()))
        assert rows[0] == ["mode", "seed", "clean", *KINDS]
        body = rows[1:]
        assert len(body) == len(MODES) * 6
        for m, mode in enumerate(MODES):
            block = body[6 * m:6 * m + 6]
            assert [r[0] for r in block] == [mode] * 6
            assert [r[1] for r in block] == ["1", "2", "3", "4", "5", "mean"]
            mean = np.mean([[float(v) for v in r[2:]] for r in block[:5]], axis=0)
            np.testing.assert_allclose([float(v) for v in block[5][2:]], mean, atol=1e-6)
        diag = list(csv.reader((out / "diagnostics.csv").read_text().splitlines()))
        assert len(diag) == 1 + len(MODES) * 5
        assert len(os.listdir(out / "cells")) == len(MODES) * 5

        replay = tmp_path / "replay"
        assert run("bench", "--replay", out / "manifest-bench.json", "--output-dir", replay) == 0
        assert (replay / "bench.csv").read_bytes() == (out / "bench.csv").read_bytes()
        assert (replay / "diagnostics.csv").read_bytes() == (out / "diagnostics.csv").read_bytes()

    def test_parallel_matches_serial(self, tiny, tmp_path, monkeypatch):
        assert run("bench", "--config", tiny, "--modes", "plain,taotf", "--output-dir", tmp_path / "serial") == 0
        monkeypatch.setenv("TAOTF_THREADS", "2")
        assert run("bench", "--config", tiny, "--modes", "plain,taotf", "--output-dir", tmp_path / "par") == 0
        for name in ("bench.csv", "diagnostics.csv"):
            assert (tmp_path / "par" / name).read_bytes() == (tmp_path / "serial" / name).read_bytes()
