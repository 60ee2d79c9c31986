import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from objmap.cli import main
from objmap.pipeline import ConfigError, build_config
from objmap.tensor_io import write_tensor

CONFIG = Path(__file__).parents[1] / "demos" / "configs" / "three_boxes.json"


@pytest.fixture(scope="module")
def small_ds(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["gen-synthetic", "--dataset", str(d), "--views", "8"]) == 0
    return d


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


def test_missing_dataset_exit_2(tmp_path, capsys):
    code = main(["cluster", "--dataset", str(tmp_path / "nothing"), "-o", str(tmp_path / "o")])
    assert code == 2
    assert "manifest" in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"similarity": {"w_geo": 0.9}}')
    assert main(["cluster", "--config", str(bad), "--dataset", "x"]) == 2
    bad.write_text('{"no_such_key": 1}')
    assert main(["cluster", "--config", str(bad)]) == 2
    assert main(["cluster", "--set", "seed"]) == 2
    assert main(["no-such-command"]) == 2
    with pytest.raises(ConfigError):
        build_config({"train": {"ray": {"bogus": 1}}})


def test_flags_override_config():
    cfg = build_config({"seed": 3, "train": {"steps": 10}}, ["seed=5", "train.lr=0.01"])
    assert cfg.seed == 5 and cfg.train.steps == 10 and cfg.train.lr == 0.01


def test_cluster_threshold_one(small_ds, tmp_path, capsys):
    code, res = _run(capsys, "cluster", "--dataset", str(small_ds), "-o", str(tmp_path), "--theta-mask", "1.0")
    assert code == 0
    assert res["n_edges"] == 0 and res["n_coarse"] == res["n_masks"] == 24
    assert json.loads((tmp_path / "result.json").read_text())["n_coarse"] == 24


def test_run_all_and_follow_up_commands(small_ds, tmp_path, capsys):
    out = tmp_path / "out"
    base = ["--config", str(CONFIG), "--dataset", str(small_ds), "-o", str(out),
            "--steps", "30", "--set", "surface.resolution=24"]
    code, res = _run(capsys, "run-all", *base)
    assert code == 0
    st = res["stages"]
    assert st["cluster"]["n_objects"] == 3 and st["cluster"]["gt"]["agreement"] == 1.0
    for name in ("objects.json", "result.json", "training_log.csv", "checkpoints/object_0.obck",
                 "surfaces/object_2.obck", "eval_seg.json", "eval_retrieval.json"):
        assert (out / name).exists(), name
    q = tmp_path / "q.obnt"
    write_tensor(q, np.eye(16, dtype=np.float32)[:1])
    code, r = _run(capsys, "query-object", *base, "--clip", str(q))
    assert code == 0 and len(r["queries"][0]["ranking"]) == 3
    code, r = _run(capsys, "query-part", *base, "--object", "2", "--query", str(q))
    assert code == 0
    code, r = _run(capsys, "render", *base, "--frame", "1", "--samples", "16")
    assert code == 0 and (out / "render").is_dir()
    assert main(["query-part", *base, "--object", "7", "--query", str(q)]) == 2


def test_run_all_deterministic(small_ds, tmp_path, capsys):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        assert main(["run-all", "--config", str(CONFIG), "--dataset", str(small_ds), "-o", str(out),
                     "--steps", "10", "--set", "surface.resolution=16"]) == 0
        outs.append(out)
    capsys.readouterr()
    for name in ("objects.json", "result.json", "checkpoints/object_1.obck", "training_log.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes(), name


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "objmap", "cluster", "--dataset", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 2
