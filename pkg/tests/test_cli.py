import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from slitflow.cli import main

CONFIGS = {
    "kernel": {"slits": [[-0.5, 0.5, 1.0]], "xi0": 0.0, "probes": [[0, 2], [1, 2], [-1, 0.5]],
               "grid": {"x": [-2, 2, 9], "y": [0.1, 2, 5]}},
    "trace": {"slits": [[1.2, 1.8, 0.4]], "driver": {"kind": "linear", "slope": 0.5}, "T": 0.1,
              "max_step": 0.01, "probes": [[0, 2]]},
    "hcap": {"slits": [[1.2, 1.8, 0.4]], "driver": {"kind": "constant"}, "T": 0.5, "times": [0.1, 0.5]},
    "skle": {"slits": [], "kappa": 6, "dt": 0.01, "T": 0.2, "n_paths": 5},
    "transform": {"trace": {"slits": [[1.2, 1.8, 0.4]], "driver": {"kind": "constant"}, "T": 0.02,
                            "max_step": 0.001}, "grid_points": 11},
    "locality": {"slits": [[1.2, 1.8, 0.4]], "n_paths": 3, "cap": 0.003, "dt": 0.0005,
                 "emit_paths": True},
}
OUTPUTS = {"kernel": ["kernel.csv", "kernel.json"], "trace": ["trace.csv", "trace.json"],
           "hcap": ["hcap.csv", "hcap.json"], "skle": ["skle.csv", "skle.json"],
           "transform": ["transform.csv", "reparam.csv", "transform.json"],
           "locality": ["locality.json", "locality.csv"]}


def _run(tmp_path, cmd, cfg, *extra, out="out"):
    p = tmp_path / f"{cmd}.json"
    p.write_text(json.dumps(cfg))
    d = tmp_path / out
    d.mkdir(exist_ok=True)
    return main([cmd, "--config", str(p), "--out", str(d), *extra]), d


@pytest.mark.parametrize("cmd", sorted(CONFIGS))
def test_subcommand_outputs_and_determinism(tmp_path, cmd):
    code, d1 = _run(tmp_path, cmd, CONFIGS[cmd], "--seed", "5", out="a")
    assert code == 0
    assert sorted(os.listdir(d1)) == sorted(OUTPUTS[cmd])
    code, d2 = _run(tmp_path, cmd, CONFIGS[cmd], "--seed", "5", out="b")
    assert code == 0
    for name in OUTPUTS[cmd]:
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()


def test_kernel_probe_values(tmp_path):
    code, d = _run(tmp_path, "kernel", CONFIGS["kernel"])
    assert code == 0
    summary = json.loads((d / "kernel.json").read_text())
    assert summary["residual"] <= 1e-8
    assert all(v > 0 for v in summary["probes"].values())
    with open(d / "kernel.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 45 and set(rows[0]) == {"x", "y", "im_psi"}


def test_hcap_csv_matches_clock(tmp_path):
    code, d = _run(tmp_path, "hcap", CONFIGS["hcap"])
    assert code == 0
    with open(d / "hcap.csv") as f:
        rows = list(csv.DictReader(f))
    assert all(abs(float(r["rel_err"])) <= 1e-3 for r in rows)


def test_seed_changes_skle(tmp_path):
    _, d1 = _run(tmp_path, "skle", CONFIGS["skle"], "--seed", "1", out="a")
    _, d2 = _run(tmp_path, "skle", CONFIGS["skle"], "--seed", "2", out="b")
    assert (d1 / "skle.csv").read_bytes() != (d2 / "skle.csv").read_bytes()


def test_svg_written(tmp_path):
    code, d = _run(tmp_path, "trace", CONFIGS["trace"], "--svg")
    assert code == 0
    assert (d / "trace.svg").read_text().startswith("<svg")


def test_grid_backend(tmp_path):
    cfg = dict(CONFIGS["kernel"], h=0.125)
    code, d = _run(tmp_path, "kernel", cfg, "--backend", "grid")
    assert code == 0
    assert json.loads((d / "kernel.json").read_text())["backend"] == "grid"
    code, _ = _run(tmp_path, "trace", CONFIGS["trace"], "--backend", "grid")
    assert code == 1


@pytest.mark.parametrize("cfg", [
    dict(CONFIGS["trace"], foo=1),
    dict(CONFIGS["trace"], driver={"kind": "wiggly"}),
    {"slits": [[1.0, 0.5, 0.4]], "driver": {"kind": "constant"}, "T": 0.1},
    {"driver": {"kind": "constant"}, "T": 0.1},
])
def test_invalid_config_exit_1(tmp_path, cfg):
    code, d = _run(tmp_path, "trace", cfg)
    assert code == 1
    assert os.listdir(d) == []


def test_bad_json_and_missing_file(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert main(["trace", "--config", str(p)]) == 1
    assert main(["trace", "--config", str(tmp_path / "none.json")]) == 1
    assert main(["nope", "--config", str(p)]) == 1
    assert main(["skle", "--config", str(p), "--seed", "-3"]) == 1


def test_numerical_failure_exit_2(tmp_path):
    code, d = _run(tmp_path, "kernel", {"slits": [[-0.5, 0.5, 1e-7]]})
    assert code == 2
    assert os.listdir(d) == []


def test_module_entry_point(tmp_path):
    p = tmp_path / "k.json"
    p.write_text(json.dumps(CONFIGS["kernel"]))
    r = subprocess.run([sys.executable, "-m", "slitflow", "kernel", "--config", str(p),
                        "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 0
    assert r.stdout.split() == [str(tmp_path / "kernel.csv"), str(tmp_path / "kernel.json")]
    # no temporary files left behind by the atomic writes
    assert sorted(os.listdir(tmp_path)) == ["k.json", "kernel.csv", "kernel.json"]


def test_locality_csv_shape(tmp_path):
    code, d = _run(tmp_path, "locality", CONFIGS["locality"], "--seed", "3")
    assert code == 0
    data = np.genfromtxt(d / "locality.csv", delimiter=",", names=True)
    assert len(data) == 101 and len(data.dtype.names) == 4
    rep = json.loads((d / "locality.json").read_text())
    assert rep["master_seed"] == 3 and rep["n_paths"] == 3
