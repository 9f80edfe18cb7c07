import json
import math

import numpy as np
import pytest

from gmclab import report
from gmclab.cli import main
from gmclab.experiments import EXPERIMENTS, ExperimentConfig, run_experiment


def test_eigen_prints_lambda(tmp_path, capsys):
    rc = main(["eigen", "--d", "3", "--r", "1", "--out", str(tmp_path)])
    out = json.loads(capsys.readouterr().out)
    assert rc == 0
    assert out["lambda1"] == pytest.approx(math.pi ** 2 / 2, abs=1e-4)
    assert (tmp_path / "eigen.csv").exists()
    summary = json.loads((tmp_path / "eigen.summary.json").read_text())
    assert {"config", "seed", "wall_time_s", "verdicts", "passed"} <= set(summary)


@pytest.mark.parametrize("args", [
    ["she", "--d", "2"],
    ["thickness", "--dt", "0"],
    ["tube-decay", "--Ts", "1,2"],
    ["free-energy", "--T", "1.01", "--dt", "0.02", "--Ts", "1.01"],
    ["localize", "--gammas", "-1"],
    ["eigen", "--dx", "0.5"],
    ["thickness", "--N", "50"],
])
def test_invalid_configs_fail_fast(tmp_path, args, capsys):
    assert main(args + ["--out", str(tmp_path)]) == 2
    assert "invalid configuration" in capsys.readouterr().err
    assert not any(tmp_path.iterdir())


def test_unknown_config_key(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"name": "eigen", "bogus": 1}))
    assert main(["eigen", "--config", str(p), "--out", str(tmp_path)]) == 2


def test_config_file_and_override(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(ExperimentConfig("eigen", d=3, r=2.0).to_json())
    assert main(["eigen", "--config", str(p), "--r", "1", "--out", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["d"] == 3 and out["r"] == 1.0


def test_config_round_trip():
    c = ExperimentConfig("localize", gammas=[0.5, 1.0], seed=7, workers=2)
    assert ExperimentConfig.from_json(c.to_json()) == c
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"name": "eigen", "nope": 1})


def test_unwritable_out(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ValueError):
        run_experiment(ExperimentConfig("eigen", out=str(blocker / "sub")))


def test_report_helpers(tmp_path):
    rows = [{"a": 1, "b": 0.1}, {"a": 2, "b": math.inf}]
    text = report.to_csv(rows)
    lines = text.strip().splitlines()
    assert lines[0] == "a,b" and len(lines) == 3
    assert float(lines[1].split(",")[1]) == 0.1
    with pytest.raises(ValueError):
        report.to_csv([])
    with pytest.raises(ValueError):
        report.to_json({})
    data = {"x": np.float64(0.1), "y": [1, 2], "z": {"w": math.nan}}
    back = json.loads(report.to_json(data))
    assert back["x"] == 0.1 and back["y"] == [1, 2] and back["schema_version"] == report.SCHEMA_VERSION
    p = report.emit_report(rows, "csv", tmp_path / "r.csv")
    assert p.read_text() == text


SMALL = {
    "tube-decay": dict(Ts=[1, 2, 3, 4], N=2000),
    "gmc-decay": dict(d=1, gamma=0.3, Ts=[1, 2, 3, 4], N=200, K=3, dt=0.05),
    "free-energy": dict(gammas=[0.2, 0.5, 1.0], Ts=[1, 2], T=2, N=100, K=3, dt=0.05),
    "thickness": dict(Ts=[1, 2], N=100, K=3, dt=0.05),
    "ou-check": dict(T=1, t=1, N=100, K=3, dt=0.05, flow_steps=20),
    "localize": dict(gammas=[0.5, 2.0], T=1, N=100, K=3, dt=0.05),
    "she": dict(d=3, gamma=0.3, t=0.5, eps_list=[1.0], N=100, K=3, dt=0.05),
    "rate": dict(d=3, gamma=0.2),
    "eigen": dict(d=2),
}


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_rerun_byte_identical(tmp_path, name):
    texts = []
    for w in (1, 3):
        c = ExperimentConfig(name, seed=5, workers=w, out=str(tmp_path / f"w{w}"), **SMALL[name])
        texts.append(run_experiment(c).csv_path.read_bytes())
    assert texts[0] == texts[1]


def test_gmc_decay_at_zero_coupling_matches_wiener(tmp_path):
    base = dict(d=1, r=1.0, Ts=[1, 2, 3, 4], dt=0.02, out=str(tmp_path))
    w = run_experiment(ExperimentConfig("tube-decay", N=20000, **base)).csv_path
    g = run_experiment(ExperimentConfig("gmc-decay", gamma=0.0, N=2000, K=4, **base)).csv_path
    rw = [line.split(",") for line in w.read_text().splitlines()[1:]]
    rg = [line.split(",") for line in g.read_text().splitlines()[1:]]
    for a, b in zip(rw, rg):
        diff = float(a[1]) - float(b[1])
        assert abs(diff) < 4 * math.hypot(float(a[2]), float(b[2])) + 0.02
