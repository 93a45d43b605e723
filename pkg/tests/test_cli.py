import json
import os
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from ddessm import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small_hutchinson(tmp_path, **changes):
    cfg = yaml.safe_load((CONFIGS / "hutchinson.yaml").read_text())
    cfg["simulation"]["histories"]["count"] = 4
    cfg["simulation"]["t_end"] = 30.0
    cfg["split"]["test"] = 1
    for k, v in changes.items():
        cfg[k] = v
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(cfg))
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def tree(d: Path) -> dict:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def test_systems_list(capsys, tmp_path):
    assert run("systems", "list", "-o", tmp_path) == 0
    listing = json.loads(capsys.readouterr().out)
    assert "hutchinson" in listing and listing["hutchinson"]["params"]["r"] == 1.8
    assert (tmp_path / "manifest.json").exists()


def test_oracle_default_and_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("oracle", "-o", a) == 0
    assert run("oracle", "-o", b) == 0
    assert tree(a) == tree(b)
    d = json.loads((a / "oracle.json").read_text())
    assert abs(d["lambda"][0] - 0.0972) < 1e-3
    assert set(d["nonresonance"]) == {"20", "11", "02", "30", "21", "12", "03"}


def test_manifest_contents(tmp_path):
    cfg = small_hutchinson(tmp_path)
    out = tmp_path / "spec"
    assert run("spectrum", "-c", cfg, "-o", out) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert m["command"] == "spectrum" and m["seed"] == 0
    assert set(m["inputs"]) == {"cfg.yaml"}
    assert set(m["outputs"]) == {"spectrum.csv"}
    assert {"ddessm", "python", "numpy", "scipy", "backend"} <= set(m["versions"])
    assert len(m["config_sha256"]) == 64


def test_simulate_fit_predict_chain(tmp_path):
    cfg = small_hutchinson(tmp_path)
    sim, fit1, fit2, pred = (tmp_path / n for n in ("sim", "fit1", "fit2", "pred"))
    assert run("simulate", "-c", cfg, "-o", sim) == 0
    trajs = sim / "trajectories"
    assert len(list(trajs.glob("*.csv"))) == 4
    assert run("fit", "-c", cfg, "-o", fit1, "--trajectories", trajs) == 0
    assert run("fit", "-c", cfg, "-o", fit2, "--trajectories", trajs) == 0
    assert tree(fit1) == tree(fit2)
    rep = json.loads((fit1 / "fit_report.json").read_text())
    assert len(rep["eigenvalues"]) == 2
    assert run("predict", "-c", cfg, "-o", pred, "--model", fit1 / "model.json", "--trajectories", trajs) == 0
    header = (pred / "predictions.csv").read_text().splitlines()[0]
    assert header == "traj_id,step," + ",".join(f"y{i}" for i in range(1, 8))


def test_fit_without_trajectories_is_deterministic(tmp_path):
    cfg = small_hutchinson(tmp_path)
    assert run("fit", "-c", cfg, "-o", tmp_path / "x") == 0
    assert run("fit", "-c", cfg, "-o", tmp_path / "y") == 0
    assert tree(tmp_path / "x") == tree(tmp_path / "y")


def test_validation_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"system": {"name": "hutchinson"}, "simulation": {"dt": -1}}))
    assert run("simulate", "-c", bad, "-o", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert "simulation.dt" in err and "simulation.t_end" in err


def test_unknown_system(tmp_path):
    cfg = small_hutchinson(tmp_path, system={"name": "lorenz"})
    assert run("simulate", "-c", cfg, "-o", tmp_path / "o") == 2


def test_missing_config_file(tmp_path):
    assert run("simulate", "-c", tmp_path / "nope.yaml", "-o", tmp_path / "o") == 2


def test_empty_trajectory_directory(tmp_path):
    cfg = small_hutchinson(tmp_path)
    (tmp_path / "empty").mkdir()
    assert run("fit", "-c", cfg, "-o", tmp_path / "o", "--trajectories", tmp_path / "empty") == 2


def test_takens_violation_is_validation_error(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "hutchinson.yaml").read_text())
    cfg["embedding"]["k"] = 4
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert run("fit", "-c", p, "-o", tmp_path / "o") == 2


def test_numeric_failure_exit_code(tmp_path, capsys):
    cfg = yaml.safe_load((CONFIGS / "microchaos-zoh.yaml").read_text())
    cfg["system"]["params"]["p_gain"] = 0.0       # open loop: grows like e^t
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(cfg))
    assert run("simulate", "-c", p, "-o", tmp_path / "o") == 3
    assert "numeric failure" in capsys.readouterr().err


@pytest.mark.parametrize("name", sorted(p.stem for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_validate(name):
    from ddessm import pipeline as P
    cfg = P.load_config(CONFIGS / f"{name}.yaml")
    assert cfg["name"] == name
    P.validate(cfg, "simulate")


def test_module_entry_point_and_numpy_backend(tmp_path):
    env = dict(os.environ, DDESSM_DISABLE_NUMBA="1", DDESSM_NUM_THREADS="1")
    res = subprocess.run([sys.executable, "-m", "ddessm", "oracle", "-o", str(tmp_path)],
                         env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    m = json.loads((tmp_path / "manifest.json").read_text())
    assert m["versions"]["backend"] == "numpy"
