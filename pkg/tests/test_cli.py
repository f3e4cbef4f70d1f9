import json
import shutil
from pathlib import Path

import pytest
import yaml

from homflow.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture
def demo_config(tmp_path):
    cfg = yaml.safe_load((CONFIGS / "demo_small.yaml").read_text())
    path = tmp_path / "demo.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path, cfg, tmp_path


def test_missing_config_is_usage_error(tmp_path):
    assert main(["validate", "--config", str(tmp_path / "nope.yaml")]) == 2


def test_unparseable_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    assert main(["validate", "--config", str(bad)]) == 2


def test_validate_ok(demo_config, capsys):
    path, _, _ = demo_config
    assert main(["validate", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert json.loads(out)["ok"] is True


def test_validate_flags_bad_growth_constant(demo_config):
    path, cfg, tmp = demo_config
    cfg["space"]["materials"][0]["r"] = 9.0  # r exceeds the declared c
    bad = tmp / "bad_growth.yaml"
    bad.write_text(yaml.safe_dump(cfg))
    assert main(["validate", "--config", str(bad)]) == 1


def test_unfold_test_cli(demo_config):
    path, _, tmp = demo_config
    out = tmp / "runs"
    assert main(["unfold-test", "--config", str(path), "--out", str(out)]) == 0
    diag = list(out.glob("*/diagnostics.json"))
    assert diag
    records = json.loads(diag[0].read_text())
    assert all(r["value"] <= 1e-11 for r in records)


def test_cell_cli(demo_config, capsys):
    path, _, tmp = demo_config
    assert main(["cell", "--config", str(path), "--out", str(tmp / "runs")]) == 0
    out = capsys.readouterr().out
    assert "power-mean oracle" in out
    assert list((tmp / "runs").glob("*/homtable.json"))


def test_flow_cli(demo_config):
    path, _, tmp = demo_config
    out = tmp / "runs"
    assert main(["flow", "--config", str(path), "--out", str(out)]) == 0
    run_dir = next(out.glob("demo-small-flow-*"))
    assert (run_dir / "trajectory.csv").exists()
    assert (run_dir / "apriori.json").exists()
    assert list(run_dir.glob("field_*.bin"))


def test_converge_cli_end_to_end(demo_config):
    path, _, tmp = demo_config
    out = tmp / "runs"
    assert main(["converge", "--config", str(path), "--seed", "42",
                 "--out", str(out)]) == 0
    run_dir = next(out.glob("demo-small-*"))
    report = json.loads((run_dir / "report.json").read_text())
    assert report["config"]["seed"] == 42
    assert (run_dir / "plots.gp").exists()
    assert (run_dir / "error_vs_eps.png").exists()


def test_converge_thread_invariance(demo_config):
    path, _, tmp = demo_config
    outs = {}
    for workers in ("1", "8"):
        out = tmp / f"runs{workers}"
        assert main(["converge", "--config", str(path), "--out", str(out),
                     "--threads", workers]) == 0
        run_dir = next(out.glob("demo-small-*"))
        outs[workers] = {f.name: f.read_bytes()
                         for f in run_dir.iterdir()
                         if f.suffix in (".csv", ".json", ".gp", ".bin")}
    assert outs["1"].keys() == outs["8"].keys()
    for name in outs["1"]:
        assert outs["1"][name] == outs["8"][name], name


def test_thread_env_override(demo_config, monkeypatch):
    path, _, tmp = demo_config
    out = tmp / "runs-env"
    monkeypatch.setenv("HOMFLOW_THREADS", "4")
    assert main(["converge", "--config", str(path), "--out", str(out)]) == 0
    assert list(out.glob("demo-small-*/report.csv"))
