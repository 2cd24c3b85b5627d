import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from ricnn.cli import main
from ricnn.config import RunConfig
from ricnn.errors import ConfigError
from ricnn.panel import load_panel
from ricnn.pipeline import execute, expand_grid, sweep

ROOT = Path(__file__).resolve().parents[1]


def small_config(out_dir, model="ric_nn", **extra):
    cfg = {
        "panel": {"synthetic": {"n_stocks": 20, "n_steps": 140, "signal_kind": "nonlinear",
                                "noise_scale": 0.01, "turnover_rate": 0.02}},
        "model": model,
        "policy": {"window": 12, "max_epochs": 40, "epochs": 3},
        "network": {"hidden_dims": [16, 16], "dropout_rates": [0.1, 0.1]},
        "evaluation": {"t_start": 30, "t_end": 35},
        "output_dir": str(out_dir),
    }
    cfg.update(extra)
    return cfg


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture
def config_file(tmp_path):
    return write_yaml(tmp_path / "run.yaml", small_config(tmp_path / "out"))


def test_run_writes_outputs(tmp_path, config_file, capsys):
    assert main(["run", "--config", config_file]) == 0
    out = tmp_path / "out"
    for name in ("report.json", "series.csv", "rank_ic.csv", "scores.csv", "trace.csv",
                 "effective_config.yaml", "run_meta.json"):
        assert (out / name).exists(), name
    assert list((out / "snapshots").glob("final_t35.npz"))
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["rank_ic"]) == 6
    for leg in rep["metrics"].values():
        assert all(math.isfinite(v) for v in leg.values())
    assert "mean rank IC" in capsys.readouterr().out


def test_run_is_deterministic(tmp_path, config_file):
    main(["run", "--config", config_file])
    main(["run", "--config", config_file, "--output-dir", str(tmp_path / "again")])
    for name in ("report.json", "series.csv", "scores.csv", "rank_ic.csv"):
        assert (tmp_path / "out" / name).read_bytes() == (tmp_path / "again" / name).read_bytes()


def test_flags_override_config(tmp_path, config_file, capsys):
    argv = ["run", "--config", config_file, "--model", "lasso", "--lam", "0.01", "--seed-data", "9",
            "--no-warm-start", "--print-effective-config"]
    assert main(argv) == 0
    eff = yaml.safe_load(capsys.readouterr().out)
    assert eff["model"] == "lasso"
    assert eff["linear"]["lam"] == 0.01
    assert eff["seeds"]["data"] == 9
    assert eff["policy"]["warm_start"] is False
    assert eff["portfolio"] == {"quantile": 0.2, "cost_per_side": 0.0005}
    assert not (tmp_path / "out").exists()


def test_config_error_exit_code(tmp_path, capsys):
    bad = write_yaml(tmp_path / "bad.yaml", {**small_config(tmp_path), "model": "svm"})
    assert main(["run", "--config", bad]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config"
    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 1


def test_runtime_error_exit_code(tmp_path, config_file, capsys):
    assert main(["run", "--config", config_file, "--t-end", "200"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["module"] and "message" in err


def test_diverged_training_reports_step(tmp_path, config_file, capsys):
    assert main(["run", "--config", config_file, "--learning-rate", "1e300", "--model", "epoch_nn"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "TrainingDivergedError"
    assert err["step"] == 30


@pytest.mark.parametrize(
    "patch",
    [
        {"panel": {"file": "x.csv", "synthetic": {"n_stocks": 20, "n_steps": 140}}},
        {"panel": {"synthetic": {"n_stocks": 20, "n_steps": 140, "seed": 4}}},
        {"policy": {"v_init": 0.3, "v_stop": 0.2}},
        {"model": "ridge", "linear": {"lam": 0.0}},
        {"portfolio": {"quantile": 0.7}},
        {"network": {"hidden_dims": [4], "dropout_rates": [0.1, 0.1]}},
        {"model": "lasso", "transfer_source": "x.npz"},
        {"policy": {"patience": 3}},
        {"colour": "red"},
    ],
)
def test_config_validation(tmp_path, patch):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({**small_config(tmp_path), **patch})


def test_digest_ignores_output_dir(tmp_path):
    a = RunConfig.from_dict(small_config(tmp_path / "a"))
    b = RunConfig.from_dict(small_config(tmp_path / "b"))
    c = RunConfig.from_dict(small_config(tmp_path / "a", model="lasso"))
    assert a.digest() == b.digest() != c.digest()


def test_gen_data_then_run_from_file(tmp_path):
    csv_path = tmp_path / "panel.csv"
    assert main(["gen-data", "--n-stocks", "20", "--n-steps", "140", "--seed", "5", "--out", str(csv_path)]) == 0
    assert load_panel(csv_path).T == 140
    cfg = small_config(tmp_path / "out", model="lasso")
    cfg["panel"] = {"file": str(csv_path)}
    assert main(["run", "--config", write_yaml(tmp_path / "f.yaml", cfg)]) == 0
    # a file panel and the same synthetic panel in memory give the same report
    syn = small_config(tmp_path / "o2", model="lasso", seeds={"data": 5})
    syn["panel"]["synthetic"].update(noise_scale=0.02, turnover_rate=0.01)
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert execute(RunConfig.from_dict(syn)).report["metrics"] == rep["metrics"]


def test_gen_data_rejects_bad_spec(tmp_path):
    assert main(["gen-data", "--n-stocks", "3", "--out", str(tmp_path / "p.csv")]) == 1


def test_recompute_metrics_both_ways(tmp_path, config_file):
    main(["run", "--config", config_file])
    run_dir = str(tmp_path / "out")
    assert main(["recompute-metrics", run_dir]) == 0
    script = subprocess.run([sys.executable, str(ROOT / "scripts" / "recompute_metrics.py"), run_dir],
                            capture_output=True, text=True)
    assert script.returncode == 0, script.stdout + script.stderr
    assert "OK" in script.stdout


def test_recompute_detects_tampering(tmp_path, config_file):
    main(["run", "--config", config_file])
    path = tmp_path / "out" / "report.json"
    rep = json.loads(path.read_text())
    rep["metrics"]["long_short"]["risk"] += 1e-6
    path.write_text(json.dumps(rep))
    assert main(["recompute-metrics", str(tmp_path / "out")]) == 2


def test_transfer_end_to_end(tmp_path):
    cfg = small_config(tmp_path / "out", network={"hidden_dims": [8] * 5, "dropout_rates": [0.1] * 5})
    config_file = write_yaml(tmp_path / "deep.yaml", cfg)
    assert main(["run", "--config", config_file]) == 0
    snap = next((tmp_path / "out" / "snapshots").glob("final_*.npz"))
    assert main(["run", "--config", config_file, "--transfer-source", str(snap),
                 "--output-dir", str(tmp_path / "tl")]) == 0
    rep = json.loads((tmp_path / "tl" / "report.json").read_text())
    assert rep["training"]["terminated"][0] in ("ReachedStop", "HitCap")


def test_transfer_into_shallow_network_fails(tmp_path, config_file, capsys):
    main(["run", "--config", config_file])
    snap = next((tmp_path / "out" / "snapshots").glob("final_*.npz"))
    assert main(["run", "--config", config_file, "--transfer-source", str(snap)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert "k must lie" in err["message"]
    assert err["module"] == "net" and err["step"] == 30


def test_auto_epoch_flag(tmp_path, config_file):
    assert main(["run", "--config", config_file, "--model", "epoch_nn", "--auto-epoch-from-first-step"]) == 0
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    fixed = rep["training"]["fixed_epochs"]
    assert set(rep["training"]["epochs"]) == {fixed}


# -- sweeps --------------------------------------------------------------------


def _read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_lambda_grid_gives_three_rows(tmp_path):
    grid = {"base": small_config(tmp_path, model="lasso"), "grid": {"linear.lam": [1e-3, 1e-4, 1e-5]}}
    assert main(["sweep", "--grid", write_yaml(tmp_path / "g.yaml", grid), "--output-dir", str(tmp_path / "sw")]) == 0
    rows = _read_table(tmp_path / "sw" / "comparison.csv")
    assert [r["point"] for r in rows] == ["0", "1", "2", "std"]
    assert all(r["status"] == "ok" for r in rows[:3])


def test_epoch_grid_rows_and_sensitivity(tmp_path):
    grid = {"base": small_config(tmp_path, model="epoch_nn"), "grid": {"policy.epochs": [1, 2, 3, 4]}}
    points, rows, std = sweep(grid, tmp_path / "sw")
    table = _read_table(tmp_path / "sw" / "comparison.csv")
    assert len(table) == 5 and table[-1]["point"] == "std"
    rr = [r["rr"] for r in rows]
    assert std["rr"] == pytest.approx(float(__import__("numpy").std(rr, ddof=1)))
    assert float(table[-1]["rr"]) == std["rr"]


def test_single_point_sweep_matches_run(tmp_path):
    base = small_config(tmp_path / "direct", model="lasso")
    sweep({"base": base, "grid": {"linear.lam": [0.001]}}, tmp_path / "sw")
    direct = execute(RunConfig.from_dict(base)).report
    swept = json.loads((tmp_path / "sw" / "point_000" / "report.json").read_text())
    assert swept["metrics"] == direct["metrics"]


def test_failed_point_does_not_stop_sweep(tmp_path):
    grid = {"base": small_config(tmp_path, model="lasso"), "grid": {"evaluation.t_end": [35, 500]}}
    _, rows, _ = sweep(grid, tmp_path / "sw")
    assert rows[0]["status"] == "ok"
    assert rows[1]["status"].startswith("error")


def test_parallel_sweep_matches_serial(tmp_path):
    grid = {"base": small_config(tmp_path, model="lasso"), "grid": {"linear.lam": [1e-3, 1e-2]}}
    sweep(grid, tmp_path / "a", jobs=1)
    sweep(grid, tmp_path / "b", jobs=2)
    assert (tmp_path / "a" / "comparison.csv").read_bytes() == (tmp_path / "b" / "comparison.csv").read_bytes()


def test_empty_grid_rejected():
    with pytest.raises(ConfigError):
        expand_grid({})
    with pytest.raises(ConfigError):
        expand_grid({"linear.lam": []})
