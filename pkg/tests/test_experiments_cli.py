import json
import os
import subprocess
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from tsallis_lq import experiments as ex
from tsallis_lq.cli import main
from tsallis_lq.lq_model import save_model

from conftest import scalar_model

ROOT = Path(__file__).resolve().parents[1]
SMALL = {"pe": {"M": 40}, "iterations": 3, "seeds": [0, 1]}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.mark.parametrize("problem", [
    {"kind": "mv_benchmark", "q": 1.5},
    {"kind": "mv_benchmark", "q": 0.0},
    {"kind": "mv_benchmark", "gamma": 1.0},
    {"kind": "mv_benchmark", "tau": -0.1},
    {"kind": "mv_benchmark", "noise_mode": "scalar"},
    {"kind": "mv", "riskfree": 1.0, "mean_excess": [0.1], "excess_cov": -1.0, "R": [[1.0]]},
])
def test_invalid_problem_rejected_before_running(tmp_path, problem, capsys):
    out = tmp_path / "out"
    code = main(["pi-offline", "--config", write_config(tmp_path, {"problem": problem}),
                 "--out", str(out)])
    assert code == 2 and "error" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize("sweep", [{"param": "q", "values": [0.5, 1.2]},
                                   {"param": "gamma", "values": [0.9, 1.0]},
                                   {"param": "tau", "values": [-1.0]},
                                   {"param": "R", "values": [1.0]}])
def test_invalid_sweep_rejected(sweep):
    with pytest.raises(ex.ConfigError):
        ex.make_config({"sweep": sweep})


def test_unknown_keys_and_bad_json(tmp_path):
    with pytest.raises(ex.ConfigError):
        ex.make_config({"iteratons": 3})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ex.ConfigError):
        ex.load_config(str(bad))


def test_config_overrides_merge():
    cfg = ex.make_config({"pe": {"M": 10}, "seeds": [3]})
    assert cfg["pe"]["M"] == 10 and cfg["pe"]["T"] == 1 and cfg["seeds"] == [3]
    assert ex.DEFAULTS["pe"]["M"] == 1200


def test_curve_metrics_and_summary():
    errs = [1.0, 0.5, 0.009, 0.02, 0.0009]
    m = ex.curve_metrics(errs)
    assert m["terminal_error"] == 0.0009 and m["min_error"] == 0.0009
    assert m["iters_to_0.01"] == 2 and m["iters_to_0.001"] == 4
    s = ex.summarize([(0, errs), (1, [1.0, 1.0]), (2, [1.0, 1.0])])
    assert s["median"]["iters_to_0.01"] is None and s["median"]["terminal_error"] == 1.0


def test_pi_offline_byte_identical_across_runs_and_jobs(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    for name, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        assert main(["pi-offline", "--config", cfg, "--out", str(tmp_path / name),
                     "--jobs", jobs]) == 0
    files = ["pi_offline_tsallis.csv", "pi_offline_tsallis_summary.json"]
    for f in files:
        ref = (tmp_path / "a" / f).read_bytes()
        assert ref == (tmp_path / "b" / f).read_bytes() == (tmp_path / "c" / f).read_bytes()
    header = (tmp_path / "a" / files[0]).read_text().splitlines()[0]
    assert header.startswith("iteration,normalized_gain_error,objective_estimate,seed")


def test_out_dir_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(ex.OUT_ENV, str(tmp_path / "env_out"))
    assert main(["exact"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert (tmp_path / "env_out" / "exact.json").exists()
    assert report["K"][0][0] == pytest.approx(0.18823192, abs=1e-8)
    assert main(["exact", "--out", str(tmp_path / "flag_out")]) == 0
    assert (tmp_path / "flag_out" / "exact.json").exists()


def test_tolerance_is_monotone(tmp_path):
    reports = [ex.run_exact(ex.make_config({"tol": tol}), str(tmp_path / f"t{i}"))
               for i, tol in enumerate((1e-4, 1e-8, 1e-12))]
    its = [r["iterations"] for r in reports]
    assert its == sorted(its) and its[0] < its[-1]
    # the stopping rule is relative to the size of P
    assert all(r["residual"] <= r["tol"] * (1 + np.linalg.norm(r["P"])) for r in reports)
    ref = np.array(reports[-1]["K"])
    gaps = [np.max(np.abs(np.array(r["K"]) - ref)) for r in reports[:2]]
    assert gaps[0] >= gaps[1]


def test_solver_failure_exit_code(tmp_path, capsys):
    # state noise the control cannot reach, strong enough to defeat the discount
    model = scalar_model(C=1.0, D=0.0, W=2.0).to_dict()
    cfg = write_config(tmp_path, {"problem": {"kind": "model", "model": model}})
    assert main(["exact", "--config", cfg, "--out", str(tmp_path)]) == 3
    assert "residual" in capsys.readouterr().err


def test_singleton_sweep_matches_figure_curve(tmp_path):
    cfg = ex.make_config({**SMALL, "sweep": {"param": "q", "values": [0.8]}})
    ex.run_sweep(cfg, str(tmp_path / "s"))
    ex.run_figure1(cfg, str(tmp_path / "f"))

    def errors(path):
        rows = [line.split(",") for line in path.read_text().splitlines()[1:]]
        return [(r[3], r[0], r[1]) for r in rows]

    assert errors(tmp_path / "s" / "sweep_q.csv") == errors(tmp_path / "f" / "tsallis.csv")


def test_figure1_and_online_outputs(tmp_path):
    cfg = ex.make_config(SMALL)
    fig = ex.run_figure1(cfg, str(tmp_path))
    assert set(fig) == {"tsallis", "shannon", "none"}
    labels = {line.rsplit(",", 1)[1] for line in (tmp_path / "none.csv").read_text().splitlines()[1:]}
    assert labels == {"none"}
    online = ex.run_online(cfg, str(tmp_path))
    assert set(online) == {"online", "offline"}
    assert set(online["offline"]["per_seed"]) == {"0", "1"}


def test_model_file_problem(tmp_path):
    path = tmp_path / "model.json"
    save_model(scalar_model(tau=0.2, q=0.9), path)
    cfg = ex.make_config({"problem": {"kind": "model", "path": str(path)}})
    report = ex.run_exact(cfg, str(tmp_path))
    assert report["q"] == 0.9 and report["tau"] == 0.2
    with pytest.raises(ex.ConfigError):
        ex.run_mv_sim(cfg, str(tmp_path))
    path.write_text(json.dumps({"A": [[1.0]]}))
    with pytest.raises(ex.ConfigError):
        ex.run_exact(cfg, str(tmp_path))


def test_pi_model_runner(tmp_path):
    res = ex.run_pi_model(ex.make_config({"iterations": 10}), str(tmp_path))
    assert res["errors"][-1] < 1e-8 and res["aborted"] is None
    assert (tmp_path / "pi_model.csv").exists()


def test_mv_sim_runner(tmp_path):
    cfg = ex.make_config({"mv_sim": {"x0": 0.5, "horizon": 30, "paths": 2000}, "seeds": [5]})
    rep = ex.run_mv_sim(cfg, str(tmp_path))
    assert rep["horizon"] == 30 and rep["objective_stderr"] > 0
    assert len((tmp_path / "wealth.csv").read_text().splitlines()) == 32


def test_plot_command_and_missing_file(tmp_path, capsys):
    ex.run_pi_model(ex.make_config({"iterations": 3}), str(tmp_path))
    assert main(["plot", str(tmp_path / "pi_model.csv"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "pi_model.svg").read_text().startswith("<?xml")
    capsys.readouterr()
    assert main(["plot", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 2


def test_docs_schemas_match_packaged():
    for name in ("config", "model"):
        packaged = resources.files("tsallis_lq").joinpath(f"schemas/{name}.schema.json").read_text()
        assert (ROOT / "docs" / f"{name}.schema.json").read_text() == packaged


def test_module_entry_point(tmp_path):
    env = {**os.environ, ex.OUT_ENV: str(tmp_path)}
    proc = subprocess.run([sys.executable, "-m", "tsallis_lq", "--help"], capture_output=True,
                          text=True, env=env, check=True)
    for cmd in ("exact", "pi-model", "pi-offline", "pi-online", "sweep", "mv-sim", "plot"):
        assert cmd in proc.stdout


def test_short_runs_write_strict_json(tmp_path):
    ex.run_data_driven(ex.make_config(SMALL), str(tmp_path))
    summary = json.loads((tmp_path / "pi_offline_tsallis_summary.json").read_text(),
                         parse_constant=lambda c: pytest.fail(f"non-JSON constant {c}"))
    assert summary["median"]["mid_run_std"] is None
    assert ex.curve_metrics([1.0, np.inf])["terminal_error"] is None
