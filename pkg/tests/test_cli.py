import json
import subprocess
import sys

import numpy as np

from sensan import Grid, sample_from
from sensan.cli import main
from sensan.families import uniform

MEAN_MEDIAN = {
    "grid": {"lo": 0.0, "hi": 1.0, "n": 801},
    "distribution": {"family": "uniform"},
    "psi": {"kind": "moment", "rho": "x"},
    "nu": {"kind": "quantile", "tau": 0.5},
    "metric": {"kind": "information"},
}


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def test_sensitivity_mean_median(tmp_path, capsys):
    cfg = _write(tmp_path, "mm.json", MEAN_MEDIAN)
    assert main(["sensitivity", "--config", cfg]) == 0
    out = capsys.readouterr().out
    assert out.startswith("S = ")
    s = float(out.split()[2])
    assert abs(s - 0.5) < 1e-3


def test_sensitivity_writes_artifacts(tmp_path, capsys):
    cfg = _write(tmp_path, "mm.json", MEAN_MEDIAN)
    out_dir = tmp_path / "art"
    assert main(["sensitivity", "--config", cfg, "--out", str(out_dir)]) == 0
    rep = json.loads((out_dir / "report.json").read_text())
    assert abs(rep["S"] - 0.5) < 1e-3
    assert rep["metric_kind"] == "information"
    header = (out_dir / "curves" / "influence.csv").read_text().splitlines()[0]
    assert header == "x,psi,nu,grad_nu"
    assert (out_dir / "plots" / "influence.svg").read_text().startswith("<svg")


def test_sensitivity_policy_metric(tmp_path, capsys):
    cfg_dict = dict(MEAN_MEDIAN)
    cfg_dict["metric"] = {"kind": "policy",
                          "density": {"family": "linear", "intercept": 0.5,
                                      "slope": 1.0}}
    cfg = _write(tmp_path, "pol.json", cfg_dict)
    assert main(["sensitivity", "--config", cfg]) == 0
    s = float(capsys.readouterr().out.split()[2])
    assert abs(s - 0.5) > 1e-3    # the policy geometry moves S off 1/2


def test_grid_override_flag(tmp_path, capsys):
    cfg = _write(tmp_path, "mm.json", MEAN_MEDIAN)
    assert main(["sensitivity", "--config", cfg, "--grid", "201"]) == 0
    assert abs(float(capsys.readouterr().out.split()[2]) - 0.5) < 1e-3


def test_missing_config_file_names_the_path(tmp_path, capsys):
    missing = str(tmp_path / "absent.json")
    assert main(["sensitivity", "--config", missing]) == 2
    err = capsys.readouterr().err
    assert missing in err
    assert "config key 'config'" in err


def test_invalid_json_config(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["sensitivity", "--config", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err


def test_missing_functional_key(tmp_path, capsys):
    cfg_dict = {k: v for k, v in MEAN_MEDIAN.items() if k != "psi"}
    cfg = _write(tmp_path, "nopsi.json", cfg_dict)
    assert main(["sensitivity", "--config", cfg]) == 2
    assert "config key 'psi'" in capsys.readouterr().err


def test_unknown_metric_kind(tmp_path, capsys):
    cfg_dict = dict(MEAN_MEDIAN)
    cfg_dict["metric"] = {"kind": "hyperbolic"}
    cfg = _write(tmp_path, "bad.json", cfg_dict)
    assert main(["sensitivity", "--config", cfg]) == 2
    assert "config key 'metric'" in capsys.readouterr().err


def test_non_whitelisted_expression_is_a_config_error(tmp_path, capsys):
    cfg_dict = dict(MEAN_MEDIAN)
    cfg_dict["psi"] = {"kind": "moment", "rho": "exp(x)"}
    cfg = _write(tmp_path, "expr.json", cfg_dict)
    assert main(["sensitivity", "--config", cfg]) == 2
    assert "config key 'psi'" in capsys.readouterr().err


def test_bad_moment_expression_names_the_moments_key(tmp_path, capsys):
    cfg = _write(tmp_path, "gm.json", {
        "grid": {"lo": -7.0, "hi": 9.0, "n": 401},
        "distribution": {"family": "truncated_normal", "mean": 1.0,
                         "sd": 1.0},
        "moments": ["x - zeta0"],
        "theta_dim": 1,
        "bounds": [[-3.0, 3.0]],
    })
    assert main(["gmm", "--config", cfg]) == 2
    assert "config key 'moments'" in capsys.readouterr().err


def test_computation_failure_exits_one(tmp_path, capsys):
    cfg_dict = dict(MEAN_MEDIAN)
    cfg_dict["target_increment"] = 10.0
    cfg = _write(tmp_path, "big.json", cfg_dict)
    assert main(["counterfactual", "--config", cfg]) == 1
    assert "step too large" in capsys.readouterr().err


def test_counterfactual_artifacts(tmp_path, capsys):
    cfg_dict = dict(MEAN_MEDIAN)
    cfg_dict.update(target_increment=0.025, refine=True)
    cfg = _write(tmp_path, "cf.json", cfg_dict)
    out_dir = tmp_path / "cf_art"
    assert main(["counterfactual", "--config", cfg,
                 "--out", str(out_dir)]) == 0
    line = capsys.readouterr().out
    assert line.startswith("h = ")
    rep = json.loads((out_dir / "report.json").read_text())
    assert abs(rep["nu_after"] - 0.525) < 1e-6
    assert abs(rep["h"] - 0.2 / 1.9) < 1e-6
    assert (out_dir / "curves" / "counterfactual.csv").exists()
    assert (out_dir / "curves" / "densities.csv").exists()
    assert (out_dir / "plots" / "densities.svg").exists()


def test_gmm_two_moment_case(tmp_path, capsys):
    cfg = _write(tmp_path, "gmm.json", {
        "grid": {"lo": -7.0, "hi": 9.0, "n": 801},
        "distribution": {"family": "truncated_normal", "mean": 1.0,
                         "sd": 1.0},
        "moments": ["x - th0", "x*x - th0*th0 - 1"],
        "theta_dim": 1,
        "bounds": [[-3.0, 3.0]],
        "weight": "identity",
    })
    out_dir = tmp_path / "gmm_art"
    assert main(["gmm", "--config", cfg, "--out", str(out_dir)]) == 0
    text = capsys.readouterr().out
    assert "specified = True" in text
    rep = json.loads((out_dir / "report.json").read_text())
    assert abs(rep["theta"][0] - 1.0) < 1e-8
    assert abs(rep["var_weighted"][0] - 1.32) < 1e-6
    assert abs(rep["var_efficient"][0] - 1.0) < 1e-6
    header = (out_dir / "curves" /
              "influences.csv").read_text().splitlines()[0]
    assert header == "x,influence_0,efficient_0"


def test_gmm_missing_required_key(tmp_path, capsys):
    cfg = _write(tmp_path, "g.json", {
        "distribution": {"family": "uniform"},
        "moments": ["x - th0"], "theta_dim": 1})
    assert main(["gmm", "--config", cfg]) == 2
    assert "config key 'bounds'" in capsys.readouterr().err


def test_gmm_bad_weight(tmp_path, capsys):
    cfg = _write(tmp_path, "g.json", {
        "distribution": {"family": "uniform"},
        "moments": ["x - th0"], "theta_dim": 1, "bounds": [[-1.0, 1.0]],
        "weight": "fast"})
    assert main(["gmm", "--config", cfg]) == 2
    assert "config key 'weight'" in capsys.readouterr().err


def test_surface_point_value(capsys):
    assert main(["surface", "--chart", "sphere", "--point", "0.33333",
                 "0.33333", "--psi", "u", "--nu", "v"]) == 0
    val = float(capsys.readouterr().out.strip())
    assert abs(val + 0.11111) < 1e-5


def test_surface_numerical_mode_and_report(tmp_path, capsys):
    assert main(["surface", "--chart", "sphere", "--point", "0.4", "0.3",
                 "--psi", "u", "--nu", "v", "--mode", "numerical",
                 "--out", str(tmp_path)]) == 0
    val = float(capsys.readouterr().out.strip())
    assert abs(val + 0.12) < 1e-6
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["mode"] == "numerical"
    # stdout rounds to 8 decimals, the report keeps full precision
    assert abs(rep["sensitivity"] - val) < 1e-8


def test_mc_joint_multinomial(tmp_path, capsys):
    cfg = _write(tmp_path, "mc.json", {
        "mode": "joint",
        "distribution": {"family": "multinomial", "probs": [0.5, 0.3, 0.2]},
        "cells": [0, 1], "n": 2000, "reps": 300, "seed": 5,
    })
    out_dir = tmp_path / "mc_art"
    assert main(["mc", "--config", cfg, "--out", str(out_dir)]) == 0
    assert "Lambda_hat" in capsys.readouterr().out
    rep = json.loads((out_dir / "report.json").read_text())
    cov = np.asarray(rep["covariance"]["2000"])
    assert abs(cov[0, 1] + 0.15) < 0.02
    header = (out_dir / "table.csv").read_text().splitlines()[0]
    assert header == "n,rep,psi_hat,nu_hat"


def test_mc_consistency_mode(tmp_path, capsys):
    cfg = _write(tmp_path, "mc.json", {
        "mode": "consistency",
        "grid": {"lo": 0.0, "hi": 1.0, "n": 401},
        "distribution": {"family": "uniform"},
        "psi": {"kind": "moment", "rho": "x"},
        "nu": {"kind": "quantile", "tau": 0.5},
        "n_grid": [100, 200, 400], "reps": 20,
    })
    assert main(["mc", "--config", cfg, "--seed", "3"]) == 0
    text = capsys.readouterr().out
    assert "population = 0.12500000" in text
    assert text.count("rmse") == 3


def test_mc_plugin_mode_on_stored_sample(tmp_path, capsys):
    rng = np.random.default_rng(21)
    s = sample_from(uniform(Grid.line(0.0, 1.0, 801)), 5000, rng)
    csv_path = tmp_path / "sample.csv"
    s.to_csv(str(csv_path))
    cfg = _write(tmp_path, "mc.json", {
        "mode": "plugin",
        "sample_csv": str(csv_path),
        "psi": {"kind": "moment", "rho": "x"},
        "nu": {"kind": "quantile", "tau": 0.5},
    })
    out_dir = tmp_path / "plug_art"
    assert main(["mc", "--config", cfg, "--out", str(out_dir)]) == 0
    val = float(capsys.readouterr().out.split("=")[1])
    assert abs(val - 0.125) < 0.02
    rep = json.loads((out_dir / "report.json").read_text())
    assert rep["n"] == 5000


def test_mc_plugin_requires_sample(tmp_path, capsys):
    cfg = _write(tmp_path, "mc.json", {"mode": "plugin"})
    assert main(["mc", "--config", cfg]) == 2
    assert "config key 'sample_csv'" in capsys.readouterr().err


def test_mc_unknown_mode(tmp_path, capsys):
    cfg = _write(tmp_path, "mc.json", {"mode": "warp"})
    assert main(["mc", "--config", cfg]) == 2
    assert "config key 'mode'" in capsys.readouterr().err


def test_replicate_education_requires_out(capsys):
    assert main(["replicate-education"]) == 2
    assert "config key 'out'" in capsys.readouterr().err


def test_replicate_education_runs(tmp_path, capsys):
    out_dir = tmp_path / "edu"
    assert main(["replicate-education", "--out", str(out_dir),
                 "--grid", "201"]) == 0
    text = capsys.readouterr().out
    assert "target increment = 0.1" in text
    assert text.count("achieved median") == 4
    assert (out_dir / "table.csv").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "sensan.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "sensitivity" in proc.stdout
    assert "replicate-education" in proc.stdout
