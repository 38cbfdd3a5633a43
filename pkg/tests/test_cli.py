import csv
import json
import os

import numpy as np
import pytest

from surveyml.cli import main


def write_survey_csv(path, n=60, n_units=240, respondent=True, seed=0):
    """A small synthetic SRSWOR survey file; returns (weights, y, r)."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 4))
    x[:, 3] = rng.random(n)
    y = 10 + 2 * x[:, 0] - 1.5 * x[:, 1] + x[:, 2] + 3 * x[:, 3]
    y += rng.normal(0, 2, n)
    w = np.full(n, n_units / n)
    r = rng.random(n) < 0.7 if respondent else None
    header = ["id", "weight", "x1", "x2", "x3", "x4", "y"]
    if respondent:
        header.append("respondent")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(n):
            row = [k + 1, w[k], *x[k], y[k]]
            if respondent:
                row.append(int(r[k]))
            writer.writerow(row)
    return w, y, r


# ---------------------------------------------------------------------------
# exit code 1: usage and configuration errors


def test_missing_config_file_is_exit_1(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert "error:" in capsys.readouterr().err


def test_simulate_requires_scenario_keys(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("scenario.N = 100\n")
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "scenario.R" in capsys.readouterr().err


def test_unknown_estimator_name_is_exit_1(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "scenario.N = 100\nscenario.n = 20\nscenario.R = 2\n"
        "scenario.estimators = ht,bogus\n"
    )
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err


def test_malformed_header_names_the_column(tmp_path, capsys):
    data = tmp_path / "bad.csv"
    data.write_text("id,weight,x1,x2,outcome\n1,2.0,0.1,0.2,3.0\n")
    assert main(["estimate", str(data)]) == 1
    err = capsys.readouterr().err
    assert "'outcome'" in err and "'y'" in err


def test_estimate_aipw_needs_respondent_column(tmp_path, capsys):
    data = tmp_path / "survey.csv"
    write_survey_csv(data, respondent=False)
    assert (
        main(
            [
                "estimate",
                str(data),
                "--set",
                "estimate.estimators=aipw",
                "--out",
                str(tmp_path / "est.csv"),
            ]
        )
        == 1
    )
    assert "respondent" in capsys.readouterr().err


def test_bad_threads_env_is_exit_1(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("SURVEYML_THREADS", "many")
    cfg = tmp_path / "c.cfg"
    cfg.write_text("scenario.N = 100\nscenario.n = 20\nscenario.R = 2\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 1


# ---------------------------------------------------------------------------
# estimate


def test_estimate_ht_matches_hand_weighted_mean(tmp_path, capsys):
    data = tmp_path / "survey.csv"
    w, y, _ = write_survey_csv(data)
    out = tmp_path / "est.csv"
    assert main(["estimate", str(data), "--out", str(out)]) == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["estimator"] == "ht"
    expected = float(np.sum(w * y)) / round(float(np.sum(w)))
    assert float(rows[0]["point"]) == pytest.approx(expected, rel=1e-12)
    assert float(rows[0]["ci_low"]) < expected < float(rows[0]["ci_high"])
    # a manifest is written next to the output
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "estimate"
    assert str(out) in manifest["outputs"]


def test_estimate_multiple_estimators_and_overrides_in_manifest(tmp_path):
    data = tmp_path / "survey.csv"
    write_survey_csv(data)
    out = tmp_path / "est.csv"
    code = main(
        [
            "estimate",
            str(data),
            "--out",
            str(out),
            "--seed",
            "42",
            "--set",
            "estimate.estimators=ht,ipw_hajek,ipw_expansion,aipw,imputed",
        ]
    )
    assert code == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["estimator"] for r in rows] == [
        "ht",
        "ipw_hajek",
        "ipw_expansion",
        "aipw_crossfit",
        "imputed",
    ]
    assert rows[4]["naive_flag"] == "1"
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["master_seed"] == 42
    assert (
        manifest["config"]["estimate.estimators"]
        == "ht,ipw_hajek,ipw_expansion,aipw,imputed"
    )


# ---------------------------------------------------------------------------
# impute


def test_impute_weighted_mean_equals_estimate_aipw_point(tmp_path):
    data = tmp_path / "survey.csv"
    write_survey_csv(data)
    completed = tmp_path / "completed.csv"
    est = tmp_path / "est.csv"
    assert main(["impute", str(data), "--out", str(completed), "--seed", "7"]) == 0
    assert (
        main(
            [
                "estimate",
                str(data),
                "--out",
                str(est),
                "--seed",
                "7",
                "--set",
                "estimate.estimators=aipw",
            ]
        )
        == 0
    )
    with open(completed) as fh:
        rows = list(csv.DictReader(fh))
    values = np.array([float(r["value"]) for r in rows])
    weights = np.array([float(r["weight"]) for r in rows])
    with open(est) as fh:
        aipw_point = float(list(csv.DictReader(fh))[0]["point"])
    assert np.sum(weights * values) / np.sum(weights) == pytest.approx(
        aipw_point, abs=1e-10
    )
    # respondents keep their observed outcomes
    with open(data) as fh:
        original = list(csv.DictReader(fh))
    for row, orig in zip(rows, original):
        if row["respondent"] == "1":
            assert float(row["value"]) == pytest.approx(float(orig["y"]), abs=1e-12)


def test_impute_requires_respondent_column(tmp_path, capsys):
    data = tmp_path / "survey.csv"
    write_survey_csv(data, respondent=False)
    assert main(["impute", str(data), "--out", str(tmp_path / "c.csv")]) == 1


# ---------------------------------------------------------------------------
# bootstrap


def test_bootstrap_writes_replicates(tmp_path):
    data = tmp_path / "survey.csv"
    write_survey_csv(data)
    out = tmp_path / "boot.csv"
    code = main(
        ["bootstrap", str(data), "--out", str(out), "--set", "bootstrap.B=12"]
    )
    assert code == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "b,estimate" and len(lines) == 13


def test_bootstrap_rejects_fractional_expansion(tmp_path, capsys):
    data = tmp_path / "survey.csv"
    write_survey_csv(data, n=60, n_units=250)  # N/n not integral
    assert main(["bootstrap", str(data), "--out", str(tmp_path / "b.csv")]) == 1


# ---------------------------------------------------------------------------
# simulate


def test_simulate_writes_metrics_figures_manifest(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "scenario.name = smoke\nscenario.N = 200\nscenario.n = 50\n"
        "scenario.R = 4\nscenario.estimators = ht,logistic\n"
    )
    out = tmp_path / "run"
    code = main(
        ["simulate", "--config", str(cfg), "--out", str(out), "--seed", "5"]
    )
    assert code == 0
    metrics = out / "smoke_metrics.csv"
    assert metrics.exists()
    assert (out / "smoke_bias_rmse.png").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["master_seed"] == 5
    assert str(metrics) in manifest["outputs"]
    with open(metrics) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["estimator"] for r in rows] == ["ht", "ipw_logistic"]
    assert all(r["R"] == "4" for r in rows)


def test_simulate_quality_gate_breach_is_exit_2(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "scenario.name = gate\nscenario.N = 100\nscenario.n = 20\n"
        "scenario.R = 4\nscenario.estimators = ht,logistic\n"
        "scenario.mechanism = constant:0.999999\n"
    )
    out = tmp_path / "run"
    code = main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert code == 2
    # partial metrics still land on disk for post-mortems
    assert (out / "gate_metrics.csv").exists()
    assert "failed in every replication" in capsys.readouterr().err


def test_simulate_set_overrides_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(
        "scenario.name = ovr\nscenario.N = 200\nscenario.n = 50\n"
        "scenario.R = 9\nscenario.estimators = ht\n"
    )
    out = tmp_path / "run"
    code = main(
        [
            "simulate",
            "--config",
            str(cfg),
            "--out",
            str(out),
            "--set",
            "scenario.R=3",
        ]
    )
    assert code == 0
    with open(out / "ovr_metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["R"] == "3"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["scenario.R"] == "3"


# ---------------------------------------------------------------------------
# diagnose


def test_diagnose_passes_with_oracle_nuisances(tmp_path, capsys):
    assert main(["diagnose", "--seed", "0"]) == 0
    output = capsys.readouterr().out
    assert "pass" in output and "FAIL" not in output
    assert "score expectations" in output


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
