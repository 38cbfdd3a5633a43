import numpy as np
import pytest

from surveyml.learners import LearnerSpec
from surveyml.simengine import (
    METRICS_CSV_HEADER,
    EstimatorTask,
    FailureRateError,
    MetricsRow,
    ScenarioConfig,
    aipw_task,
    compute_metrics,
    run_scenario,
    table2_tasks,
    table3_tasks,
    write_metrics_csv,
)


def tiny_config(**overrides):
    defaults = dict(
        name="tiny",
        n_units=200,
        sample_size=50,
        tasks=(
            EstimatorTask(name="ht", method="ht"),
            EstimatorTask(name="ipw_oracle", method="ipw_oracle"),
            EstimatorTask(
                name="ipw_logistic",
                method="ipw",
                learner=LearnerSpec("logistic", task="propensity"),
            ),
        ),
        replications=6,
        master_seed=123,
    )
    defaults.update(overrides)
    return ScenarioConfig(**defaults)


# ---------------------------------------------------------------------------
# metric arithmetic on hand-built vectors


def test_compute_metrics_relative_bias():
    mu = 5.0
    row = compute_metrics([10.0, 10.0, 10.0], None, None, mu)
    assert row.rb_pct == pytest.approx(100.0)
    assert row.rmse == pytest.approx(5.0)
    assert row.mean_variance is None and row.coverage_pct is None


def test_compute_metrics_rmse_symmetric_errors():
    row = compute_metrics([4.0, 6.0], None, None, 5.0)
    assert row.rb_pct == pytest.approx(0.0)
    assert row.rmse == pytest.approx(1.0)


def test_compute_metrics_spreadsheet_case():
    mu = 2.0
    est = [1.0, 2.0, 3.0]
    var = [0.5, 1.0, 1.5]
    flags = [True, True, False]
    row = compute_metrics(est, var, flags, mu)
    assert row.rb_pct == pytest.approx(0.0)
    assert row.rmse == pytest.approx(np.sqrt(2 / 3))
    assert row.mean_variance == pytest.approx(1.0)
    # Monte Carlo variance with ddof=1 is 1.0, so the variance bias is 0%
    assert row.var_rb_pct == pytest.approx(0.0)
    assert row.coverage_pct == pytest.approx(100 * 2 / 3)
    assert row.n_reps == 3


def test_compute_metrics_rejects_empty():
    with pytest.raises(ValueError):
        compute_metrics([], None, None, 1.0)


def test_metrics_row_validation():
    with pytest.raises(ValueError):
        MetricsRow("a", "b", 0.0, -1.0, None, None, None, 1, 0)
    with pytest.raises(ValueError):
        MetricsRow("a", "b", 0.0, 1.0, None, None, 150.0, 1, 0)


# ---------------------------------------------------------------------------
# configuration validation


def test_task_validation():
    with pytest.raises(ValueError):
        EstimatorTask(name="x", method="bogus")
    with pytest.raises(ValueError):
        EstimatorTask(name="x", method="ipw")  # learner missing
    with pytest.raises(ValueError):
        EstimatorTask(
            name="x",
            method="aipw_crossfit",
            learner=LearnerSpec("logistic", task="propensity"),
            outcome_learner=LearnerSpec("wls"),
            k_folds=1,
        )


def test_scenario_validation():
    with pytest.raises(ValueError):
        tiny_config(replications=0)
    with pytest.raises(ValueError):
        tiny_config(tasks=())
    with pytest.raises(ValueError):
        tiny_config(threads=0)
    with pytest.raises(ValueError):
        tiny_config(sample_size=500)  # n > N fails the design check


def test_task_labels():
    labels = [t.learner_label for t in table2_tasks()]
    assert labels == ["oracle", "logistic", "tree", "forest", "boosting", "pss"]
    assert aipw_task().learner_label == "wls+logistic"
    assert len(table3_tasks()) == 5


# ---------------------------------------------------------------------------
# running scenarios


def test_run_scenario_smoke_and_determinism():
    rows_a = run_scenario(tiny_config())
    rows_b = run_scenario(tiny_config())
    assert [r.estimator for r in rows_a] == ["ht", "ipw_oracle", "ipw_logistic"]
    for a, b in zip(rows_a, rows_b):
        assert a == b
    ht = rows_a[0]
    assert abs(ht.rb_pct) < 10 and ht.coverage_pct is not None
    assert rows_a[1].coverage_pct is None  # no variance without bootstrap


def test_thread_count_does_not_change_results(tmp_path):
    cfg1 = tiny_config(threads=1, replications=8)
    cfg3 = tiny_config(threads=3, replications=8)
    rows1 = run_scenario(cfg1)
    rows3 = run_scenario(cfg3)
    p1, p3 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_metrics_csv(rows1, cfg1, p1)
    write_metrics_csv(rows3, cfg3, p3)
    assert p1.read_bytes() == p3.read_bytes()


def test_bootstrap_attaches_variance_and_coverage():
    cfg = tiny_config(
        replications=3,
        bootstrap_b=10,
        tasks=(
            EstimatorTask(
                name="ipw_logistic",
                method="ipw",
                learner=LearnerSpec("logistic", task="propensity"),
            ),
        ),
    )
    rows = run_scenario(cfg)
    assert rows[0].mean_variance is not None and rows[0].mean_variance > 0
    assert rows[0].coverage_pct is not None


def test_aipw_task_runs():
    cfg = tiny_config(replications=3, tasks=(aipw_task(k_folds=3),))
    rows = run_scenario(cfg)
    assert rows[0].coverage_pct is not None
    assert rows[0].failures == 0


def test_all_failures_raise():
    # full response: the logistic propensity fit sees a single class every
    # replication and raises, tripping the failure-rate gate
    cfg = tiny_config(
        mechanism="constant:0.999999",
        replications=4,
        sample_size=20,
        tasks=(
            EstimatorTask(
                name="ipw_logistic",
                method="ipw",
                learner=LearnerSpec("logistic", task="propensity"),
            ),
        ),
    )
    with pytest.raises(FailureRateError):
        run_scenario(cfg)


def test_failure_rate_error_carries_rows():
    cfg = tiny_config(
        mechanism="constant:0.999999",
        replications=4,
        sample_size=20,
        tasks=(
            EstimatorTask(name="ht", method="ht"),
            EstimatorTask(
                name="ipw_logistic",
                method="ipw",
                learner=LearnerSpec("logistic", task="propensity"),
            ),
        ),
    )
    try:
        run_scenario(cfg)
    except FailureRateError as err:
        assert any(r.estimator == "ht" for r in err.rows)
    else:  # pragma: no cover - the gate must trip
        pytest.fail("expected FailureRateError")


def test_write_metrics_csv(tmp_path):
    cfg = tiny_config(replications=2)
    rows = run_scenario(cfg)
    path = tmp_path / "metrics.csv"
    write_metrics_csv(rows, cfg, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ",".join(METRICS_CSV_HEADER)
    assert len(lines) == 1 + len(rows)
    first = lines[1].split(",")
    assert first[:4] == ["tiny", "200", "50", "2"]
