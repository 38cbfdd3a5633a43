"""Monte Carlo scenario runner.

A scenario fixes one finite population, then repeatedly draws samples and
response patterns, computes every configured estimator, and aggregates
relative bias, root mean squared error, variance bias and confidence-interval
coverage. Replications are driven by per-replication seed sequences keyed on
(master seed, replication index), so results are bit-identical no matter how
the replications are scheduled across workers.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import estimators
from .bootstrap import BootstrapConfig, pseudo_population_bootstrap
from .designs import DesignSpec, draw_sample, make_folds
from .learners import LearnerSpec, fit
from .nonresponse import appendix_mechanism, constant_mechanism, draw_responses
from .population import DgpConfig, generate_population, population_mean

METRICS_CSV_HEADER = [
    "scenario",
    "N",
    "n",
    "R",
    "estimator",
    "learner",
    "RB_pct",
    "RMSE_x100",
    "var_RB_pct",
    "coverage_pct",
    "failures",
]


class FailureRateError(RuntimeError):
    """Raised when an estimator fails in more than 1% of replications."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows or []


@dataclass(frozen=True)
class EstimatorTask:
    """One estimator column of the scenario.

    ``method`` selects the computation: "ht" (full-response weighted mean
    with its analytic variance), "ipw_oracle" (true response probabilities),
    "ipw" (propensity learner refit each replication), or "aipw_crossfit".
    """

    name: str
    method: str
    learner: LearnerSpec | None = None
    outcome_learner: LearnerSpec | None = None
    k_folds: int = 0
    form: str = estimators.HAJEK

    def __post_init__(self):
        if self.method not in ("ht", "ipw_oracle", "ipw", "aipw_crossfit"):
            raise ValueError(f"unknown estimator method {self.method!r}")
        if self.method == "ipw" and self.learner is None:
            raise ValueError("ipw task requires a propensity learner")
        if self.method == "aipw_crossfit":
            if self.learner is None or self.outcome_learner is None:
                raise ValueError("aipw task requires propensity and outcome learners")
            if self.k_folds < 2:
                raise ValueError("aipw task requires k_folds >= 2")

    @property
    def learner_label(self) -> str:
        if self.method == "aipw_crossfit":
            return f"{self.outcome_learner.kind}+{self.learner.kind}"
        if self.method == "ipw_oracle":
            return "oracle"
        return self.learner.kind if self.learner is not None else ""


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative scenario description; must stay picklable for workers."""

    name: str
    n_units: int
    sample_size: int
    tasks: tuple[EstimatorTask, ...]
    replications: int
    bootstrap_b: int = 0
    alpha: float = 0.05
    master_seed: int = 0
    threads: int = 1
    population_seed: int | None = None
    noise_sd: float = 2.0
    mechanism: str = "benchmark"

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if not self.tasks:
            raise ValueError("scenario needs at least one estimator task")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        self.design().validate(self.n_units)

    def design(self) -> DesignSpec:
        return DesignSpec.srswor(self.sample_size)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated Monte Carlo metrics for one estimator."""

    estimator: str
    learner: str
    rb_pct: float
    rmse: float
    mean_variance: float | None
    var_rb_pct: float | None
    coverage_pct: float | None
    n_reps: int
    failures: int

    def __post_init__(self):
        if self.rmse < 0:
            raise ValueError("RMSE cannot be negative")
        if self.coverage_pct is not None and not 0 <= self.coverage_pct <= 100:
            raise ValueError("coverage must lie in [0, 100]")


def _build_scene(config: ScenarioConfig):
    pop_seed = (
        config.master_seed if config.population_seed is None else config.population_seed
    )
    pop = generate_population(
        DgpConfig(n_units=config.n_units, noise_sd=config.noise_sd, seed=pop_seed)
    )
    if config.mechanism == "benchmark":
        mechanism = appendix_mechanism(pop)
    elif config.mechanism.startswith("constant:"):
        mechanism = constant_mechanism(float(config.mechanism.split(":", 1)[1]))
    else:
        raise ValueError(f"unknown response mechanism {config.mechanism!r}")
    return pop, mechanism


def _rep_rng(master_seed: int, rep: int, channel: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(rep, channel))
    return np.random.Generator(np.random.PCG64(seq))


def _rep_seed(master_seed: int, rep: int, channel: int) -> int:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(rep, channel))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> 1)


def _run_task(task, config, pop, mechanism, sample, responses, rep):
    design = config.design()
    x_s = pop.covariates[sample.sample_ids]
    y_s = pop.outcomes[sample.sample_ids]
    channel = 10 + config.tasks.index(task)
    rng = _rep_rng(config.master_seed, rep, channel)
    alpha = config.alpha

    if task.method == "ht":
        result = estimators.ht_mean(sample, y_s)
        result.variance = estimators.ht_variance(sample, y_s, design)
        result.ci_low, result.ci_high = estimators.wald_ci(
            result.point, result.variance, alpha
        )
        return result

    if task.method == "aipw_crossfit":
        folds = make_folds(sample.size, task.k_folds, "sample", rng)
        return estimators.aipw_crossfit(
            sample,
            responses,
            x_s,
            y_s,
            folds,
            task.outcome_learner,
            task.learner,
            design=design,
            rng=rng,
            alpha=alpha,
        )

    if task.method == "ipw_oracle":
        p_s = np.asarray(mechanism.prob_of(x_s), dtype=float)
    else:
        fitted = fit(
            task.learner, x_s, responses.indicators.astype(float), sample.weights, rng=rng
        )
        p_s = np.asarray(fitted.predict(x_s), dtype=float)
    result = estimators.ipw_mean(
        sample, responses, y_s, p_s, form=task.form, alpha=alpha
    )
    if config.bootstrap_b > 0 and task.method == "ipw":
        boot = pseudo_population_bootstrap(
            sample,
            responses,
            x_s,
            y_s,
            task.learner,
            BootstrapConfig(
                replications=config.bootstrap_b,
                seed=_rep_seed(config.master_seed, rep, 100 + channel),
                form=task.form,
            ),
        )
        result.variance = boot.variance
        result.ci_low, result.ci_high = estimators.wald_ci(
            result.point, boot.variance, alpha
        )
    return result


def _run_replications(config: ScenarioConfig, start: int, stop: int) -> list:
    """One record per replication: per task, (point, variance, covered) or
    a failure message."""
    pop, mechanism = _build_scene(config)
    design = config.design()
    mu = population_mean(pop)
    records = []
    for rep in range(start, stop):
        sample = draw_sample(design, pop.n_units, _rep_rng(config.master_seed, rep, 0))
        responses = draw_responses(
            mechanism, sample, pop, _rep_rng(config.master_seed, rep, 1)
        )
        record = {}
        for task in config.tasks:
            try:
                result = _run_task(task, config, pop, mechanism, sample, responses, rep)
            except Exception as exc:
                record[task.name] = ("fail", f"{type(exc).__name__}: {exc}")
                continue
            covered = None
            if result.ci_low is not None:
                covered = bool(result.ci_low <= mu <= result.ci_high)
            record[task.name] = ("ok", result.point, result.variance, covered)
        records.append(record)
    return records


def compute_metrics(estimates, variances, ci_flags, mu_true: float) -> MetricsRow:
    """Aggregate one estimator's replicates into a metrics row."""
    estimates = np.asarray(estimates, dtype=float)
    if estimates.size == 0:
        raise ValueError("no estimates to aggregate")
    errors = estimates - mu_true
    rb = float(100.0 * np.mean(errors / mu_true))
    rmse = float(np.sqrt(np.mean(errors**2)))
    mean_var = var_rb = coverage = None
    if variances is not None and any(v is not None for v in variances):
        vals = np.asarray([v for v in variances if v is not None], dtype=float)
        mean_var = float(np.mean(vals))
        if estimates.size > 1:
            mc_var = float(np.var(estimates, ddof=1))
            if mc_var > 0:
                var_rb = 100.0 * (mean_var - mc_var) / mc_var
    if ci_flags is not None and any(c is not None for c in ci_flags):
        flags = [bool(c) for c in ci_flags if c is not None]
        coverage = 100.0 * sum(flags) / len(flags)
    return MetricsRow(
        estimator="",
        learner="",
        rb_pct=rb,
        rmse=rmse,
        mean_variance=mean_var,
        var_rb_pct=var_rb,
        coverage_pct=coverage,
        n_reps=int(estimates.size),
        failures=0,
    )


def _chunk_bounds(total: int, workers: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, total, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def run_scenario(config: ScenarioConfig) -> list[MetricsRow]:
    """Run all replications and aggregate per-estimator metrics.

    Replication records are reduced in replication order. An estimator whose
    failure count exceeds 1% of R fails the scenario with FailureRateError;
    the partially aggregated rows ride along on the exception.
    """
    r_total = config.replications
    if config.threads > 1 and r_total > 1:
        bounds = _chunk_bounds(r_total, config.threads)
        with ProcessPoolExecutor(max_workers=len(bounds)) as pool:
            futures = [
                pool.submit(_run_replications, config, a, b) for a, b in bounds
            ]
            records = [rec for future in futures for rec in future.result()]
    else:
        records = _run_replications(config, 0, r_total)

    pop, _ = _build_scene(config)
    mu = population_mean(pop)
    rows = []
    breached = []
    for task in config.tasks:
        estimates, variances, flags = [], [], []
        failures = 0
        for record in records:
            entry = record[task.name]
            if entry[0] == "fail":
                failures += 1
                continue
            estimates.append(entry[1])
            variances.append(entry[2])
            flags.append(entry[3])
        if not estimates:
            raise FailureRateError(
                f"estimator {task.name!r} failed in every replication", rows=rows
            )
        base = compute_metrics(estimates, variances, flags, mu)
        row = MetricsRow(
            estimator=task.name,
            learner=task.learner_label,
            rb_pct=base.rb_pct,
            rmse=base.rmse,
            mean_variance=base.mean_variance,
            var_rb_pct=base.var_rb_pct,
            coverage_pct=base.coverage_pct,
            n_reps=base.n_reps,
            failures=failures,
        )
        rows.append(row)
        if failures > 0.01 * r_total:
            breached.append(task.name)
    if breached:
        raise FailureRateError(
            f"failure rate above 1% for: {', '.join(breached)}", rows=rows
        )
    return rows


def write_metrics_csv(rows: list[MetricsRow], config: ScenarioConfig, path) -> None:
    fmt = lambda v: "" if v is None else repr(float(v))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for row in rows:
            writer.writerow(
                [
                    config.name,
                    config.n_units,
                    config.sample_size,
                    config.replications,
                    row.estimator,
                    row.learner,
                    repr(float(row.rb_pct)),
                    repr(float(100.0 * row.rmse)),
                    fmt(row.var_rb_pct),
                    fmt(row.coverage_pct),
                    row.failures,
                ]
            )


def table2_tasks() -> tuple[EstimatorTask, ...]:
    """The six benchmark-scenario estimators: oracle plus five learners,
    all in Hajek form."""
    propensity = lambda kind, **params: LearnerSpec(
        kind=kind, params=params, task="propensity"
    )
    return (
        EstimatorTask(name="ipw_oracle", method="ipw_oracle"),
        EstimatorTask(name="ipw_logistic", method="ipw", learner=propensity("logistic")),
        EstimatorTask(
            name="ipw_cart",
            method="ipw",
            learner=propensity("tree", cp=0.0, minsplit=20),
        ),
        EstimatorTask(
            name="ipw_rf",
            method="ipw",
            learner=propensity("forest", ntree=500, mtry=2, nodesize=5),
        ),
        EstimatorTask(
            name="ipw_xgboost",
            method="ipw",
            learner=propensity(
                "boosting",
                eta=0.3,
                max_depth=6,
                min_child_weight=1.0,
                max_rounds=100,
                cv_folds=5,
                patience=10,
            ),
        ),
        EstimatorTask(
            name="ipw_pss", method="ipw", learner=propensity("pss", n_strata=5)
        ),
    )


def table3_tasks() -> tuple[EstimatorTask, ...]:
    """The five feasible estimators evaluated with bootstrap variances."""
    return tuple(t for t in table2_tasks() if t.method == "ipw")


def aipw_task(k_folds: int = 5) -> EstimatorTask:
    return EstimatorTask(
        name="aipw_crossfit",
        method="aipw_crossfit",
        learner=LearnerSpec(kind="logistic", params={}, task="propensity"),
        outcome_learner=LearnerSpec(kind="wls", params={}, task="regression"),
        k_folds=k_folds,
    )
