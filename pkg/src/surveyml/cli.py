"""Command-line entry point.

Subcommands: ``simulate`` (Monte Carlo scenarios), ``estimate`` (one-shot
estimation on a survey CSV), ``impute`` (completed-file construction),
``bootstrap`` (pseudo-population variance), ``diagnose`` (orthogonality
table). Every run writes a JSON manifest next to its outputs so it can be
replayed bit-identically.

Exit codes: 0 success, 1 usage or configuration error, 2 quality-gate breach.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, estimators
from .bootstrap import BootstrapConfig, pseudo_population_bootstrap
from .config import Config, ConfigError, load_config
from .designs import (
    DesignSpec,
    EnumerationSizeError,
    SampleRealization,
    UnsupportedDesignError,
    make_folds,
)
from .diagnostics import SCORES, orthogonality_table, score_expectation
from .learners import LearnerSpec
from .nonresponse import ResponsePattern, appendix_mechanism, constant_mechanism
from .population import DgpConfig, generate_population, population_mean
from .simengine import (
    EstimatorTask,
    FailureRateError,
    ScenarioConfig,
    aipw_task,
    run_scenario,
    table2_tasks,
    write_metrics_csv,
)

DIAG_TOLERANCE = 1e-6

# benchmark hyperparameters for each propensity learner kind
LEARNER_DEFAULTS = {
    "logistic": {},
    "tree": {"cp": 0.0, "minsplit": 20},
    "forest": {"ntree": 500, "mtry": 2, "nodesize": 5},
    "boosting": {
        "eta": 0.3,
        "max_depth": 6,
        "min_child_weight": 1.0,
        "max_rounds": 100,
        "cv_folds": 5,
        "patience": 10,
    },
    "pss": {"n_strata": 5},
}


class UsageError(ValueError):
    """Bad input that maps to exit code 1."""


def propensity_spec(kind: str) -> LearnerSpec:
    if kind not in LEARNER_DEFAULTS:
        raise UsageError(f"unknown propensity learner {kind!r}")
    return LearnerSpec(kind=kind, params=dict(LEARNER_DEFAULTS[kind]), task="propensity")


# ---------------------------------------------------------------------------
# shared plumbing


def _resolve_threads(args, cfg: Config, key: str) -> int:
    if args.threads is not None:
        return args.threads
    from_cfg = cfg.get_int(key)
    if from_cfg is not None:
        return from_cfg
    env = os.environ.get("SURVEYML_THREADS")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"SURVEYML_THREADS={env!r} is not an integer") from exc
    return 1


def _resolve_seed(args, cfg: Config, key: str) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.get_int(key, 0)


def _load_cfg(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    cfg.apply_overrides(args.set or [])
    return cfg


def _write_manifest(out_dir, command: str, cfg: Config, seed: int, outputs, timings):
    manifest = {
        "command": command,
        "artifact_version": __version__,
        "master_seed": seed,
        "config": dict(sorted(cfg.values.items())),
        "outputs": list(outputs),
        "timings_seconds": timings,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_survey_csv(path, need_respondent: bool = False):
    """Read ``id,weight,x1..xp,y[,respondent]``; errors name the column."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise UsageError(f"{path}: empty file")
            rows = list(reader)
    except OSError as exc:
        raise UsageError(f"cannot read data file {path}: {exc}") from exc

    has_respondent = header[-1] == "respondent"
    p = len(header) - (4 if has_respondent else 3)
    if p < 0:
        raise UsageError(f"{path}: too few columns for id,weight,...,y")
    expected = ["id", "weight"] + [f"x{j + 1}" for j in range(p)] + ["y"]
    if has_respondent:
        expected.append("respondent")
    for pos, (got, want) in enumerate(zip(header, expected)):
        if got != want:
            raise UsageError(
                f"{path}: column {pos + 1} is {got!r}, expected {want!r}"
            )
    if len(header) != len(expected):
        raise UsageError(f"{path}: expected {len(expected)} columns, got {len(header)}")
    if need_respondent and not has_respondent:
        raise UsageError(f"{path}: a 'respondent' column is required")
    if not rows:
        raise UsageError(f"{path}: no data rows")

    try:
        data = np.asarray([[float(v) for v in row] for row in rows])
    except ValueError as exc:
        raise UsageError(f"{path}: non-numeric cell ({exc})") from exc
    ids = data[:, 0].astype(np.int64) - 1
    if np.any(ids < 0):
        raise UsageError(f"{path}: ids must be positive integers")
    weights = data[:, 1]
    x = data[:, 2 : 2 + p]
    y = data[:, 2 + p]
    respondent = data[:, -1].astype(bool) if has_respondent else None
    return ids, weights, x, y, respondent


def _make_sample(ids, weights, n_units: int) -> SampleRealization:
    if n_units < int(ids.max()) + 1:
        raise UsageError("population size N is smaller than the largest unit id")
    indicators = np.zeros(n_units, dtype=bool)
    indicators[ids] = True
    if indicators.sum() != len(ids):
        raise UsageError("duplicate unit ids in the data file")
    return SampleRealization(indicators=indicators, sample_ids=ids, weights=weights)


def _response_pattern(ids, respondent) -> ResponsePattern:
    if respondent is None:
        respondent = np.ones(len(ids), dtype=bool)
    return ResponsePattern(
        indicators=respondent,
        respondent_ids=ids[respondent],
        nonrespondent_ids=ids[~respondent],
    )


def _population_size(cfg: Config, key: str, weights) -> int:
    n_units = cfg.get_int(key)
    if n_units is None:
        n_units = int(round(float(np.sum(weights))))
    return n_units


# ---------------------------------------------------------------------------
# simulate


_TASK_BUILDERS = {
    task.name.replace("ipw_", ""): task for task in table2_tasks()
}


def _scenario_from_config(cfg: Config, seed: int, threads: int) -> ScenarioConfig:
    names = [
        s.strip()
        for s in cfg.get(
            "scenario.estimators", "oracle,logistic,cart,rf,xgboost,pss"
        ).split(",")
        if s.strip()
    ]
    tasks = []
    for name in names:
        if name == "aipw":
            tasks.append(aipw_task(cfg.get_int("scenario.K", 5)))
        elif name == "ht":
            tasks.append(EstimatorTask(name="ht", method="ht"))
        elif name in _TASK_BUILDERS:
            tasks.append(_TASK_BUILDERS[name])
        else:
            raise UsageError(f"unknown estimator {name!r} in scenario.estimators")
    n_units = cfg.get_int("scenario.N")
    sample_size = cfg.get_int("scenario.n")
    replications = cfg.get_int("scenario.R")
    if n_units is None or sample_size is None or replications is None:
        raise UsageError("scenario.N, scenario.n and scenario.R are required")
    return ScenarioConfig(
        name=cfg.get("scenario.name", "scenario"),
        n_units=n_units,
        sample_size=sample_size,
        tasks=tuple(tasks),
        replications=replications,
        bootstrap_b=cfg.get_int("scenario.B", 0),
        alpha=cfg.get_float("scenario.alpha", 0.05),
        master_seed=seed,
        threads=threads,
        population_seed=cfg.get_int("scenario.population_seed"),
        noise_sd=cfg.get_float("scenario.noise_sd", 2.0),
        mechanism=cfg.get("scenario.mechanism", "benchmark"),
    )


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg, "scenario.seed")
    threads = _resolve_threads(args, cfg, "scenario.threads")
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    scenario = _scenario_from_config(cfg, seed, threads)

    started = time.perf_counter()
    gate_breached = False
    try:
        rows = run_scenario(scenario)
    except FailureRateError as exc:
        if not exc.rows:
            raise
        print(f"error: {exc}", file=sys.stderr)
        rows = exc.rows
        gate_breached = True
    run_seconds = time.perf_counter() - started

    metrics_path = os.path.join(out_dir, f"{scenario.name}_metrics.csv")
    write_metrics_csv(rows, scenario, metrics_path)
    outputs = [metrics_path]
    from .report import render_metrics_figures

    outputs += render_metrics_figures(rows, scenario, out_dir)
    outputs.append(
        _write_manifest(
            out_dir, "simulate", cfg, seed, outputs, {"run": run_seconds}
        )
    )
    for row in rows:
        print(
            f"{row.estimator:>16s}  RB={row.rb_pct:+7.2f}%  "
            f"RMSEx100={100 * row.rmse:7.2f}  failures={row.failures}"
        )
    print(f"metrics written to {metrics_path}")
    return 2 if gate_breached else 0


# ---------------------------------------------------------------------------
# estimate


def cmd_estimate(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg, "estimate.seed")
    ids, weights, x, y, respondent = _read_survey_csv(args.data)
    n_units = _population_size(cfg, "estimate.N", weights)
    sample = _make_sample(ids, weights, n_units)
    responses = _response_pattern(ids, respondent)
    design = DesignSpec.srswor(sample.size)
    alpha = cfg.get_float("estimate.alpha", 0.05)
    k_folds = cfg.get_int("estimate.K", 5)
    p_spec = propensity_spec(cfg.get("estimate.learner", "logistic"))
    m_spec = LearnerSpec(kind=cfg.get("estimate.outcome_learner", "wls"))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    wanted = [
        s.strip()
        for s in cfg.get("estimate.estimators", "ht").split(",")
        if s.strip()
    ]
    results = []
    for name in wanted:
        if name == "ht":
            result = estimators.ht_mean(sample, y)
            result.variance = estimators.ht_variance(sample, y, design)
            result.ci_low, result.ci_high = estimators.wald_ci(
                result.point, result.variance, alpha
            )
        elif name in ("ipw_hajek", "ipw_expansion"):
            form = name.split("_", 1)[1]
            from .learners import fit

            fitted = fit(p_spec, x, responses.indicators.astype(float), weights, rng=rng)
            p_hat = np.asarray(fitted.predict(x), dtype=float)
            result = estimators.ipw_mean(
                sample, responses, y, p_hat, form=form, alpha=alpha
            )
            result.learner_id = p_spec.kind
        elif name == "aipw":
            if respondent is None:
                raise UsageError("aipw requires a 'respondent' column")
            folds = make_folds(sample.size, k_folds, "sample", rng)
            result = estimators.aipw_crossfit(
                sample, responses, x, y, folds, m_spec, p_spec,
                design=design, rng=rng, alpha=alpha,
            )
        elif name == "imputed":
            if respondent is None:
                raise UsageError("imputed requires a 'respondent' column")
            result = estimators.imputed_mean(
                sample, responses, x, y, m_spec, rng=rng
            )
        else:
            raise UsageError(f"unknown estimator {name!r} in estimate.estimators")
        result.estimator_id = result.estimator_id or name
        results.append(result)

    out_csv = args.out or "estimates.csv"
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(estimators.ESTIMATE_CSV_HEADER)
        for result in results:
            writer.writerow(result.csv_row())
    _write_manifest(
        os.path.dirname(out_csv) or ".", "estimate", cfg, seed, [out_csv], {}
    )
    for result in results:
        print(f"{result.estimator_id:>16s}  point={result.point!r}")
    return 0


# ---------------------------------------------------------------------------
# impute


def cmd_impute(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg, "impute.seed")
    ids, weights, x, y, respondent = _read_survey_csv(args.data, need_respondent=True)
    n_units = _population_size(cfg, "impute.N", weights)
    sample = _make_sample(ids, weights, n_units)
    responses = _response_pattern(ids, respondent)
    k_folds = cfg.get_int("impute.K", 5)
    p_spec = propensity_spec(cfg.get("impute.learner", "logistic"))
    m_spec = LearnerSpec(kind=cfg.get("impute.outcome_learner", "wls"))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    folds = make_folds(sample.size, k_folds, "sample", rng)
    completed = estimators.build_completed_file(
        sample, responses, x, y, folds, m_spec, p_spec, rng=rng
    )
    out_csv = args.out or "completed.csv"
    completed.write_csv(out_csv)
    _write_manifest(
        os.path.dirname(out_csv) or ".", "impute", cfg, seed, [out_csv], {}
    )
    print(f"completed file written to {out_csv}")
    print(f"weighted mean = {completed.weighted_mean()!r}")
    return 0


# ---------------------------------------------------------------------------
# bootstrap


def cmd_bootstrap(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg, "bootstrap.seed")
    ids, weights, x, y, respondent = _read_survey_csv(args.data, need_respondent=True)
    n_units = _population_size(cfg, "bootstrap.N", weights)
    sample = _make_sample(ids, weights, n_units)
    responses = _response_pattern(ids, respondent)
    learner = propensity_spec(cfg.get("bootstrap.learner", "logistic"))
    boot_cfg = BootstrapConfig(
        replications=cfg.get_int("bootstrap.B", 250),
        seed=seed,
        form=cfg.get("bootstrap.form", estimators.HAJEK),
    )
    result = pseudo_population_bootstrap(sample, responses, x, y, learner, boot_cfg)
    out_csv = args.out or "bootstrap_replicates.csv"
    result.write_csv(out_csv)
    _write_manifest(
        os.path.dirname(out_csv) or ".", "bootstrap", cfg, seed, [out_csv], {}
    )
    print(f"replicates written to {out_csv}")
    print(f"bootstrap variance = {result.variance!r}")
    return 0


# ---------------------------------------------------------------------------
# diagnose


def cmd_diagnose(args) -> int:
    cfg = _load_cfg(args)
    seed = _resolve_seed(args, cfg, "diagnose.seed")
    n_units = cfg.get_int("diagnose.N", 6)
    sample_size = cfg.get_int("diagnose.n", 2)
    theta_offset = cfg.get_float("diagnose.theta_offset", 0.0)
    # orthogonality oracles need noise-free outcomes for exact expectations
    pop = generate_population(DgpConfig(n_units=n_units, noise_sd=0.0, seed=seed))
    mech_key = cfg.get("diagnose.mechanism", "benchmark")
    if mech_key == "benchmark":
        mechanism = appendix_mechanism(pop)
    elif mech_key.startswith("constant:"):
        mechanism = constant_mechanism(float(mech_key.split(":", 1)[1]))
    else:
        raise UsageError(f"unknown response mechanism {mech_key!r}")
    design = DesignSpec.srswor(sample_size)
    mu = population_mean(pop)
    from .population import DEFAULT_COEFFICIENTS

    beta = np.asarray(DEFAULT_COEFFICIENTS)
    nuisances = {
        "f": lambda x: beta[0] + np.atleast_2d(np.asarray(x, dtype=float)) @ beta[1:],
        "p": mechanism.prob_of,
    }

    theta = mu + theta_offset
    print(f"score expectations at theta = mu{theta_offset:+g}:")
    for kind, score in SCORES.items():
        value = score_expectation(score, pop, design, mechanism, theta, nuisances)
        print(f"  U_{kind:<8s} = {value:+.3e}")

    rows = orthogonality_table(pop, design, mechanism, nuisances)
    print()
    print(f"{'score':<8s} {'direction':<18s} {'derivative':>13s} "
          f"{'reference':>13s}  status")
    all_ok = True
    for row in rows:
        ok = abs(row["derivative"] - row["reference"]) <= DIAG_TOLERANCE
        all_ok = all_ok and ok
        print(
            f"{row['score']:<8s} {row['direction']:<18s} "
            f"{row['derivative']:+13.3e} {row['reference']:+13.3e}  "
            f"{'pass' if ok else 'FAIL'}"
        )
    return 0 if all_ok else 2


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="surveyml",
        description="Design-based survey estimation: simulation, estimation, "
        "imputation, bootstrap variance and orthogonality diagnostics.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data: bool = False):
        if data:
            p.add_argument("data", help="survey CSV: id,weight,x1..xp,y[,respondent]")
        p.add_argument("--config", help="flat dotted-key config file")
        p.add_argument("--out", help="output directory (simulate) or file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--threads", type=int, help="worker count override")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY=VALUE",
            help="config override, repeatable",
        )

    common(sub.add_parser("simulate", help="run a Monte Carlo scenario"))
    common(sub.add_parser("estimate", help="estimate a mean from a CSV"), data=True)
    common(sub.add_parser("impute", help="write a completed data file"), data=True)
    common(
        sub.add_parser("bootstrap", help="pseudo-population bootstrap variance"),
        data=True,
    )
    common(sub.add_parser("diagnose", help="print the orthogonality table"))
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "impute": cmd_impute,
    "bootstrap": cmd_bootstrap,
    "diagnose": cmd_diagnose,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (
        UsageError,
        ConfigError,
        UnsupportedDesignError,
        EnumerationSizeError,
        ValueError,
        KeyError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FailureRateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
