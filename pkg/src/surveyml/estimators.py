"""Point estimators, variance estimators and confidence intervals.

All estimators target the finite-population mean. Value vectors passed in
(outcomes, covariate rows, propensities) are aligned with the realized
sample's ``sample_ids`` unless stated otherwise. Variance double sums use
the covariance of sampling indicators, Delta_kl = pi_kl - pi_k pi_l.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from . import learners
from .designs import DesignSpec, FoldPartition, SampleRealization, joint_inclusion_matrix
from .learners import FittedPredictor, LearnerSpec, fit, fit_crossfitted
from .nonresponse import ResponseMechanism, ResponsePattern
from .population import FinitePopulation


@dataclass
class EstimateResult:
    """Point estimate with optional variance and Wald interval."""

    point: float
    variance: float | None = None
    ci_low: float | None = None
    ci_high: float | None = None
    alpha: float = 0.05
    estimator_id: str = ""
    learner_id: str = ""
    k_folds: int = 0
    naive: bool = False

    def __post_init__(self):
        if self.variance is not None and self.variance < -1e-12:
            raise ValueError("variance estimate must be nonnegative")

    def csv_row(self) -> list:
        fmt = lambda v: "" if v is None else repr(float(v))
        return [
            self.estimator_id,
            self.learner_id,
            self.k_folds,
            repr(float(self.point)),
            fmt(self.variance),
            fmt(self.ci_low),
            fmt(self.ci_high),
            int(self.naive),
        ]


ESTIMATE_CSV_HEADER = [
    "estimator",
    "learner",
    "K",
    "point",
    "variance",
    "ci_low",
    "ci_high",
    "naive_flag",
]


def wald_ci(point: float, variance: float, alpha: float = 0.05) -> tuple[float, float]:
    """point +/- z_{1-alpha/2} sqrt(variance)."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    half = float(ndtri(1.0 - alpha / 2.0)) * np.sqrt(variance)
    return point - half, point + half


def _attach_ci(result: EstimateResult) -> EstimateResult:
    if result.variance is not None:
        result.ci_low, result.ci_high = wald_ci(
            result.point, max(result.variance, 0.0), result.alpha
        )
    return result


def _delta_over_pi(design: DesignSpec, n_units: int, ids: np.ndarray) -> np.ndarray:
    """Matrix of Delta_kl / pi_kl over sampled ids; diagonal is 1 - pi_k."""
    joint = joint_inclusion_matrix(design, n_units, ids)
    if np.any(joint <= 0):
        raise ValueError("pi_kl = 0 violates second-order positivity")
    pi = np.diag(joint).copy()
    return (joint - np.outer(pi, pi)) / joint


def _double_sum_variance(
    design: DesignSpec, n_units: int, ids: np.ndarray, values: np.ndarray
) -> float:
    """(1/N^2) sum_S sum_S (Delta_kl/pi_kl) (a_k/pi_k) (a_l/pi_l)."""
    joint = joint_inclusion_matrix(design, n_units, ids)
    if np.any(joint <= 0):
        raise ValueError("pi_kl = 0 violates second-order positivity")
    pi = np.diag(joint).copy()
    u = values / pi
    m = (joint - np.outer(pi, pi)) / joint
    return float(u @ m @ u) / n_units**2


def _pi_of(sample: SampleRealization) -> np.ndarray:
    return 1.0 / sample.weights


def _is_poisson(design: DesignSpec) -> bool:
    return design.kind in ("poisson", "poisson_pps")


# ---------------------------------------------------------------------------
# complete-data estimators


def ht_mean(sample: SampleRealization, y_s) -> EstimateResult:
    """Inverse-inclusion-probability weighted mean."""
    y_s = np.asarray(y_s, dtype=float)
    point = float(np.sum(sample.weights * y_s)) / sample.n_units
    return EstimateResult(point=point, estimator_id="ht")


def ht_variance(sample: SampleRealization, y_s, design: DesignSpec) -> float:
    """Design-unbiased variance estimator of the HT mean."""
    return _double_sum_variance(
        design, sample.n_units, sample.sample_ids, np.asarray(y_s, dtype=float)
    )


def ma_oracle(
    pop: FinitePopulation,
    sample: SampleRealization,
    m_n: FittedPredictor,
    design: DesignSpec | None = None,
    alpha: float = 0.05,
) -> EstimateResult:
    """Difference estimator built on a fixed population-level prediction rule."""
    fitted_all = np.asarray(m_n.predict(pop.covariates), dtype=float)
    y_s = pop.outcomes[sample.sample_ids]
    residuals = y_s - fitted_all[sample.sample_ids]
    point = (fitted_all.sum() + float(np.sum(sample.weights * residuals))) / pop.n_units
    result = EstimateResult(point=point, alpha=alpha, estimator_id="ma_oracle")
    if design is not None:
        result.variance = _double_sum_variance(
            design, pop.n_units, sample.sample_ids, residuals
        )
    return _attach_ci(result)


def ma_feasible(
    pop: FinitePopulation,
    sample: SampleRealization,
    learner: LearnerSpec,
    design: DesignSpec | None = None,
    rng: np.random.Generator | None = None,
    alpha: float = 0.05,
) -> EstimateResult:
    """Model-assisted estimator with the working model fit on the sample.

    The attached variance reuses the oracle formula with sample residuals and
    is flagged naive: for adaptive learners it is downward biased.
    """
    x_s = pop.covariates[sample.sample_ids]
    y_s = pop.outcomes[sample.sample_ids]
    fitted = fit(learner, x_s, y_s, sample.weights, rng=rng)
    fitted_all = np.asarray(fitted.predict(pop.covariates), dtype=float)
    residuals = y_s - fitted_all[sample.sample_ids]
    point = (fitted_all.sum() + float(np.sum(sample.weights * residuals))) / pop.n_units
    result = EstimateResult(
        point=point,
        alpha=alpha,
        estimator_id="ma_feasible",
        learner_id=learner.kind,
        naive=True,
    )
    if design is not None:
        result.variance = _double_sum_variance(
            design, pop.n_units, sample.sample_ids, residuals
        )
    return _attach_ci(result)


def greg(
    sample: SampleRealization,
    y_s,
    x_s,
    population_totals,
    design: DesignSpec | None = None,
    intercept: bool = True,
    alpha: float = 0.05,
) -> EstimateResult:
    """Generalized regression estimator: needs only sample covariates plus
    the population totals of the auxiliary variables."""
    y_s = np.asarray(y_s, dtype=float)
    x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
    if x_s.shape[0] != len(y_s):
        x_s = x_s.T
    t_x = np.asarray(population_totals, dtype=float)
    n_units = sample.n_units
    fitted = learners.fit_weighted_least_squares(x_s, y_s, sample.weights, intercept=intercept)
    totals = np.concatenate([[n_units], t_x]) if intercept else t_x
    residuals = y_s - fitted.predict(x_s)
    point = (
        float(totals @ fitted.coefficients) + float(np.sum(sample.weights * residuals))
    ) / n_units
    result = EstimateResult(
        point=point, alpha=alpha, estimator_id="greg", learner_id="wls"
    )
    if design is not None:
        result.variance = _double_sum_variance(
            design, n_units, sample.sample_ids, residuals
        )
    return _attach_ci(result)


def ma_crossfit(
    pop: FinitePopulation,
    sample: SampleRealization,
    folds: FoldPartition,
    learner: LearnerSpec,
    design: DesignSpec | None = None,
    rng: np.random.Generator | None = None,
    alpha: float = 0.05,
    pi_override: np.ndarray | None = None,
) -> EstimateResult:
    """Cross-fitted model-assisted estimator with population-level folds.

    Each fold's prediction rule is trained only on sampled units outside the
    fold; under Poisson sampling the estimator is exactly design-unbiased for
    any learner. ``pi_override`` substitutes modified (e.g. conditional)
    inclusion probabilities for the correction term.
    """
    if folds.level != "population":
        raise ValueError("folds must partition the population")
    if folds.fold_of.shape[0] != pop.n_units:
        raise ValueError("fold partition must cover the population")
    x_s = pop.covariates[sample.sample_ids]
    y_s = pop.outcomes[sample.sample_ids]
    fold_of_s = folds.fold_of[sample.sample_ids]
    predictors = fit_crossfitted(
        learner, x_s, y_s, sample.weights, fold_of_s, folds.k_folds, rng=rng
    )
    fitted_all = np.empty(pop.n_units)
    for v, predictor in enumerate(predictors):
        mask = folds.fold_of == v
        fitted_all[mask] = predictor.predict(pop.covariates[mask])
    residuals = y_s - fitted_all[sample.sample_ids]
    if pi_override is not None:
        pi_s = np.asarray(pi_override, dtype=float)[sample.sample_ids]
        if np.any(pi_s <= 0):
            raise ValueError("modified inclusion probabilities must be positive")
        estimator_id = "ma_crossfit_modified"
    else:
        pi_s = _pi_of(sample)
        estimator_id = "ma_crossfit"
    point = (fitted_all.sum() + float(np.sum(residuals / pi_s))) / pop.n_units
    result = EstimateResult(
        point=point,
        alpha=alpha,
        estimator_id=estimator_id,
        learner_id=learner.kind,
        k_folds=folds.k_folds,
    )
    if design is not None and pi_override is None:
        if _is_poisson(design):
            pi = _pi_of(sample)
            result.variance = float(
                np.sum((1.0 - pi) * residuals**2 / pi**2)
            ) / pop.n_units**2
        else:
            result.variance = _double_sum_variance(
                design, pop.n_units, sample.sample_ids, residuals
            )
    return _attach_ci(result)


def ma_crossfit_modified(
    pop: FinitePopulation,
    sample: SampleRealization,
    folds: FoldPartition,
    learner: LearnerSpec,
    pi_tilde: np.ndarray,
    rng: np.random.Generator | None = None,
    alpha: float = 0.05,
) -> EstimateResult:
    """Cross-fitted model-assisted estimator with conditional inclusion
    probabilities replacing the design probabilities in the correction."""
    return ma_crossfit(
        pop, sample, folds, learner, design=None, rng=rng, alpha=alpha,
        pi_override=np.asarray(pi_tilde, dtype=float),
    )


# ---------------------------------------------------------------------------
# item nonresponse: imputation and AIPW


def imputed_mean(
    sample: SampleRealization,
    responses: ResponsePattern,
    x_s,
    y_s,
    learner: LearnerSpec,
    rng: np.random.Generator | None = None,
) -> EstimateResult:
    """Single-imputation estimator: missing outcomes replaced by predictions
    fit on the respondents. No variance estimate is attached; a plug-in one
    is invalid once the imputation model is adaptive."""
    x_s = learners._as_matrix(x_s)
    y_s = np.asarray(y_s, dtype=float)
    r = responses.indicators
    if not r.any():
        raise ValueError("no respondents to fit the imputation model")
    fitted = fit(learner, x_s[r], y_s[r], sample.weights[r], rng=rng)
    y_tilde = np.where(r, y_s, np.asarray(fitted.predict(x_s), dtype=float))
    point = float(np.sum(sample.weights * y_tilde)) / sample.n_units
    return EstimateResult(
        point=point, estimator_id="imputed", learner_id=learner.kind, naive=True
    )


def _propensities(p, x_s, r) -> np.ndarray:
    if isinstance(p, ResponseMechanism):
        return np.asarray(p.prob_of(x_s), dtype=float)
    return np.asarray(p, dtype=float)


def aipw_oracle(
    sample: SampleRealization,
    responses: ResponsePattern,
    x_s,
    y_s,
    m: FittedPredictor,
    p,
    design: DesignSpec | None = None,
    sigma2: float | None = None,
    alpha: float = 0.05,
) -> EstimateResult:
    """AIPW estimator with known outcome regression and response propensity.

    The variance estimate is the complete-data double sum applied to the
    pseudo-values; the model-error component is added only when ``sigma2``
    is supplied (it is negligible at small sampling fractions).
    """
    x_s = learners._as_matrix(x_s)
    y_s = np.asarray(y_s, dtype=float)
    r = responses.indicators.astype(float)
    p_s = _propensities(p, x_s, r)
    if np.any(p_s <= 0):
        raise ValueError("response propensities must be positive")
    m_s = np.asarray(m.predict(x_s), dtype=float)
    eta = m_s + r * np.where(r > 0, (y_s - m_s) / p_s, 0.0)
    point = float(np.sum(sample.weights * eta)) / sample.n_units
    result = EstimateResult(point=point, alpha=alpha, estimator_id="aipw_oracle")
    if design is not None:
        variance = _double_sum_variance(design, sample.n_units, sample.sample_ids, eta)
        if sigma2 is not None:
            resp = responses.indicators
            variance += (
                sigma2
                * float(np.sum(sample.weights[resp] * (1.0 - p_s[resp]) / p_s[resp] ** 2))
                / sample.n_units**2
            )
        result.variance = variance
    return _attach_ci(result)


def _fit_aipw_nuisances(
    sample: SampleRealization,
    responses: ResponsePattern,
    x_s: np.ndarray,
    y_s: np.ndarray,
    folds: FoldPartition,
    m_spec: LearnerSpec,
    p_spec: LearnerSpec,
    rng: np.random.Generator | None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cross-fitted outcome and propensity predictions on the sample.

    The same fold partition drives both nuisance fits. A complement without
    nonrespondents yields a constant-one propensity for that fold; a
    complement without respondents for the outcome fit is a hard error.
    """
    if folds.level != "sample":
        raise ValueError("AIPW folds must partition the realized sample")
    if folds.fold_of.shape[0] != sample.size:
        raise ValueError("fold partition must cover the sample")
    r = responses.indicators
    m_predictors = fit_crossfitted(
        m_spec,
        x_s,
        y_s,
        sample.weights,
        folds.fold_of,
        folds.k_folds,
        rng=rng,
        train_mask=r,
    )
    m_cf = learners.crossfit_predict(m_predictors, x_s, folds.fold_of)

    p_cf = np.empty(sample.size)
    floor = p_spec.params.get("clip_floor", learners.DEFAULT_CLIP_FLOOR)
    for v in range(folds.k_folds):
        train = folds.fold_of != v
        evaluate = folds.fold_of == v
        child = None if rng is None else np.random.default_rng(rng.integers(2**31 - 1))
        if r[train].all():
            p_cf[evaluate] = 1.0
            continue
        if not r[train].any():
            raise learners.FoldFitError(v, "complement has no respondents")
        try:
            fitted = fit(
                p_spec, x_s[train], r[train].astype(float), sample.weights[train], rng=child
            )
        except Exception as exc:
            raise learners.FoldFitError(v, str(exc)) from exc
        p_cf[evaluate] = fitted.predict(x_s[evaluate])
    return m_cf, learners.clip_probabilities(p_cf, floor)


def aipw_crossfit(
    sample: SampleRealization,
    responses: ResponsePattern,
    x_s,
    y_s,
    folds: FoldPartition,
    m_spec: LearnerSpec,
    p_spec: LearnerSpec,
    design: DesignSpec | None = None,
    rng: np.random.Generator | None = None,
    sigma2: float | None = None,
    alpha: float = 0.05,
) -> EstimateResult:
    """Cross-fitted AIPW estimator with Wald interval."""
    x_s = learners._as_matrix(x_s)
    y_s = np.asarray(y_s, dtype=float)
    m_cf, p_cf = _fit_aipw_nuisances(
        sample, responses, x_s, y_s, folds, m_spec, p_spec, rng
    )
    r = responses.indicators.astype(float)
    eta = m_cf + r * (y_s - m_cf) / p_cf
    point = float(np.sum(sample.weights * eta)) / sample.n_units
    result = EstimateResult(
        point=point,
        alpha=alpha,
        estimator_id="aipw_crossfit",
        learner_id=f"{m_spec.kind}+{p_spec.kind}",
        k_folds=folds.k_folds,
    )
    if design is not None:
        variance = _double_sum_variance(design, sample.n_units, sample.sample_ids, eta)
        if sigma2 is not None:
            resp = responses.indicators
            variance += (
                sigma2
                * float(np.sum(sample.weights[resp] * (1.0 - p_cf[resp]) / p_cf[resp] ** 2))
                / sample.n_units**2
            )
        result.variance = variance
    return _attach_ci(result)


@dataclass(frozen=True)
class CompletedFile:
    """A single completed microdata file: observed values for respondents,
    modified imputed values for nonrespondents."""

    ids: np.ndarray
    weights: np.ndarray
    respondent: np.ndarray
    values: np.ndarray
    n_units: int

    def weighted_mean(self) -> float:
        return float(np.sum(self.weights * self.values)) / self.n_units

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "weight", "respondent", "value"])
            for i in range(len(self.ids)):
                writer.writerow(
                    [
                        int(self.ids[i]) + 1,
                        repr(float(self.weights[i])),
                        int(self.respondent[i]),
                        repr(float(self.values[i])),
                    ]
                )


def build_completed_file(
    sample: SampleRealization,
    responses: ResponsePattern,
    x_s,
    y_s,
    folds: FoldPartition,
    m_spec: LearnerSpec,
    p_spec: LearnerSpec,
    rng: np.random.Generator | None = None,
) -> CompletedFile:
    """Completed data file whose weighted mean reproduces the cross-fitted
    AIPW point estimate. Nonrespondents carry their cross-fitted prediction
    plus a shared correction assembled from respondent residuals."""
    x_s = learners._as_matrix(x_s)
    y_s = np.asarray(y_s, dtype=float)
    r = responses.indicators
    values = y_s.copy()
    if (~r).any():
        m_cf, p_cf = _fit_aipw_nuisances(
            sample, responses, x_s, y_s, folds, m_spec, p_spec, rng
        )
        w = sample.weights
        correction = float(
            np.sum(w[r] * (1.0 - p_cf[r]) / p_cf[r] * (y_s[r] - m_cf[r]))
        ) / float(np.sum(w[~r]))
        values[~r] = m_cf[~r] + correction
    return CompletedFile(
        ids=sample.sample_ids,
        weights=sample.weights,
        respondent=r.copy(),
        values=values,
        n_units=sample.n_units,
    )


# ---------------------------------------------------------------------------
# unit nonresponse: inverse probability weighting


EXPANSION = "expansion"
HAJEK = "hajek"


def ipw_mean(
    sample: SampleRealization,
    responses: ResponsePattern,
    y_s,
    p_hat_s,
    form: str = HAJEK,
    design: DesignSpec | None = None,
    known_p: bool = False,
    alpha: float = 0.05,
) -> EstimateResult:
    """Response-adjusted weighted mean, expansion or Hajek form.

    A variance estimate is attached only for the expansion form with known
    response probabilities; feasible variance estimation is delegated to the
    pseudo-population bootstrap.
    """
    y_s = np.asarray(y_s, dtype=float)
    p_s = np.asarray(p_hat_s, dtype=float)
    r = responses.indicators
    if np.any(p_s[r] <= 0):
        raise ValueError("nonpositive response probability on a respondent")
    w_star = sample.weights[r] / p_s[r]
    if form == EXPANSION:
        point = float(np.sum(w_star * y_s[r])) / sample.n_units
    elif form == HAJEK:
        point = float(np.sum(w_star * y_s[r]) / np.sum(w_star))
    else:
        raise ValueError(f"unknown IPW form {form!r}")
    result = EstimateResult(point=point, alpha=alpha, estimator_id=f"ipw_{form}")
    if form == EXPANSION and known_p and design is not None:
        result.variance = ipw_variance(sample, responses, p_s, y_s, design)
    return _attach_ci(result)


def ipw_variance(
    sample: SampleRealization,
    responses: ResponsePattern,
    p_s,
    y_s,
    design: DesignSpec,
) -> float:
    """Two-component variance estimator of the expansion IPW mean with known
    response probabilities: a sampling component estimated on respondents and
    a nonresponse component."""
    y_s = np.asarray(y_s, dtype=float)
    p_s = np.asarray(p_s, dtype=float)
    r = responses.indicators
    if np.any(p_s[r] <= 0):
        raise ValueError("nonpositive response probability on a respondent")
    ids_r = sample.sample_ids[r]
    joint = joint_inclusion_matrix(design, sample.n_units, ids_r)
    if np.any(joint <= 0):
        raise ValueError("pi_kl = 0 violates second-order positivity")
    pi_r = np.diag(joint).copy()
    y_r, p_r = y_s[r], p_s[r]
    u = y_r / (pi_r * p_r)
    m = (joint - np.outer(pi_r, pi_r)) / joint
    sampling = float(u @ m @ u)
    sampling -= float(np.sum((1.0 - pi_r) * (1.0 - p_r) / p_r**2 * y_r**2 / pi_r**2))
    nonresponse = float(np.sum((1.0 - p_r) / p_r**2 * y_r**2 / pi_r**2))
    return (sampling + nonresponse) / sample.n_units**2
