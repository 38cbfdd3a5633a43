"""Pseudo-population bootstrap variance estimation for IPW estimators.

Each sampled unit is replicated N/n times, carrying its covariates, outcome
and response indicator; bootstrap samples are redrawn from that artificial
population with the original design and the propensity model is refit on each
replicate. Response indicators stay fixed throughout, so the procedure
captures sampling variability with the response mechanism held as observed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import estimators
from .designs import SampleRealization, UnsupportedDesignError
from .learners import LearnerSpec, clip_probabilities, fit
from .learners import DEFAULT_CLIP_FLOOR
from .nonresponse import ResponsePattern


@dataclass(frozen=True)
class BootstrapConfig:
    """Number of replicates, seed, and the IPW form to replicate."""

    replications: int
    seed: int = 0
    form: str = estimators.HAJEK
    refit: bool = True

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("need at least two bootstrap replications")
        if self.form not in (estimators.EXPANSION, estimators.HAJEK):
            raise ValueError(f"unknown IPW form {self.form!r}")
        if not self.refit:
            raise ValueError("the procedure is defined with per-replicate refits")


@dataclass(frozen=True)
class BootstrapResult:
    variance: float
    replicates: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["b", "estimate"])
            for b, value in enumerate(self.replicates, start=1):
                writer.writerow([b, repr(float(value))])


def _ipw_replicate(
    x: np.ndarray,
    y: np.ndarray,
    r: np.ndarray,
    learner: LearnerSpec,
    form: str,
    expansion_factor: float,
    rng: np.random.Generator,
) -> float:
    """Fit the propensity learner on one bootstrap sample and recompute the
    IPW mean. Sampling weights in the pseudo-population are all N/n."""
    w = np.full(len(y), expansion_factor)
    fitted = fit(learner, x, r.astype(float), w, rng=rng)
    p_hat = np.asarray(fitted.predict(x), dtype=float)
    floor = learner.params.get("clip_floor", DEFAULT_CLIP_FLOOR)
    p_hat = clip_probabilities(p_hat, floor)
    w_star = w[r] / p_hat[r]
    if form == estimators.EXPANSION:
        n_units = round(expansion_factor * len(y))
        return float(np.sum(w_star * y[r])) / n_units
    return float(np.sum(w_star * y[r]) / np.sum(w_star))


def pseudo_population_bootstrap(
    sample: SampleRealization,
    responses: ResponsePattern,
    x_s,
    y_s,
    learner: LearnerSpec,
    config: BootstrapConfig,
) -> BootstrapResult:
    """Bootstrap variance of the feasible IPW mean under SRSWOR.

    Requires N/n to be an integer so each sampled unit can be replicated
    exactly N/n times. Outcomes of nonrespondents are never touched: the
    replicate estimator only reads y on its respondents. A bootstrap sample
    with zero respondents is discarded and redrawn, with a hard cap on the
    total number of redraws.
    """
    n = sample.size
    n_units = sample.n_units
    if n_units % n != 0:
        raise UnsupportedDesignError(
            f"N/n = {n_units}/{n} is not an integer; the pseudo-population "
            "cannot replicate each unit a whole number of times"
        )
    m = n_units // n
    x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
    y_s = np.asarray(y_s, dtype=float)
    r_s = responses.indicators
    if not r_s.any():
        raise ValueError("original sample has no respondents")

    # pseudo-population: index i*n + j is copy j of sampled unit i
    star_unit = np.repeat(np.arange(n), m)
    b_count = config.replications
    replicates = np.empty(b_count)
    max_attempts = 10 * b_count
    attempts = 0
    for b in range(b_count):
        # keyed per-replicate streams: identical replicate vector no matter
        # how the b-loop is scheduled
        seq = np.random.SeedSequence(entropy=config.seed, spawn_key=(b,))
        rng = np.random.Generator(np.random.PCG64(seq))
        while True:
            if attempts >= max_attempts:
                raise RuntimeError(
                    "exceeded the redraw cap: too many bootstrap samples "
                    "without any respondent"
                )
            attempts += 1
            chosen = rng.choice(n_units, size=n, replace=False)
            idx = star_unit[chosen]
            if r_s[idx].any():
                break
        replicates[b] = _ipw_replicate(
            x_s[idx], y_s[idx], r_s[idx], learner, config.form, float(m), rng
        )
    variance = float(np.var(replicates, ddof=1))
    return BootstrapResult(variance=variance, replicates=replicates)
