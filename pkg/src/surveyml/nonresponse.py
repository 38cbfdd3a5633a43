"""Missing-at-random response mechanisms and response-indicator generation.

A mechanism maps covariate rows to response probabilities; it never sees the
survey variable, which makes the MAR property structural rather than assumed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .designs import SampleRealization
from .learners import expit
from .population import FinitePopulation


@dataclass(frozen=True)
class ResponseMechanism:
    """Response propensity function with outputs in (0, 1]."""

    prob_of: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ResponsePattern:
    """Response indicators over one realized sample.

    ``indicators`` aligns with ``sample_ids`` of the realization; respondent
    and nonrespondent ids are global unit indices.
    """

    indicators: np.ndarray
    respondent_ids: np.ndarray
    nonrespondent_ids: np.ndarray


def constant_mechanism(p: float) -> ResponseMechanism:
    if not 0 < p <= 1:
        raise ValueError("response probability must lie in (0, 1]")
    return ResponseMechanism(
        prob_of=lambda x: np.full(np.atleast_2d(x).shape[0], p),
        kind="constant",
        params={"p": p},
    )


# indicator-sum coefficients of the benchmark mechanism, intercept first
BENCHMARK_COEFFS = (-0.3, 1.8, -1.5, 1.2, -0.8, 0.6, -0.5, 0.4, -0.7)
BENCHMARK_FLOOR = 0.1


def appendix_mechanism(pop: FinitePopulation) -> ResponseMechanism:
    """The benchmark MAR mechanism: a floor of 0.1 plus 0.9 times the
    expit of an eight-indicator score in the four covariates. The x3
    threshold is the stored population median."""
    if pop.n_covariates != 4:
        raise ValueError("benchmark mechanism requires exactly four covariates")
    med_x3 = pop.x3_median
    if med_x3 is None:
        med_x3 = float(np.median(pop.covariates[:, 2]))
    c = BENCHMARK_COEFFS
    a = BENCHMARK_FLOOR

    def prob_of(x, c=c, a=a, med_x3=med_x3):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        x1, x2, x3, x4 = x[:, 0], x[:, 1], x[:, 2], x[:, 3]
        eta = (
            c[0]
            + c[1] * ((x1 > 0) & (x2 > 0) & (x3 > 0))
            + c[2] * ((x1 < -0.5) & (x4 > 0.7))
            + c[3] * ((x2 > 0.5) & (x3 < -0.5))
            + c[4] * ((0.3 < x4) & (x4 < 0.7) & (x1 > 0))
            + c[5] * ((x1 > 1.0) & (x2 < -1.0))
            + c[6] * ((x3 > med_x3) & (x4 < 0.5))
            + c[7] * ((np.abs(x1) < 0.5) & (x2 > 0))
            + c[8] * ((x1 > 0) & (x2 < 0) & (x3 < 0))
        )
        return a + (1.0 - a) * expit(eta)

    return ResponseMechanism(
        prob_of=prob_of,
        kind="benchmark",
        params={"floor": a, "coefficients": c, "x3_median": med_x3},
    )


def draw_responses(
    mechanism: ResponseMechanism,
    sample: SampleRealization,
    pop: FinitePopulation,
    rng: np.random.Generator,
) -> ResponsePattern:
    """Independent Bernoulli response indicators for the sampled units."""
    if sample.size == 0:
        raise ValueError("sample is empty")
    p = np.asarray(mechanism.prob_of(pop.covariates[sample.sample_ids]), dtype=float)
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("mechanism produced probabilities outside (0, 1]")
    indicators = rng.random(sample.size) < p
    return ResponsePattern(
        indicators=indicators,
        respondent_ids=sample.sample_ids[indicators],
        nonrespondent_ids=sample.sample_ids[~indicators],
    )
