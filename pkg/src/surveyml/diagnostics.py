"""Estimating-equation scores and numerical orthogonality diagnostics.

Each estimator in the toolkit solves a finite-population estimating equation.
This module makes those score functions executable and checks Neyman
orthogonality numerically: the Gateaux derivative of the expected score with
respect to the nuisance function, taken by central differences under exact
enumeration of the design (and, where relevant, the response patterns).

Expectations involving the response mechanism and an outcome model are exact
only when the population carries no model noise (sigma2 = 0), so the model
expectation is trivial; the enumeration oracles enforce this.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .designs import (
    INDICATOR_ENUM_LIMIT,
    DesignSpec,
    EnumerationSizeError,
    enumerate_design,
    inclusion_probs,
)
from .nonresponse import ResponseMechanism
from .population import FinitePopulation

DEFAULT_STEPS = (1e-2, 1e-3, 1e-4)


@dataclass(frozen=True)
class ScoreFunction:
    """A per-unit score psi(z_k, theta, nuisances), vectorized over units.

    ``evaluate`` receives aligned population-length arrays: sampling
    indicators, first-order inclusion probabilities, response indicators
    (ignored when ``uses_response`` is false), outcomes, and the covariate
    matrix; plus theta and a nuisance dict. It returns one score per unit.
    """

    kind: str
    uses_response: bool
    nuisance_keys: tuple[str, ...]
    evaluate: Callable[..., np.ndarray]


def _require(nuisances: dict, key: str) -> Callable:
    if key not in nuisances:
        raise KeyError(f"score requires nuisance {key!r}")
    return nuisances[key]


def _psi_ma(i, pi, r, y, x, theta, nuisances):
    f = _require(nuisances, "f")(x)
    return (i / pi) * (y - f) + f - theta


def _psi_imputed(i, pi, r, y, x, theta, nuisances):
    f = _require(nuisances, "f")(x)
    return (i / pi) * (r * y + (1.0 - r) * f) - theta


def _psi_aipw(i, pi, r, y, x, theta, nuisances):
    f = _require(nuisances, "f")(x)
    p = np.asarray(_require(nuisances, "p")(x), dtype=float)
    _check_probs(p)
    return (i / pi) * (f + r * (y - f) / p) - theta


def _psi_ipw(i, pi, r, y, x, theta, nuisances):
    p = np.asarray(_require(nuisances, "p")(x), dtype=float)
    _check_probs(p)
    return (i * r * y) / (pi * p) - theta


def _check_probs(p: np.ndarray) -> None:
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("propensity nuisance left the interval (0, 1]")


MA_SCORE = ScoreFunction("ma", False, ("f",), _psi_ma)
IMPUTED_SCORE = ScoreFunction("imputed", True, ("f",), _psi_imputed)
AIPW_SCORE = ScoreFunction("aipw", True, ("f", "p"), _psi_aipw)
IPW_SCORE = ScoreFunction("ipw", True, ("p",), _psi_ipw)

SCORES = {s.kind: s for s in (MA_SCORE, IMPUTED_SCORE, AIPW_SCORE, IPW_SCORE)}


def score_expectation(
    score: ScoreFunction,
    pop: FinitePopulation,
    design: DesignSpec,
    mechanism: ResponseMechanism | None,
    theta: float,
    nuisances: dict,
) -> float:
    """Exact expectation of the population-mean score N^-1 sum_U psi.

    The design expectation enumerates every realizable sample; when the score
    involves response indicators, the response patterns on each sample are
    enumerated as well (independent Bernoulli given the covariates).
    """
    n_units = pop.n_units
    x = pop.covariates
    y = pop.outcomes
    pi = inclusion_probs(design, n_units)
    if score.uses_response:
        if mechanism is None:
            raise ValueError(f"{score.kind} score requires a response mechanism")
        if pop.sigma2 != 0 and "f" in score.nuisance_keys:
            raise ValueError(
                "exact expectation of an outcome-model score needs a "
                "noise-free population (sigma2 = 0)"
            )
        p_units = np.asarray(mechanism.prob_of(x), dtype=float)
    zeros = np.zeros(n_units)

    total = 0.0
    for sample, prob in enumerate_design(design, n_units):
        i = sample.indicators.astype(float)
        if not score.uses_response:
            total += prob * float(
                np.mean(score.evaluate(i, pi, zeros, y, x, theta, nuisances))
            )
            continue
        ids = sample.sample_ids
        if 2 ** len(ids) > INDICATOR_ENUM_LIMIT:
            raise EnumerationSizeError(
                f"2^{len(ids)} response patterns exceed the enumeration limit"
            )
        p_s = p_units[ids]
        for pattern in itertools.product((0.0, 1.0), repeat=len(ids)):
            r_s = np.asarray(pattern)
            q = float(np.prod(np.where(r_s > 0, p_s, 1.0 - p_s)))
            if q == 0.0:
                continue
            r = zeros.copy()
            r[ids] = r_s
            total += (
                prob
                * q
                * float(np.mean(score.evaluate(i, pi, r, y, x, theta, nuisances)))
            )
    return total


def _perturbed(nuisances: dict, direction: dict, t: float) -> dict:
    out = dict(nuisances)
    for key, h in direction.items():
        base = nuisances[key]
        out[key] = lambda x, base=base, h=h, t=t: np.asarray(
            base(x), dtype=float
        ) + t * np.asarray(h(x), dtype=float)
    return out


def gateaux_derivative(
    score: ScoreFunction,
    pop: FinitePopulation,
    design: DesignSpec,
    mechanism: ResponseMechanism | None,
    theta: float,
    nuisances: dict,
    direction: dict,
    steps: tuple[float, ...] = DEFAULT_STEPS,
) -> float:
    """Central-difference Gateaux derivative of the expected score.

    ``direction`` maps nuisance keys to direction functions; supplying
    several keys perturbs them simultaneously (the joint derivative). The
    difference quotient is evaluated at each step size and Richardson
    extrapolation across the two smallest steps gives the returned value.
    """
    unknown = set(direction) - set(score.nuisance_keys)
    if unknown:
        raise KeyError(f"direction keys {sorted(unknown)} not used by the score")
    if len(steps) < 2 or any(
        steps[j + 1] >= steps[j] for j in range(len(steps) - 1)
    ):
        raise ValueError("steps must be a decreasing sequence of at least two t")
    quotients = []
    for t in steps:
        plus = score_expectation(
            score, pop, design, mechanism, theta, _perturbed(nuisances, direction, t)
        )
        minus = score_expectation(
            score, pop, design, mechanism, theta, _perturbed(nuisances, direction, -t)
        )
        quotients.append((plus - minus) / (2.0 * t))
    # central differences carry O(t^2) error, so two steps give an
    # extrapolation that cancels the leading term
    ratio = steps[-2] / steps[-1]
    return (ratio**2 * quotients[-1] - quotients[-2]) / (ratio**2 - 1.0)


def imputed_derivative_closed_form(
    pop: FinitePopulation, mechanism: ResponseMechanism, h: Callable
) -> float:
    """N^-1 sum_U (1 - p(x_k)) h(x_k)."""
    p = np.asarray(mechanism.prob_of(pop.covariates), dtype=float)
    return float(np.mean((1.0 - p) * np.asarray(h(pop.covariates), dtype=float)))


def ipw_derivative_closed_form(
    pop: FinitePopulation, mechanism: ResponseMechanism, h: Callable
) -> float:
    """-N^-1 sum_U y_k h(x_k) / p(x_k)."""
    p = np.asarray(mechanism.prob_of(pop.covariates), dtype=float)
    return -float(
        np.mean(pop.outcomes * np.asarray(h(pop.covariates), dtype=float) / p)
    )


def default_directions(n_covariates: int, seed: int = 0) -> dict[str, Callable]:
    """A small library of perturbation directions: a constant shift, each
    single coordinate, and a fixed random-sign step."""
    directions: dict[str, Callable] = {
        "constant": lambda x: np.ones(np.atleast_2d(x).shape[0])
    }
    for j in range(n_covariates):
        directions[f"coordinate_{j + 1}"] = (
            lambda x, j=j: np.atleast_2d(np.asarray(x, dtype=float))[:, j]
        )
    signs_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    w = signs_rng.choice([-1.0, 1.0], size=n_covariates)

    def random_sign_step(x, w=w):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.sign(x @ w)

    directions["random_sign_step"] = random_sign_step
    return directions


def orthogonality_table(
    pop: FinitePopulation,
    design: DesignSpec,
    mechanism: ResponseMechanism,
    nuisances: dict,
    directions: dict[str, Callable] | None = None,
    theta: float | None = None,
    propensity_scale: float = 0.05,
) -> list[dict]:
    """Gateaux derivatives of every score in every direction.

    Outcome-model directions use each library direction as-is; propensity
    directions are damped by ``propensity_scale`` so perturbed propensities
    stay inside (0, 1] at the default step sizes. Closed-form reference
    values are attached where they exist.
    """
    if directions is None:
        directions = default_directions(pop.n_covariates)
    if theta is None:
        theta = float(np.mean(pop.outcomes))
    rows = []
    for name, h in directions.items():
        h_p = lambda x, h=h: propensity_scale * np.asarray(h(x), dtype=float)
        specs = [
            ("ma", MA_SCORE, {"f": h}, 0.0),
            (
                "imputed",
                IMPUTED_SCORE,
                {"f": h},
                imputed_derivative_closed_form(pop, mechanism, h),
            ),
            ("aipw", AIPW_SCORE, {"f": h, "p": h_p}, 0.0),
            (
                "ipw",
                IPW_SCORE,
                {"p": h_p},
                propensity_scale * ipw_derivative_closed_form(pop, mechanism, h),
            ),
        ]
        for kind, score, direction, reference in specs:
            value = gateaux_derivative(
                score, pop, design, mechanism, theta, nuisances, direction
            )
            rows.append(
                {
                    "score": kind,
                    "direction": name,
                    "derivative": value,
                    "reference": reference,
                }
            )
    return rows
