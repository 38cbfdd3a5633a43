"""Fixed finite populations and the superpopulation model used to generate them.

A population is generated once per scenario and then frozen: all design
expectations and Monte Carlo metrics are taken with respect to sampling and
response randomness, never with respect to the y-values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

# Linear model coefficients of the simulation study's data-generating
# process: intercept first, then one coefficient per covariate.
DEFAULT_COEFFICIENTS = (10.0, 2.0, -1.5, 1.0, 3.0)


@dataclass(frozen=True)
class FinitePopulation:
    """Immutable finite population: covariate matrix, outcomes and error variance.

    ``x3_median`` stores the population median of the third covariate at
    generation time; the benchmark nonresponse mechanism needs a fixed
    population-level threshold, not one recomputed per sample.
    """

    covariates: np.ndarray
    outcomes: np.ndarray
    sigma2: float = 0.0
    x3_median: float | None = None

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        y = np.asarray(self.outcomes, dtype=float)
        if x.ndim != 2:
            raise ValueError("covariates must be a 2-D matrix")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValueError("outcomes length must equal covariates row count")
        if x.shape[0] < 1:
            raise ValueError("population must contain at least one unit")
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("population entries must be finite")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "outcomes", y)

    @property
    def n_units(self) -> int:
        return self.outcomes.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]


@dataclass(frozen=True)
class DgpConfig:
    """Configuration of the superpopulation generator."""

    n_units: int
    coefficients: tuple[float, ...] = DEFAULT_COEFFICIENTS
    noise_sd: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.n_units < 1:
            raise ValueError("n_units must be positive")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if len(self.coefficients) < 2:
            raise ValueError("need an intercept plus at least one coefficient")


def generate_population(config: DgpConfig) -> FinitePopulation:
    """Draw one finite population from the benchmark superpopulation model.

    The first three covariates are i.i.d. standard normal, the fourth is
    i.i.d. uniform(0, 1); y follows the linear model with Gaussian noise.
    Deterministic per seed.
    """
    n = config.n_units
    p = len(config.coefficients) - 1
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(config.seed)))
    x = np.empty((n, p))
    n_normal = min(p, 3)
    x[:, :n_normal] = rng.standard_normal((n, n_normal))
    if p > 3:
        x[:, 3:] = rng.random((n, p - 3))
    beta = np.asarray(config.coefficients, dtype=float)
    y = beta[0] + x @ beta[1:]
    if config.noise_sd > 0:
        y = y + config.noise_sd * rng.standard_normal(n)
    x3_median = float(np.median(x[:, 2])) if p >= 3 else None
    return FinitePopulation(
        covariates=x,
        outcomes=y,
        sigma2=config.noise_sd**2,
        x3_median=x3_median,
    )


def population_mean(pop: FinitePopulation) -> float:
    """Finite-population mean of the survey variable."""
    return float(np.mean(pop.outcomes))


def write_population_csv(pop: FinitePopulation, path) -> None:
    """Export as ``id,x1,...,xp,y`` with decimal-point reals."""
    p = pop.n_covariates
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + [f"x{j + 1}" for j in range(p)] + ["y"])
        for k in range(pop.n_units):
            writer.writerow(
                [k + 1]
                + [repr(float(v)) for v in pop.covariates[k]]
                + [repr(float(pop.outcomes[k]))]
            )


def read_population_csv(path, sigma2: float = 0.0) -> FinitePopulation:
    """Import a population written by :func:`write_population_csv`."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[0] != "id" or header[-1] != "y":
            raise ValueError("expected header id,x1,...,xp,y")
        rows = [[float(v) for v in row[1:]] for row in reader]
    data = np.asarray(rows)
    x = data[:, :-1]
    x3_median = float(np.median(x[:, 2])) if x.shape[1] >= 3 else None
    return FinitePopulation(
        covariates=x, outcomes=data[:, -1], sigma2=sigma2, x3_median=x3_median
    )
