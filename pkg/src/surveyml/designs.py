"""Sampling designs: inclusion probabilities, sample drawing, fold partitions,
conditional inclusion probabilities, and an exhaustive enumeration oracle.

The enumeration oracle realizes exact design expectations for small
populations and backs every unbiasedness test in the suite. Its size limits
are hard errors: the oracle is exact or absent, never approximate.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import Iterator

import numpy as np

SRSWOR_ENUM_LIMIT = 10**6
INDICATOR_ENUM_LIMIT = 2**20


class UnsupportedDesignError(ValueError):
    """Raised for design variants whose requested quantity is not defined."""


class EnumerationSizeError(ValueError):
    """Raised when an exhaustive enumeration would exceed the hard size limit."""


@dataclass(frozen=True)
class DesignSpec:
    """One sampling design. Build through the classmethod constructors.

    kind is one of ``srswor``, ``poisson``, ``stratified``, ``poisson_pps``.
    """

    kind: str
    n: int | None = None
    pi: np.ndarray | None = None
    strata: np.ndarray | None = None
    n_per_stratum: dict | None = None
    size: np.ndarray | None = None

    @classmethod
    def srswor(cls, n: int) -> "DesignSpec":
        return cls(kind="srswor", n=int(n))

    @classmethod
    def poisson(cls, pi) -> "DesignSpec":
        pi = np.asarray(pi, dtype=float)
        return cls(kind="poisson", pi=pi)

    @classmethod
    def stratified(cls, strata, n_per_stratum: dict) -> "DesignSpec":
        return cls(
            kind="stratified",
            strata=np.asarray(strata),
            n_per_stratum=dict(n_per_stratum),
        )

    @classmethod
    def poisson_pps(cls, size, n: int) -> "DesignSpec":
        size = np.asarray(size, dtype=float)
        return cls(kind="poisson_pps", size=size, n=int(n))

    def validate(self, n_units: int) -> None:
        if self.kind == "srswor":
            if not 1 <= self.n <= n_units:
                raise ValueError(f"srswor requires 1 <= n <= N, got n={self.n}, N={n_units}")
        elif self.kind == "poisson":
            if self.pi.shape != (n_units,):
                raise ValueError("poisson pi vector length must equal N")
            if np.any(self.pi <= 0) or np.any(self.pi > 1):
                raise ValueError("poisson requires 0 < pi_k <= 1 for all units")
        elif self.kind == "stratified":
            if self.strata.shape != (n_units,):
                raise ValueError("stratum label vector length must equal N")
            labels, counts = np.unique(self.strata, return_counts=True)
            for lab, n_h in zip(labels, counts):
                key = lab.item() if hasattr(lab, "item") else lab
                if key not in self.n_per_stratum:
                    raise ValueError(f"missing sample size for stratum {key!r}")
                if not 1 <= self.n_per_stratum[key] <= n_h:
                    raise ValueError(f"stratum {key!r} requires 1 <= n_h <= N_h")
        elif self.kind == "poisson_pps":
            if self.size.shape != (n_units,):
                raise ValueError("size vector length must equal N")
            if np.any(self.size <= 0):
                raise ValueError("poisson_pps requires strictly positive sizes")
            if not 1 <= self.n:
                raise ValueError("target expected size must be positive")
        else:
            raise UnsupportedDesignError(f"unknown design kind {self.kind!r}")


@dataclass(frozen=True)
class SampleRealization:
    """One realized sample: indicator vector, selected ids and design weights."""

    indicators: np.ndarray
    sample_ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(~np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("weights must be strictly positive and finite")

    @property
    def n_units(self) -> int:
        return self.indicators.shape[0]

    @property
    def size(self) -> int:
        return self.sample_ids.shape[0]


@dataclass(frozen=True)
class FoldPartition:
    """A K-way partition, over the population or over a realized sample.

    fold_of holds 0-based fold indices; fold sizes differ by at most one.
    """

    fold_of: np.ndarray
    k_folds: int
    level: str  # "population" | "sample"

    def fold_sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k_folds)


def inclusion_probs(design: DesignSpec, n_units: int) -> np.ndarray:
    """First-order inclusion probabilities pi_k, length N, each in (0, 1]."""
    design.validate(n_units)
    if design.kind == "srswor":
        return np.full(n_units, design.n / n_units)
    if design.kind == "poisson":
        return design.pi.copy()
    if design.kind == "stratified":
        pi = np.empty(n_units)
        for lab in np.unique(design.strata):
            mask = design.strata == lab
            key = lab.item() if hasattr(lab, "item") else lab
            pi[mask] = design.n_per_stratum[key] / mask.sum()
        return pi
    # poisson_pps: proportional to size, clipped at 1
    pi = np.minimum(design.n * design.size / design.size.sum(), 1.0)
    if np.any(pi <= 0):
        raise ValueError("pi_k <= 0 violates first-order positivity")
    return pi


def joint_inclusion_probs(design: DesignSpec, n_units: int, k: int, l: int) -> float:
    """Second-order inclusion probability pi_kl for a distinct pair."""
    if k == l:
        raise ValueError("joint inclusion probability requires k != l")
    pi = inclusion_probs(design, n_units)
    if design.kind == "srswor":
        n = design.n
        return n * (n - 1) / (n_units * (n_units - 1))
    if design.kind in ("poisson", "poisson_pps"):
        return float(pi[k] * pi[l])
    if design.kind == "stratified":
        if design.strata[k] == design.strata[l]:
            lab = design.strata[k]
            key = lab.item() if hasattr(lab, "item") else lab
            n_h = design.n_per_stratum[key]
            big_n_h = int((design.strata == lab).sum())
            return n_h * (n_h - 1) / (big_n_h * (big_n_h - 1))
        return float(pi[k] * pi[l])
    raise UnsupportedDesignError(
        f"joint inclusion probabilities unavailable for {design.kind!r}"
    )


def joint_inclusion_matrix(design: DesignSpec, n_units: int, ids: np.ndarray) -> np.ndarray:
    """Matrix of pi_kl over the given unit ids, with pi_k on the diagonal."""
    ids = np.asarray(ids)
    pi = inclusion_probs(design, n_units)[ids]
    if design.kind == "srswor":
        n = design.n
        mat = np.full((len(ids), len(ids)), n * (n - 1) / (n_units * (n_units - 1)))
    elif design.kind in ("poisson", "poisson_pps"):
        mat = np.outer(pi, pi)
    elif design.kind == "stratified":
        mat = np.outer(pi, pi)
        labs = design.strata[ids]
        for lab in np.unique(labs):
            key = lab.item() if hasattr(lab, "item") else lab
            n_h = design.n_per_stratum[key]
            big_n_h = int((design.strata == lab).sum())
            same = labs == lab
            if n_h < 2 and same.sum() > 1:
                raise ValueError("pi_kl = 0 within stratum violates Assumption 2")
            val = n_h * (n_h - 1) / (big_n_h * (big_n_h - 1)) if big_n_h > 1 else 1.0
            block = np.ix_(same, same)
            mat[block] = val
    else:
        raise UnsupportedDesignError(
            f"joint inclusion probabilities unavailable for {design.kind!r}"
        )
    np.fill_diagonal(mat, pi)
    return mat


def _realization(indicators: np.ndarray, pi: np.ndarray) -> SampleRealization:
    ids = np.flatnonzero(indicators)
    return SampleRealization(
        indicators=indicators.astype(bool),
        sample_ids=ids,
        weights=1.0 / pi[ids],
    )


def draw_sample(design: DesignSpec, n_units: int, rng: np.random.Generator) -> SampleRealization:
    """Draw one sample. SRSWOR and stratified draws have fixed size; Poisson
    variants select each unit through an independent Bernoulli trial."""
    pi = inclusion_probs(design, n_units)
    indicators = np.zeros(n_units, dtype=bool)
    if design.kind == "srswor":
        chosen = rng.choice(n_units, size=design.n, replace=False)
        indicators[chosen] = True
    elif design.kind in ("poisson", "poisson_pps"):
        indicators = rng.random(n_units) < pi
    elif design.kind == "stratified":
        for lab in np.unique(design.strata):
            members = np.flatnonzero(design.strata == lab)
            key = lab.item() if hasattr(lab, "item") else lab
            chosen = rng.choice(members, size=design.n_per_stratum[key], replace=False)
            indicators[chosen] = True
    else:
        raise UnsupportedDesignError(f"cannot draw from {design.kind!r}")
    return _realization(indicators, pi)


def make_folds(count: int, k_folds: int, level: str, rng: np.random.Generator) -> FoldPartition:
    """Balanced random K-way partition of ``count`` units."""
    if not 2 <= k_folds <= count:
        raise ValueError(f"need 2 <= K <= count, got K={k_folds}, count={count}")
    if level not in ("population", "sample"):
        raise ValueError("level must be 'population' or 'sample'")
    fold_of = np.empty(count, dtype=np.int64)
    fold_of[rng.permutation(count)] = np.arange(count) % k_folds
    return FoldPartition(fold_of=fold_of, k_folds=k_folds, level=level)


def conditional_inclusion_probs(
    design: DesignSpec, folds: FoldPartition, realized_fold_sizes
) -> np.ndarray:
    """Inclusion probabilities conditional on fold indicators and realized
    per-fold sample sizes. Only defined here for SRSWOR with population-level
    folds: within fold v the conditional design is SRSWOR of the realized
    size, so pi~_k = n_v / N_v."""
    if design.kind != "srswor":
        raise UnsupportedDesignError(
            "conditional inclusion probabilities implemented for SRSWOR only"
        )
    if folds.level != "population":
        raise ValueError("folds must partition the population")
    realized = np.asarray(realized_fold_sizes)
    if realized.shape != (folds.k_folds,):
        raise ValueError("one realized size per fold required")
    if realized.sum() != design.n:
        raise ValueError("realized fold sizes must sum to n")
    fold_sizes = folds.fold_sizes()
    if np.any(realized > fold_sizes):
        raise ValueError("realized size exceeds fold size")
    per_fold = realized / fold_sizes
    return per_fold[folds.fold_of]


def _check_enum_limit(design: DesignSpec, n_units: int) -> None:
    if design.kind == "srswor":
        if comb(n_units, design.n) > SRSWOR_ENUM_LIMIT:
            raise EnumerationSizeError("C(N, n) exceeds the enumeration limit")
    elif design.kind in ("poisson", "poisson_pps"):
        if 2**n_units > INDICATOR_ENUM_LIMIT:
            raise EnumerationSizeError("2^N exceeds the enumeration limit")
    elif design.kind == "stratified":
        total = 1
        for lab in np.unique(design.strata):
            key = lab.item() if hasattr(lab, "item") else lab
            total *= comb(int((design.strata == lab).sum()), design.n_per_stratum[key])
            if total > SRSWOR_ENUM_LIMIT:
                raise EnumerationSizeError("stratified outcome count exceeds the limit")
    else:
        raise UnsupportedDesignError(f"cannot enumerate {design.kind!r}")


def enumerate_design(
    design: DesignSpec, n_units: int
) -> Iterator[tuple[SampleRealization, float]]:
    """Exhaustively yield every possible sample with its probability.

    Probabilities sum to one; the iteration is duplicate-free. Poisson
    variants enumerate all 2^N indicator patterns.
    """
    design.validate(n_units)
    _check_enum_limit(design, n_units)
    pi = inclusion_probs(design, n_units)

    if design.kind == "srswor":
        prob = 1.0 / comb(n_units, design.n)
        for subset in itertools.combinations(range(n_units), design.n):
            indicators = np.zeros(n_units, dtype=bool)
            indicators[list(subset)] = True
            yield _realization(indicators, pi), prob
    elif design.kind in ("poisson", "poisson_pps"):
        for bits in itertools.product((False, True), repeat=n_units):
            indicators = np.array(bits)
            prob = float(np.prod(np.where(indicators, pi, 1.0 - pi)))
            if prob > 0.0:
                yield _realization(indicators, pi), prob
    else:  # stratified
        labels = np.unique(design.strata)
        per_stratum = []
        for lab in labels:
            members = np.flatnonzero(design.strata == lab)
            key = lab.item() if hasattr(lab, "item") else lab
            n_h = design.n_per_stratum[key]
            per_stratum.append(
                (list(itertools.combinations(members, n_h)), comb(len(members), n_h))
            )
        for choice in itertools.product(*(subs for subs, _ in per_stratum)):
            indicators = np.zeros(n_units, dtype=bool)
            for subset in choice:
                indicators[list(subset)] = True
            prob = 1.0
            for _, count in per_stratum:
                prob /= count
            yield _realization(indicators, pi), prob
