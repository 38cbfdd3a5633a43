import numpy as np
import pytest

from surveyml.designs import DesignSpec, draw_sample
from surveyml.nonresponse import (
    BENCHMARK_FLOOR,
    appendix_mechanism,
    constant_mechanism,
    draw_responses,
)
from surveyml.population import DgpConfig, FinitePopulation, generate_population


def test_constant_mechanism():
    mech = constant_mechanism(0.6)
    np.testing.assert_allclose(mech.prob_of(np.zeros((5, 2))), 0.6)
    with pytest.raises(ValueError):
        constant_mechanism(0.0)
    with pytest.raises(ValueError):
        constant_mechanism(1.2)


def test_benchmark_probabilities_respect_floor_and_ceiling():
    pop = generate_population(DgpConfig(n_units=5000, seed=0))
    p = appendix_mechanism(pop).prob_of(pop.covariates)
    assert p.min() > BENCHMARK_FLOOR
    assert p.max() < 1.0


def test_benchmark_average_response_rate_near_half():
    pop = generate_population(DgpConfig(n_units=50_000, seed=1))
    p = appendix_mechanism(pop).prob_of(pop.covariates)
    assert 0.44 < p.mean() < 0.52


def test_benchmark_uses_stored_median_threshold():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((100, 4))
    y = np.zeros(100)
    a = appendix_mechanism(FinitePopulation(x, y, x3_median=-10.0))
    b = appendix_mechanism(FinitePopulation(x, y, x3_median=10.0))
    # the x3 threshold indicator flips between the two, so probabilities move
    assert not np.allclose(a.prob_of(x), b.prob_of(x))


def test_benchmark_requires_four_covariates():
    pop = FinitePopulation(np.zeros((5, 2)), np.zeros(5))
    with pytest.raises(ValueError):
        appendix_mechanism(pop)


def test_benchmark_hand_computed_unit():
    # a row triggering only the first indicator: x1,x2,x3 > 0, x4 = 0
    pop = generate_population(DgpConfig(n_units=9, seed=0))
    mech = appendix_mechanism(pop)
    row = np.array([[0.1, 0.1, max(0.1, pop.x3_median + 1.0), 0.0]])
    # indicators firing: all-positive (+1.8), x3 above median with x4 < 0.5
    # (-0.5), |x1| < 0.5 with x2 > 0 (+0.4)
    eta = -0.3 + 1.8 - 0.5 + 0.4
    expected = 0.1 + 0.9 / (1.0 + np.exp(-eta))
    assert mech.prob_of(row)[0] == pytest.approx(expected, abs=1e-12)


def test_draw_responses_alignment_and_rates():
    pop = generate_population(DgpConfig(n_units=2000, seed=3))
    mech = constant_mechanism(0.7)
    rng = np.random.default_rng(4)
    sample = draw_sample(DesignSpec.srswor(1000), 2000, rng)
    pattern = draw_responses(mech, sample, pop, rng)
    assert pattern.indicators.shape == (1000,)
    assert set(pattern.respondent_ids) | set(pattern.nonrespondent_ids) == set(
        sample.sample_ids
    )
    assert pattern.indicators.mean() == pytest.approx(0.7, abs=0.05)
