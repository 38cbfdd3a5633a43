import numpy as np
import pytest

from surveyml.population import (
    DEFAULT_COEFFICIENTS,
    DgpConfig,
    FinitePopulation,
    generate_population,
    population_mean,
    read_population_csv,
    write_population_csv,
)


def test_generation_is_deterministic_per_seed():
    a = generate_population(DgpConfig(n_units=100, seed=42))
    b = generate_population(DgpConfig(n_units=100, seed=42))
    c = generate_population(DgpConfig(n_units=100, seed=43))
    np.testing.assert_array_equal(a.covariates, b.covariates)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    assert not np.array_equal(a.outcomes, c.outcomes)


def test_covariate_distributions():
    pop = generate_population(DgpConfig(n_units=200_000, seed=0))
    x = pop.covariates
    assert x.shape == (200_000, 4)
    # three standard normal columns, one uniform(0,1) column
    assert abs(x[:, 0].mean()) < 0.02 and abs(x[:, 0].std() - 1) < 0.02
    assert x[:, 3].min() >= 0 and x[:, 3].max() <= 1
    assert abs(x[:, 3].mean() - 0.5) < 0.01


def test_linear_model_holds_without_noise():
    pop = generate_population(DgpConfig(n_units=50, noise_sd=0.0, seed=7))
    beta = np.asarray(DEFAULT_COEFFICIENTS)
    np.testing.assert_allclose(
        pop.outcomes, beta[0] + pop.covariates @ beta[1:], rtol=0, atol=1e-12
    )
    assert pop.sigma2 == 0.0


def test_x3_median_is_stored():
    pop = generate_population(DgpConfig(n_units=101, seed=3))
    assert pop.x3_median == pytest.approx(float(np.median(pop.covariates[:, 2])))


def test_population_is_immutable():
    pop = generate_population(DgpConfig(n_units=10, seed=0))
    with pytest.raises(ValueError):
        pop.outcomes[0] = 99.0


def test_validation_errors():
    with pytest.raises(ValueError):
        FinitePopulation(covariates=np.ones((3, 2)), outcomes=np.ones(2))
    with pytest.raises(ValueError):
        FinitePopulation(
            covariates=np.ones((2, 1)), outcomes=np.array([1.0, np.nan])
        )
    with pytest.raises(ValueError):
        DgpConfig(n_units=0)
    with pytest.raises(ValueError):
        DgpConfig(n_units=5, noise_sd=-1.0)


def test_csv_round_trip_is_exact(tmp_path):
    pop = generate_population(DgpConfig(n_units=25, seed=9))
    path = tmp_path / "pop.csv"
    write_population_csv(pop, path)
    back = read_population_csv(path, sigma2=pop.sigma2)
    np.testing.assert_array_equal(back.covariates, pop.covariates)
    np.testing.assert_array_equal(back.outcomes, pop.outcomes)
    assert back.x3_median == pop.x3_median


def test_population_mean():
    pop = FinitePopulation(
        covariates=np.zeros((4, 1)), outcomes=np.array([1.0, 2.0, 3.0, 6.0])
    )
    assert population_mean(pop) == 3.0
