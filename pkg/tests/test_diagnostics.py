import numpy as np
import pytest

from surveyml.designs import DesignSpec, EnumerationSizeError
from surveyml.diagnostics import (
    AIPW_SCORE,
    IMPUTED_SCORE,
    IPW_SCORE,
    MA_SCORE,
    SCORES,
    default_directions,
    gateaux_derivative,
    imputed_derivative_closed_form,
    ipw_derivative_closed_form,
    orthogonality_table,
    score_expectation,
)
from surveyml.nonresponse import appendix_mechanism, constant_mechanism
from surveyml.population import DgpConfig, FinitePopulation, generate_population


@pytest.fixture(scope="module")
def setup():
    pop = generate_population(DgpConfig(n_units=6, noise_sd=0.0, seed=0))
    design = DesignSpec.srswor(3)
    mechanism = appendix_mechanism(pop)
    mu = float(np.mean(pop.outcomes))
    # oracle nuisances: the true regression function and true propensity
    from surveyml.population import DEFAULT_COEFFICIENTS

    beta = np.asarray(DEFAULT_COEFFICIENTS)
    nuisances = {
        "f": lambda x: beta[0] + np.atleast_2d(np.asarray(x, float)) @ beta[1:],
        "p": lambda x: mechanism.prob_of(x),
    }
    return pop, design, mechanism, mu, nuisances


def test_all_scores_unbiased_at_truth(setup):
    pop, design, mechanism, mu, nuisances = setup
    for score in SCORES.values():
        value = score_expectation(score, pop, design, mechanism, mu, nuisances)
        assert abs(value) < 1e-12, score.kind


def test_expectation_is_linear_in_theta_with_slope_minus_one(setup):
    pop, design, mechanism, mu, nuisances = setup
    at_mu = score_expectation(MA_SCORE, pop, design, mechanism, mu, nuisances)
    shifted = score_expectation(MA_SCORE, pop, design, mechanism, mu + 2.0, nuisances)
    assert shifted - at_mu == pytest.approx(-2.0, abs=1e-12)


def test_ma_derivative_is_zero(setup):
    pop, design, mechanism, mu, nuisances = setup
    h = lambda x: np.atleast_2d(np.asarray(x, float))[:, 0] ** 2
    d = gateaux_derivative(
        MA_SCORE, pop, design, None, mu, nuisances, {"f": h}
    )
    assert abs(d) < 1e-10


def test_imputed_derivative_matches_closed_form(setup):
    pop, design, mechanism, mu, nuisances = setup
    h = lambda x: 1.0 + np.atleast_2d(np.asarray(x, float))[:, 1]
    d = gateaux_derivative(
        IMPUTED_SCORE, pop, design, mechanism, mu, nuisances, {"f": h}
    )
    assert d == pytest.approx(
        imputed_derivative_closed_form(pop, mechanism, h), abs=1e-8
    )


def test_ipw_derivative_matches_closed_form(setup):
    pop, design, mechanism, mu, nuisances = setup
    h = lambda x: 0.05 * np.ones(np.atleast_2d(x).shape[0])
    d = gateaux_derivative(IPW_SCORE, pop, design, mechanism, mu, nuisances, {"p": h})
    ref = 0.05 * ipw_derivative_closed_form(
        pop, mechanism, lambda x: np.ones(np.atleast_2d(x).shape[0])
    )
    assert d == pytest.approx(ref, abs=1e-6)


def test_aipw_joint_derivative_is_zero(setup):
    pop, design, mechanism, mu, nuisances = setup
    h_f = lambda x: np.atleast_2d(np.asarray(x, float))[:, 2]
    h_p = lambda x: 0.02 * np.sign(np.atleast_2d(np.asarray(x, float))[:, 0])
    d = gateaux_derivative(
        AIPW_SCORE, pop, design, mechanism, mu, nuisances, {"f": h_f, "p": h_p}
    )
    assert abs(d) < 1e-8


def test_noise_requires_sigma2_zero():
    pop = generate_population(DgpConfig(n_units=6, seed=1))  # sigma2 > 0
    assert pop.sigma2 > 0
    mech = constant_mechanism(0.5)
    with pytest.raises(ValueError, match="noise-free"):
        score_expectation(
            IMPUTED_SCORE,
            pop,
            DesignSpec.srswor(3),
            mech,
            0.0,
            {"f": lambda x: np.zeros(np.atleast_2d(x).shape[0])},
        )


def test_response_scores_need_mechanism(setup):
    pop, design, _, mu, nuisances = setup
    with pytest.raises(ValueError):
        score_expectation(IPW_SCORE, pop, design, None, mu, nuisances)


def test_unknown_direction_key_rejected(setup):
    pop, design, mechanism, mu, nuisances = setup
    with pytest.raises(KeyError):
        gateaux_derivative(
            MA_SCORE, pop, design, None, mu, nuisances, {"p": lambda x: 0 * x[:, 0]}
        )


def test_bad_steps_rejected(setup):
    pop, design, mechanism, mu, nuisances = setup
    h = lambda x: np.ones(np.atleast_2d(x).shape[0])
    with pytest.raises(ValueError):
        gateaux_derivative(
            MA_SCORE, pop, design, None, mu, nuisances, {"f": h}, steps=(1e-3,)
        )
    with pytest.raises(ValueError):
        gateaux_derivative(
            MA_SCORE, pop, design, None, mu, nuisances, {"f": h}, steps=(1e-4, 1e-3)
        )


def test_missing_nuisance_key_raises(setup):
    pop, design, mechanism, mu, _ = setup
    with pytest.raises(KeyError):
        score_expectation(MA_SCORE, pop, design, None, mu, {})


def test_propensity_outside_unit_interval_rejected(setup):
    pop, design, mechanism, mu, nuisances = setup
    bad = dict(nuisances)
    bad["p"] = lambda x: np.full(np.atleast_2d(x).shape[0], 1.5)
    with pytest.raises(ValueError, match="interval"):
        score_expectation(IPW_SCORE, pop, design, mechanism, mu, bad)


def test_response_enumeration_limit():
    pop = generate_population(DgpConfig(n_units=25, noise_sd=0.0, seed=2))
    design = DesignSpec.poisson(np.full(25, 0.9))
    with pytest.raises(EnumerationSizeError):
        score_expectation(
            IPW_SCORE,
            pop,
            design,
            constant_mechanism(0.5),
            0.0,
            {"p": lambda x: np.full(np.atleast_2d(x).shape[0], 0.5)},
        )


def test_default_directions_shapes():
    d = default_directions(4)
    assert set(d) == {
        "constant",
        "coordinate_1",
        "coordinate_2",
        "coordinate_3",
        "coordinate_4",
        "random_sign_step",
    }
    x = np.random.default_rng(0).standard_normal((7, 4))
    for h in d.values():
        assert np.asarray(h(x)).shape == (7,)


def test_orthogonality_table_structure_and_values(setup):
    pop, design, mechanism, mu, nuisances = setup
    directions = {"constant": lambda x: np.ones(np.atleast_2d(x).shape[0])}
    rows = orthogonality_table(pop, design, mechanism, nuisances, directions)
    assert len(rows) == 4
    by_score = {row["score"]: row for row in rows}
    assert abs(by_score["ma"]["derivative"]) < 1e-8
    assert abs(by_score["aipw"]["derivative"]) < 1e-6
    for row in rows:
        assert row["derivative"] == pytest.approx(row["reference"], abs=1e-6)
