import numpy as np
import pytest
from scipy import stats
from hypothesis import given, settings, strategies as st

from ordcpm.core import (
    ALPHA_SCHEDULES,
    CpmParams,
    PriorSpec,
    UnconstrainedParams,
    alpha_schedule,
    cell_prob,
    cell_probs,
    dirichlet_log_density,
    encode_outcomes,
    grad_log_posterior,
    induced_prior_log_density,
    log_likelihood,
    log_posterior,
    make_data,
    pointwise_log_likelihood,
    to_constrained,
    to_unconstrained,
)
from ordcpm.links import LINKS


# -- encoding ------------------------------------------------------------------


def test_encode_basic_ranking():
    enc = encode_outcomes([3.2, 1.1, 3.2, 0.5])
    assert np.array_equal(enc.unique_values, [0.5, 1.1, 3.2])
    assert enc.n_categories == 3
    assert np.array_equal(enc.ranks, [3, 2, 3, 1])
    assert not enc.censored


def test_encode_detection_limit():
    enc = encode_outcomes([1.0, 1.0, 2.5, 4.0], detection_limit=1.0)
    assert enc.n_categories == 3
    assert np.array_equal(enc.ranks, [1, 1, 2, 3])
    assert enc.censored
    # values below the limit are floored onto it
    enc2 = encode_outcomes([0.2, 0.7, 2.5, 4.0], detection_limit=1.0)
    assert np.array_equal(enc2.unique_values, [1.0, 2.5, 4.0])
    assert np.array_equal(enc2.ranks, [1, 1, 2, 3])


def test_encode_distinct_gives_J_equal_n():
    enc = encode_outcomes([0.3, 1.7, -2.0, 9.9])
    assert enc.n_categories == 4


def test_encode_errors():
    with pytest.raises(ValueError):
        encode_outcomes([])
    with pytest.raises(ValueError):
        encode_outcomes([1.0, np.nan])
    with pytest.raises(ValueError):
        encode_outcomes([1.0, np.inf])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60))
def test_encode_ranks_point_back_to_values(ys):
    enc = encode_outcomes(ys)
    assert np.array_equal(enc.unique_values[enc.ranks - 1], np.asarray(ys, dtype=float))


def test_make_data_centers_covariates():
    rng = np.random.default_rng(0)
    X = rng.normal(2.0, 1.0, size=(50, 3))
    data = make_data(rng.normal(size=50), X, ["a", "b", "c"])
    assert np.all(np.abs(data.X.mean(axis=0)) < 1e-12)
    assert np.allclose(data.covariate_means, X.mean(axis=0))
    # raw-scale query rows translate through the stored means
    assert np.allclose(data.center(X[0]), X[0] - X.mean(axis=0))


# -- cell probabilities and likelihood -------------------------------------------


def test_cell_prob_examples():
    p2 = CpmParams(np.array([0.0]), np.zeros(0))
    assert cell_prob(p2, "probit", np.zeros(0), 1) == pytest.approx(0.5)
    p3 = CpmParams(np.array([-1.0, 1.0]), np.zeros(0))
    assert cell_prob(p3, "logit", np.zeros(0), 2) == pytest.approx(0.4621172, abs=1e-7)
    pb = CpmParams(np.array([0.0]), np.array([1.0]))
    assert cell_prob(pb, "probit", np.array([1.0]), 1) == pytest.approx(0.1586553, abs=1e-7)
    with pytest.raises(ValueError):
        cell_prob(p2, "probit", np.zeros(0), 3)


def test_cell_probs_sum_to_one():
    rng = np.random.default_rng(1)
    for _ in range(25):
        J = rng.integers(2, 9)
        gamma = np.sort(rng.normal(size=J - 1))
        gamma += np.arange(J - 1) * 1e-6  # break accidental ties
        beta = rng.normal(size=2)
        params = CpmParams(gamma, beta)
        for kind in LINKS:
            probs = cell_probs(params, kind, rng.normal(size=2))
            assert probs.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.all(probs >= 0.0)


def test_log_likelihood_single_obs_and_additivity():
    params = CpmParams(np.array([0.0]), np.zeros(0))
    data = make_data(np.array([0.0, 1.0]), None)
    ll = log_likelihood(params, data, "probit")
    assert ll == pytest.approx(2 * np.log(0.5))
    pw = pointwise_log_likelihood(params, data, "probit")
    assert pw[0] == pytest.approx(np.log(0.5))
    assert ll == pytest.approx(pw.sum())


def test_log_likelihood_brute_force_oracle():
    # n=3, J=3 instance checked against a direct product of cell probabilities
    rng = np.random.default_rng(7)
    y = np.array([1.0, 2.0, 3.0])
    X = rng.normal(size=(3, 2))
    data = make_data(y, X, ["a", "b"])
    params = CpmParams(np.array([-0.4, 0.9]), np.array([0.3, -0.7]))
    for kind in LINKS:
        expected = sum(
            np.log(cell_prob(params, kind, data.X[i], int(data.encoding.ranks[i])))
            for i in range(3)
        )
        assert log_likelihood(params, data, kind) == pytest.approx(expected, rel=1e-12)


def test_log_likelihood_dimension_mismatch():
    data = make_data(np.array([1.0, 2.0]), None)
    with pytest.raises(ValueError):
        log_likelihood(CpmParams(np.array([0.0, 1.0]), np.zeros(0)), data, "logit")


# -- dirichlet and induced prior --------------------------------------------------


def test_dirichlet_uniform_is_constant():
    assert dirichlet_log_density(np.array([0.2, 0.3, 0.5]), 1.0) == pytest.approx(np.log(2.0))
    assert dirichlet_log_density(np.array([0.5, 0.5]), 1.0) == pytest.approx(0.0)


def test_dirichlet_against_scipy_oracle():
    # frozen from scipy.stats.dirichlet.logpdf((1/3,1/3,1/3), (0.5,0.5,0.5))
    val = dirichlet_log_density(np.full(3, 1.0 / 3.0), 0.5)
    assert val == pytest.approx(-0.18995863340718055, abs=1e-12)
    rng = np.random.default_rng(3)
    for _ in range(20):
        J = rng.integers(2, 7)
        pi = rng.dirichlet(np.ones(J))
        a = float(rng.uniform(0.05, 3.0))
        assert dirichlet_log_density(pi, a) == pytest.approx(
            stats.dirichlet.logpdf(pi, np.full(J, a)), rel=1e-10
        )


def test_dirichlet_domain_errors():
    with pytest.raises(ValueError):
        dirichlet_log_density(np.array([0.7, 0.4]), 1.0)
    with pytest.raises(ValueError):
        dirichlet_log_density(np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        dirichlet_log_density(np.array([0.5, 0.5]), -1.0)


def test_induced_prior_examples():
    assert induced_prior_log_density(np.array([0.0]), "probit", 1.0) == pytest.approx(
        -0.9189385332046727, abs=1e-12
    )
    assert induced_prior_log_density(np.array([-1.0, 1.0]), "logit", 1.0) == pytest.approx(
        -2.559899569512946, abs=1e-12
    )
    with pytest.raises(ValueError):
        induced_prior_log_density(np.array([1.0, -1.0]), "logit", 1.0)


def test_induced_prior_jacobian_against_numeric_oracle():
    # analytic sum of log link densities vs finite-difference log|det| of the
    # map gamma -> first J-1 category probabilities
    rng = np.random.default_rng(11)
    for kind, link in LINKS.items():
        for J in range(2, 7):
            for _ in range(5):
                gamma = np.sort(rng.uniform(-2.0, 2.0, size=J - 1))
                gamma += np.arange(J - 1) * 1e-4
                h = 1e-6

                def pi_head(g):
                    G = np.concatenate([[0.0], link.cdf(np.atleast_1d(g)), [1.0]])
                    return np.diff(G)[: J - 1]

                jac = np.empty((J - 1, J - 1))
                for k in range(J - 1):
                    gp, gm = gamma.copy(), gamma.copy()
                    gp[k] += h
                    gm[k] -= h
                    jac[:, k] = (pi_head(gp) - pi_head(gm)) / (2 * h)
                _, logdet = np.linalg.slogdet(jac)
                analytic = float(np.sum(link.log_pdf(gamma)))
                assert analytic == pytest.approx(logdet, abs=1e-6)


def test_induced_prior_finite_inside_and_boundary_decay():
    # finite at interior points; the sampling-scale density (including the
    # log-gap volume term) decays as a gap collapses
    for kind in LINKS:
        for alpha in (0.02, 0.5, 1.0):
            v = induced_prior_log_density(np.array([-1.0, 0.3, 1.4]), kind, alpha)
            assert np.isfinite(v)

    def sampling_scale(delta, alpha):
        gamma = np.array([delta[0], delta[0] + np.exp(delta[1])])
        return induced_prior_log_density(gamma, "probit", alpha) + delta[1]

    for alpha in (0.05, 0.5):
        vals = [sampling_scale(np.array([0.0, d2]), alpha) for d2 in (-2, -8, -16, -30)]
        assert np.all(np.diff(vals) < 0.0)


# -- alpha schedules ---------------------------------------------------------------


def test_alpha_schedule_values():
    assert alpha_schedule("uniform", 100) == 1.0
    assert alpha_schedule("jeffreys", 100) == 0.5
    assert alpha_schedule("inverse_J", 100) == pytest.approx(0.01)
    assert alpha_schedule("recip_a", 100) == pytest.approx(1.0 / (2.0 + 100.0 / 3.0))
    assert alpha_schedule("recip_b", 100) == pytest.approx(1.0 / 35.8)
    with pytest.raises(ValueError):
        alpha_schedule("inverse_J", 1)
    with pytest.raises(ValueError):
        alpha_schedule("unknown", 10)
    assert set(ALPHA_SCHEDULES) == {"uniform", "jeffreys", "inverse_J", "recip_a", "recip_b"}


def test_prior_spec_resolution():
    assert PriorSpec(alpha=0.2).resolve_alpha(50) == 0.2
    assert PriorSpec(schedule_name="recip_b").resolve_alpha(100) == pytest.approx(1.0 / 35.8)
    with pytest.raises(ValueError):
        PriorSpec()
    with pytest.raises(ValueError):
        PriorSpec(alpha=-1.0)


# -- unconstrained bijection ---------------------------------------------------------


def test_bijection_examples():
    u = to_unconstrained(CpmParams(np.array([1.0, 3.0, 4.0]), np.zeros(0)))
    assert np.allclose(u.delta, [1.0, np.log(2.0), 0.0])
    p = to_constrained(UnconstrainedParams(np.array([0.0, 0.0]), np.zeros(0)))
    assert np.allclose(p.gamma, [0.0, 1.0])


@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=10),
    st.lists(st.floats(-3, 3), min_size=0, max_size=3),
)
@settings(max_examples=60)
def test_bijection_round_trip(deltas, beta):
    u = UnconstrainedParams(np.array(deltas), np.array(beta))
    params = to_constrained(u)
    assert np.all(np.diff(params.gamma) > 0) or params.gamma.size <= 1
    back = to_unconstrained(params)
    assert np.allclose(back.delta, u.delta, atol=1e-12)
    assert np.array_equal(back.beta, u.beta)


# -- posterior ----------------------------------------------------------------------


def _tiny_data():
    return make_data(np.array([0.0, 1.0]), None)


def test_log_posterior_worked_example():
    data = make_data(np.array([0.0, 1.0]), None)
    u = UnconstrainedParams(np.array([0.0]), np.zeros(0))
    prior = PriorSpec(alpha=1.0)
    # both observations: log 0.5 each; prior: log phi(0)
    expected = 2 * np.log(0.5) - 0.9189385332046727
    assert log_posterior(u, data, "probit", prior) == pytest.approx(expected, abs=1e-10)


def test_log_posterior_flat_beta_prior_shift():
    rng = np.random.default_rng(2)
    y = rng.normal(size=8)
    X = rng.normal(size=(8, 1))
    data = make_data(y, X)
    prior = PriorSpec(alpha=0.7)
    delta = np.concatenate([[-1.0], np.full(6, -0.5)])
    u1 = UnconstrainedParams(delta, np.array([0.2]))
    u2 = UnconstrainedParams(delta, np.array([-0.4]))
    lp_diff = log_posterior(u1, data, "logit", prior) - log_posterior(u2, data, "logit", prior)
    p1 = to_constrained(u1)
    p2 = to_constrained(u2)
    ll_diff = log_likelihood(p1, data, "logit") - log_likelihood(p2, data, "logit")
    assert lp_diff == pytest.approx(ll_diff, abs=1e-9)


def test_log_posterior_matches_term_recomputation():
    rng = np.random.default_rng(9)
    y = rng.normal(size=6)
    X = rng.normal(size=(6, 2))
    data = make_data(y, X)
    prior = PriorSpec(alpha=0.3)
    delta = rng.normal(scale=0.5, size=5)
    beta = rng.normal(size=2)
    u = UnconstrainedParams(delta, beta)
    params = to_constrained(u)
    for kind in LINKS:
        expected = (
            log_likelihood(params, data, kind)
            + induced_prior_log_density(params.gamma, kind, 0.3)
            + delta[1:].sum()
        )
        assert log_posterior(u, data, kind, prior) == pytest.approx(expected, rel=1e-10)


def test_log_posterior_normal_beta_prior():
    data = make_data(np.array([1.0, 2.0, 3.0]), np.array([[1.0], [0.0], [2.0]]))
    u = UnconstrainedParams(np.array([-0.3, 0.1]), np.array([0.5]))
    flat = log_posterior(u, data, "probit", PriorSpec(alpha=1.0))
    informative = log_posterior(u, data, "probit", PriorSpec(alpha=1.0, beta_sd=2.0))
    expected_term = stats.norm.logpdf(0.5, scale=2.0)
    assert informative - flat == pytest.approx(expected_term, abs=1e-10)


def test_grad_symmetry_and_zero_column():
    # symmetric two-category data at delta=0 has zero cutpoint gradient
    data = make_data(np.array([0.0, 1.0]), None)
    u = UnconstrainedParams(np.array([0.0]), np.zeros(0))
    g = grad_log_posterior(u, data, "probit", PriorSpec(alpha=1.0))
    assert g[0] == pytest.approx(0.0, abs=1e-12)
    # an all-zero covariate column has exactly zero gradient under a flat prior
    data2 = make_data(np.array([1.0, 2.0, 3.0]), np.zeros((3, 1)))
    u2 = UnconstrainedParams(np.array([-0.5, 0.0]), np.array([0.7]))
    g2 = grad_log_posterior(u2, data2, "logit", PriorSpec(alpha=1.0))
    assert g2[-1] == 0.0


def test_monotone_transformation_invariance():
    rng = np.random.default_rng(21)
    y = rng.normal(size=15)
    X = rng.normal(size=(15, 2))
    prior = PriorSpec(schedule_name="inverse_J")
    u = UnconstrainedParams(rng.normal(scale=0.4, size=14), rng.normal(size=2))
    for transform in (np.exp, lambda v: v**3, lambda v: np.arctan(v) * 10):
        d1 = make_data(y, X)
        d2 = make_data(transform(y), X)
        assert np.array_equal(d1.encoding.ranks, d2.encoding.ranks)
        for kind in LINKS:
            lp1 = log_posterior(u, d1, kind, prior)
            lp2 = log_posterior(u, d2, kind, prior)
            assert lp1 == lp2  # bit identical
            assert np.array_equal(
                grad_log_posterior(u, d1, kind, prior), grad_log_posterior(u, d2, kind, prior)
            )
