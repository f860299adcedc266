import numpy as np
import pytest
from scipy import stats

from drivestyle.distributions import (
    Family,
    NIWPrior,
    check_spd,
    fit_distribution,
    make_rng,
    niw_posterior,
    percentile,
    sample_categorical,
    sample_dirichlet,
    sample_gaussian_params,
    sample_gem,
    sample_inverse_wishart,
)
from drivestyle.errors import DecompositionError, FitError, ParameterDomainError
from drivestyle.models import EmissionMode


def test_streams_are_reproducible_and_keyed():
    a = make_rng(3, 1, 2).random(5)
    b = make_rng(3, 1, 2).random(5)
    c = make_rng(3, 2, 1).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_categorical_never_picks_zero_weight(rng):
    log_w = np.array([-np.inf, 0.0, -np.inf])
    assert {sample_categorical(log_w, rng) for _ in range(50)} == {1}


class TestGem:
    def test_weights_form_a_simplex(self, rng):
        w = sample_gem(2.0, 20, rng)
        assert w.shape == (20,)
        assert np.all(w >= 0)
        assert w.sum() == pytest.approx(1.0)

    def test_fixed_fractions(self, rng):
        np.testing.assert_allclose(sample_gem(1.0, 3, rng, nu=0.5), [0.5, 0.25, 0.25])

    def test_single_atom(self, rng):
        np.testing.assert_array_equal(sample_gem(1.0, 1, rng), [1.0])

    @pytest.mark.parametrize("gamma,l_max", [(0.0, 5), (-1.0, 5), (1.0, 0)])
    def test_rejects_bad_arguments(self, rng, gamma, l_max):
        with pytest.raises(ParameterDomainError):
            sample_gem(gamma, l_max, rng)


class TestDirichlet:
    def test_zero_entries_stay_zero(self, rng):
        draw = sample_dirichlet([0.0, 2.0, 0.0, 1.0], rng)
        assert draw[0] == 0.0 and draw[2] == 0.0
        assert draw.sum() == pytest.approx(1.0)

    def test_tiny_concentrations_do_not_underflow(self, rng):
        draw = sample_dirichlet(np.full(10, 1e-8), rng)
        assert np.all(np.isfinite(draw))
        assert draw.sum() == pytest.approx(1.0)

    def test_mean(self, rng):
        alpha = np.array([1.0, 2.0, 7.0])
        draws = np.array([sample_dirichlet(alpha, rng) for _ in range(4000)])
        np.testing.assert_allclose(draws.mean(axis=0), alpha / alpha.sum(), atol=0.02)

    def test_all_zero_is_rejected(self, rng):
        with pytest.raises(ParameterDomainError):
            sample_dirichlet([0.0, 0.0], rng)


class TestNormalInverseWishart:
    def test_check_spd_rejects_indefinite(self):
        with pytest.raises(DecompositionError):
            check_spd(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_inverse_wishart_mean(self, rng):
        S0 = np.array([[2.0, 0.3], [0.3, 1.0]])
        n0 = 10.0
        draws = np.array([sample_inverse_wishart(n0, S0, rng) for _ in range(3000)])
        np.testing.assert_allclose(draws.mean(axis=0), S0 / (n0 - 3), atol=0.03)

    def test_posterior_update(self):
        prior = NIWPrior(mean0=np.zeros(2), kappa0=1.0, n0=4.0, S0=np.eye(2))
        data = np.array([[1.0, 0.0], [3.0, 2.0]])
        post = niw_posterior(prior, data)
        assert post.kappa0 == 3.0
        assert post.n0 == 6.0
        np.testing.assert_allclose(post.mean0, [4.0 / 3.0, 2.0 / 3.0])
        xbar = data.mean(axis=0)
        scatter = (data - xbar).T @ (data - xbar)
        expected = np.eye(2) + scatter + (2.0 / 3.0) * np.outer(xbar, xbar)
        np.testing.assert_allclose(post.S0, expected)

    def test_empty_data_returns_prior(self):
        prior = NIWPrior(mean0=np.zeros(3), kappa0=0.5, n0=5.0, S0=np.eye(3))
        assert niw_posterior(prior, np.zeros((0, 3))) is prior

    def test_fixed_zero_mean(self, rng):
        prior = NIWPrior(mean0=np.zeros(2), kappa0=1.0, n0=4.0, S0=np.eye(2))
        post = niw_posterior(prior, np.ones((3, 2)), EmissionMode.FIXED_ZERO_MEAN)
        np.testing.assert_allclose(post.S0, np.eye(2) + 3.0 * np.ones((2, 2)))
        mu, sigma = sample_gaussian_params(post, EmissionMode.FIXED_ZERO_MEAN, rng)
        np.testing.assert_array_equal(mu, [0.0, 0.0])
        np.linalg.cholesky(sigma)

    def test_prior_validation(self):
        with pytest.raises(ParameterDomainError):
            NIWPrior(mean0=np.zeros(3), kappa0=1.0, n0=1.5, S0=np.eye(3))


class TestUnivariateFits:
    def test_normal_fit_recovers_moments(self, rng):
        x = rng.normal(3.0, 2.0, size=5000)
        fitted = fit_distribution(x, Family.NORMAL)
        assert fitted.params[0] == pytest.approx(3.0, abs=0.1)
        assert fitted.params[1] == pytest.approx(2.0, abs=0.1)
        assert fitted.loglik == pytest.approx(stats.norm(*fitted.params).logpdf(x).sum())

    def test_gamma_fit_recovers_shape(self, rng):
        x = rng.gamma(4.0, 10.0, size=5000)
        fitted = fit_distribution(x, Family.GAMMA)
        assert fitted.params[0] == pytest.approx(4.0, rel=0.1)
        assert fitted.params[1] == pytest.approx(0.1, rel=0.1)

    def test_gamma_shifts_nonpositive_data(self, rng):
        x = rng.normal(size=500)
        fitted = fit_distribution(x, Family.GAMMA)
        assert fitted.params[2] < x.min()
        assert np.isfinite(fitted.loglik)

    def test_student_t_fit(self, rng):
        x = stats.t(4.0, loc=0.5, scale=0.2).rvs(size=5000, random_state=rng)
        fitted = fit_distribution(x, Family.STUDENT_T)
        assert fitted.params[1] == pytest.approx(0.5, abs=0.02)
        assert fitted.params[2] == pytest.approx(0.2, rel=0.1)
        assert 2.5 < fitted.params[0] < 7.0

    def test_beta_fit_is_evaluated_on_original_scale(self, rng):
        x = rng.beta(2.0, 5.0, size=1000) * 10.0 - 3.0
        fitted = fit_distribution(x, Family.BETA)
        assert fitted.loglik == pytest.approx(fitted.frozen().logpdf(x).sum())

    def test_too_few_samples(self):
        with pytest.raises(FitError):
            fit_distribution(np.arange(5.0), Family.NORMAL)

    def test_zero_variance(self):
        with pytest.raises(FitError):
            fit_distribution(np.full(50, 2.0), Family.STUDENT_T)

    def test_percentile_inverts_cdf(self, rng):
        fitted = fit_distribution(rng.normal(size=2000), Family.NORMAL)
        value = percentile(fitted, 85.0)
        assert fitted.frozen().cdf(value) == pytest.approx(0.85)

    def test_percentile_domain(self, rng):
        fitted = fit_distribution(rng.normal(size=100), Family.NORMAL)
        with pytest.raises(ParameterDomainError):
            percentile(fitted, 100.0)
