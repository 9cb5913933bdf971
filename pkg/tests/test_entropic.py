import math

import numpy as np
import pytest
from scipy import optimize, special

from entropic_credibility import edf, entropic
from entropic_credibility.edf import GAMMA, INVERSE_GAUSSIAN, NORMAL, POISSON
from entropic_credibility.entropic import (
    DispersionMethod,
    dispersion_general,
    dispersion_proper,
    entropic_beta,
    entropic_estimate,
    entropic_premium,
    expected_deviance,
    r3_objective,
    rn_objective,
    rn_stability,
)
from entropic_credibility.errors import ConvergenceError, EndpointError, UnsupportedFamilyError
from entropic_credibility.glm import GlmSpec, Link, fit_irls, inverse_link_map, linear_predictor, total_deviance
from entropic_credibility.posterior import McmcConfig, PosteriorDraws, PriorSpec, predictive_draws, run_mcmc


def draws_from(betas, phi=1.0, chains=1):
    betas = np.atleast_2d(np.asarray(betas, dtype=float))
    phis = np.broadcast_to(np.asarray(phi, dtype=float), (betas.shape[0],))[:, None]
    arr = np.hstack([betas, phis]).reshape(chains, -1, betas.shape[1] + 1)
    return PosteriorDraws(arr, tuple(f"b{j}" for j in range(betas.shape[1])) + ("phi",))


def random_gamma_glm(rng, m=None, k=None):
    m = m or int(rng.integers(6, 21))
    k = k or int(rng.integers(2, min(5, m - 1) + 1))
    X = np.column_stack([np.ones(m), rng.normal(size=(m, k - 1))])
    w = rng.integers(1, 10, size=m).astype(float)
    return GlmSpec(GAMMA, Link.LOG, X, w)


def fake_posterior(spec, rng, n=400, scale=0.15):
    centre = rng.normal(0, 0.5, size=spec.design.shape[1])
    return draws_from(centre + scale * rng.normal(size=(n, centre.size)), phi=rng.uniform(0.3, 2, size=n))


class TestEntropicBeta:
    def test_saturated_returns_predictive_mean(self):
        rng = np.random.default_rng(0)
        spec = random_gamma_glm(rng, m=5, k=5)
        draws = fake_posterior(spec, rng)
        beta_star, ey = entropic_beta(spec, draws)
        np.testing.assert_allclose(entropic_premium(spec, beta_star), ey, rtol=1e-8)

    def test_degenerate_posterior_is_fixed_point(self):
        rng = np.random.default_rng(1)
        spec = random_gamma_glm(rng, m=12, k=3)
        beta = np.array([0.5, -0.3, 0.2])
        beta_star, _ = entropic_beta(spec, draws_from(np.tile(beta, (20, 1))))
        np.testing.assert_allclose(beta_star, beta, atol=1e-10)

    def test_univariate_premium_is_posterior_mean(self):
        spec = GlmSpec(GAMMA, Link.LOG, [[1.0]], [3.0])
        rng = np.random.default_rng(2)
        draws = draws_from(rng.normal(1.0, 0.3, size=(1000, 1)))
        beta_star, ey = entropic_beta(spec, draws)
        assert float(entropic_premium(spec, beta_star)[0]) == pytest.approx(float(np.exp(draws.beta).mean()), rel=1e-12)

    def test_coordinate_perturbations_do_not_improve(self):
        rng = np.random.default_rng(3)
        spec = random_gamma_glm(rng, m=15, k=4)
        beta_star, ey = entropic_beta(spec, fake_posterior(spec, rng))
        base = total_deviance(spec, ey, entropic_premium(spec, beta_star))
        for j in range(beta_star.size):
            for h in (1e-4, -1e-4):
                b = beta_star.copy()
                b[j] += h
                assert total_deviance(spec, ey, entropic_premium(spec, b)) >= base

    def test_non_convergence_carries_response(self, monkeypatch):
        def boom(spec, y, **kw):
            raise ConvergenceError("no")

        monkeypatch.setattr(entropic, "fit_irls", boom)
        spec = GlmSpec(GAMMA, Link.LOG, [[1.0]], [1.0])
        with pytest.raises(ConvergenceError) as info:
            entropic_beta(spec, draws_from([[0.0], [1.0]]))
        np.testing.assert_allclose(info.value.response, [(1 + math.e) / 2])


class TestEntropicPremium:
    def test_log_intercept(self):
        spec = GlmSpec(GAMMA, Link.LOG, np.ones((4, 1)), np.ones(4))
        np.testing.assert_allclose(entropic_premium(spec, [math.log(3)]), 3.0)

    def test_identity(self):
        X = np.array([[1.0, 0.5], [1.0, 2.0]])
        spec = GlmSpec(NORMAL, Link.IDENTITY, X, np.ones(2))
        np.testing.assert_array_equal(entropic_premium(spec, [1.0, -1.0]), X @ [1.0, -1.0])

    def test_two_class_curve(self):
        spec = GlmSpec(GAMMA, Link.LOG, [[0.0], [1.0]], np.ones(2))
        np.testing.assert_allclose(entropic_premium(spec, [0.4]), [1.0, math.exp(0.4)])


class TestInvariants:
    @pytest.mark.parametrize("c", [0.1, 7.0])
    def test_covariate_rescaling(self, c):
        rng = np.random.default_rng(4)
        spec = random_gamma_glm(rng, m=14, k=3)
        draws = fake_posterior(spec, rng)
        beta, ey = entropic_beta(spec, draws)
        X2 = spec.design.copy()
        X2[:, 2] *= c
        scaled = draws.chains.copy()
        scaled[:, :, 2] /= c  # same posterior in the rescaled parameterization
        spec2 = GlmSpec(GAMMA, Link.LOG, X2, spec.weights)
        beta2, ey2 = entropic_beta(spec2, PosteriorDraws(scaled, draws.names))
        np.testing.assert_allclose(ey2, ey, rtol=1e-12)
        np.testing.assert_allclose(entropic_premium(spec2, beta2), entropic_premium(spec, beta), rtol=1e-8)
        assert beta2[2] == pytest.approx(beta[2] / c, rel=1e-8)

    @pytest.mark.parametrize("seed", range(3))
    def test_optimality_against_random_coefficients(self, seed):
        rng = np.random.default_rng(10 + seed)
        spec = random_gamma_glm(rng)
        beta, ey = entropic_beta(spec, fake_posterior(spec, rng))
        mu_star = entropic_premium(spec, beta)
        np.testing.assert_allclose(mu_star, inverse_link_map(spec, linear_predictor(spec, beta)), rtol=1e-10)
        best = total_deviance(spec, ey, mu_star)
        for _ in range(100):
            b = beta + rng.normal(0, 0.2, size=beta.size)
            assert best <= total_deviance(spec, ey, entropic_premium(spec, b))


def _gamma_r3_root(weights, ed):
    # dR3/dphi = 0  <=>  sum w (log k - digamma k) = E[D]/2 with k = w/phi
    f = lambda lphi: float(np.sum(weights * (np.log(weights / math.exp(lphi)) - special.digamma(weights / math.exp(lphi))))) - ed / 2
    return math.exp(optimize.brentq(f, math.log(1e-6), math.log(1e3), xtol=1e-14))


class TestDispersionProper:
    def test_normal_equal_weights(self):
        res = dispersion_proper(NORMAL, np.ones(4), 8.0)
        assert res.phi == pytest.approx(2.0, abs=1e-6)
        assert res.method is DispersionMethod.PROPER
        assert abs(res.derivative) < 1e-6

    def test_normal_unequal_weights(self):
        assert dispersion_proper(NORMAL, [1.0, 2.0, 3.0], 6.0).phi == pytest.approx(2.0, abs=1e-6)

    def test_inverse_gaussian_closed_form(self):
        # e(phi) = phi^(-1/2) as for the normal, so phi* = E[D]/m
        assert dispersion_proper(INVERSE_GAUSSIAN, np.ones(5), 3.0).phi == pytest.approx(0.6, abs=1e-6)

    @pytest.mark.parametrize("weights,ed", [([1.0] * 6, 4.0), ([1.0, 3.0, 10.0, 2.0], 9.5), ([50.0] * 3, 400.0)])
    def test_gamma_matches_first_order_condition(self, weights, ed):
        w = np.array(weights)
        assert dispersion_proper(GAMMA, w, ed).phi == pytest.approx(_gamma_r3_root(w, ed), rel=1e-7)

    def test_gamma_zero_deviance_hits_endpoint(self):
        with pytest.raises(EndpointError):
            dispersion_proper(GAMMA, np.ones(3), 0.0)

    def test_poisson_unsupported(self):
        with pytest.raises(UnsupportedFamilyError):
            r3_objective(POISSON, np.ones(2), 1.0)

    def test_interval_too_narrow(self):
        with pytest.raises(EndpointError) as info:
            dispersion_proper(NORMAL, np.ones(4), 8.0, interval=(0.1, 1.0))
        assert info.value.value == pytest.approx(1.0, rel=1e-3)


class TestDispersionGeneral:
    def _normal_case(self):
        X = np.column_stack([np.ones(5), np.arange(5.0)])
        spec = GlmSpec(NORMAL, Link.IDENTITY, X, [1.0, 2.0, 1.0, 4.0, 3.0])
        beta, phi = np.array([1.0, 0.5]), 1.7
        draws = draws_from(np.tile(beta, (10, 1)), phi=phi)
        return spec, draws, X @ beta, phi

    def test_gamma_agrees_with_proper_path(self):
        rng = np.random.default_rng(20)
        spec = random_gamma_glm(rng, m=15, k=3)
        res_p = entropic_estimate(spec, fake_posterior(spec, rng), "proper", 10_000, np.random.default_rng(1))
        rng = np.random.default_rng(20)
        spec = random_gamma_glm(rng, m=15, k=3)
        res_g = entropic_estimate(spec, fake_posterior(spec, rng), "monte_carlo", 10_000, np.random.default_rng(1))
        np.testing.assert_allclose(res_p.mu_star, res_g.mu_star)
        assert abs(res_g.phi_star.phi - res_p.phi_star.phi) / res_p.phi_star.phi < 0.05

    def test_degenerate_replicates_hit_endpoint(self):
        spec, _, mu, _ = self._normal_case()
        with pytest.raises(EndpointError):
            dispersion_general(spec, np.tile(mu, (200, 1)), mu)

    def test_normal_minimizer_is_mean_deviance_over_m(self):
        spec, draws, mu, _ = self._normal_case()
        reps = predictive_draws(spec, draws, 2000, np.random.default_rng(0))
        res = dispersion_general(spec, reps, mu)
        assert res.phi == pytest.approx(expected_deviance(spec, reps, mu) / 5, rel=1e-7)

    def test_convergence_in_n(self):
        spec, draws, mu, phi = self._normal_case()
        m = spec.m
        rng = np.random.default_rng(5)
        estimates = {}
        for n in (1000, 100_000):
            vals = []
            for _ in range(6):
                reps = predictive_draws(spec, draws, n, rng)
                vals.append(dispersion_general(spec, reps, mu).phi)
            vals = np.array(vals)
            se = phi * math.sqrt(2 * m / n) / m  # D ~ phi * chi2_m
            assert np.all(np.abs(vals - phi) < 3 * se)
            estimates[n] = vals
        assert estimates[100_000].var() < estimates[1000].var()

    def test_requires_enough_replicates(self):
        spec, _, mu, _ = self._normal_case()
        with pytest.raises(ValueError):
            dispersion_general(spec, np.tile(mu, (10, 1)), mu)

    def test_support_violation(self):
        spec = GlmSpec(GAMMA, Link.LOG, np.ones((2, 1)), np.ones(2))
        reps = np.ones((200, 2))
        reps[5, 1] = -1.0
        with pytest.raises(edf.DomainError):
            dispersion_general(spec, reps, np.ones(2))

    def test_objective_matches_density_form(self):
        # RN(phi) = -(1/N) sum_r log f(y^r | mu*, phi) for the mean-value density
        rng = np.random.default_rng(6)
        spec = random_gamma_glm(rng, m=6, k=2)
        mu = np.exp(spec.design @ [0.3, 0.1])
        reps = edf.sample(GAMMA, mu, 0.8, spec.weights, rng, size=(300, 6))
        rn = rn_objective(spec, reps, mu)
        for phi in (0.3, 1.0, 2.2):
            direct = -np.sum(edf.log_density(GAMMA, reps, mu, phi, spec.weights)) / 300
            assert rn(phi) == pytest.approx(direct, rel=1e-12)

    def test_stability_shrinks_with_n(self):
        rng = np.random.default_rng(7)
        spec = random_gamma_glm(rng, m=10, k=2)
        mu = np.exp(spec.design @ [0.2, 0.1])
        reps = edf.sample(GAMMA, mu, 0.6, spec.weights, rng, size=(64_000, 10))
        grid = np.geomspace(0.3, 1.2, 7)
        small = np.mean([rn_stability(spec, reps[i * 2000:(i + 1) * 2000], mu, grid) for i in range(8)])
        large = rn_stability(spec, reps, mu, grid)
        # 32x more replicates: differences should shrink by about sqrt(32)
        assert large < small / 2.5


class TestEntropicEstimate:
    def test_poisson_reports_fixed_dispersion(self):
        spec = GlmSpec(POISSON, Link.LOG, np.column_stack([np.ones(3), [0, 1, 1]]), [3.0, 2.0, 5.0])
        res = entropic_estimate(spec, draws_from([[0.1, 0.2], [0.0, 0.3]]))
        assert res.phi_star.phi == 1.0
        assert res.phi_star.method is DispersionMethod.FIXED

    def test_no_dispersion(self):
        spec = GlmSpec(GAMMA, Link.LOG, np.ones((2, 1)), np.ones(2))
        assert entropic_estimate(spec, draws_from([[0.0]]), dispersion=None).phi_star is None

    def test_end_to_end_gamma(self):
        rng = np.random.default_rng(8)
        X = np.column_stack([np.ones(12), np.arange(12) % 3 == 1, np.arange(12) % 3 == 2]).astype(float)
        w = rng.integers(5, 30, size=12).astype(float)
        y = edf.sample(GAMMA, np.exp(X @ [1.0, 0.3, -0.2]), 0.7, w, rng)
        spec = GlmSpec(GAMMA, Link.LOG, X, w)
        draws = run_mcmc(spec, PriorSpec(), y, McmcConfig(chains=2, warmup=1000, kept=3000, seed=9))
        res = entropic_estimate(spec, draws, "proper", 4000, np.random.default_rng(0))
        assert res.fit_meta["converged"]
        # entropic coefficients sit close to the MLE when data dominate the flat prior
        np.testing.assert_allclose(res.beta_star, fit_irls(spec, y).beta, atol=0.1)
        assert 0.3 < res.phi_star.phi < 1.5
