"""Entropic credibility estimators for Bayesian GLMs.

The entropic coefficients are the MLE of a frequentist GLM fitted to the
posterior predictive mean E[Y]; the entropic premium is G^{-1}(X beta*).
The dispersion estimate phi* minimizes either the proper-dispersion
objective

    R3(phi) = -sum_i log e(phi / w_i) + E[D(Y, mu*)] / (2 phi)

or its Monte Carlo counterpart built from posterior predictive replicates,

    RN(phi) = -(1/N) sum_r log C(y^r, phi) + (1 / (2 phi N)) sum_r D(y^r, mu*).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import edf
from .edf import Family
from .errors import ConvergenceError, DomainError, EndpointError, UnsupportedFamilyError
from .glm import GlmFit, GlmSpec, fit_irls, inverse_link_map, linear_predictor
from .posterior import PosteriorDraws, predictive_draws, predictive_mean

logger = logging.getLogger(__name__)

__all__ = [
    "DispersionMethod",
    "DispersionResult",
    "EntropicResult",
    "entropic_beta",
    "entropic_premium",
    "entropic_estimate",
    "expected_deviance",
    "r3_objective",
    "rn_objective",
    "minimize_dispersion",
    "dispersion_proper",
    "dispersion_general",
    "rn_stability",
]

DEFAULT_INTERVAL = (1e-6, 1000.0)
# Relative tolerance on phi; the search runs on log(phi).
XTOL = 1e-10
# Distance on the log scale below which a minimizer counts as an endpoint.
ENDPOINT_GAP = 1e-4


class DispersionMethod(str, enum.Enum):
    PROPER = "proper"
    MONTE_CARLO = "monte_carlo"
    FIXED = "fixed"


@dataclass
class DispersionResult:
    phi: float
    method: DispersionMethod
    objective: float = math.nan
    derivative: float = math.nan


@dataclass
class EntropicResult:
    ey: np.ndarray
    beta_star: np.ndarray
    mu_star: np.ndarray
    phi_star: DispersionResult | None = None
    fit_meta: dict = field(default_factory=dict)


def entropic_beta(spec: GlmSpec, draws: PosteriorDraws):
    """Return ``(beta_star, ey)``.

    ``ey`` is the posterior predictive mean and ``beta_star`` the IRLS fit of
    the same GLM to ``ey``.  An IRLS failure re-raises with ``ey`` attached
    as ``exc.response``.
    """
    ey = predictive_mean(spec, draws)
    try:
        fit = fit_irls(spec, ey)
    except ConvergenceError as exc:
        exc.response = ey
        raise
    return fit.beta, ey


def entropic_premium(spec: GlmSpec, beta_star) -> np.ndarray:
    return inverse_link_map(spec, linear_predictor(spec, beta_star))


def expected_deviance(spec: GlmSpec, replicates, mu_star) -> float:
    """Monte Carlo estimate of E[D(Y, mu*)] from predictive replicates."""
    reps = np.atleast_2d(np.asarray(replicates, dtype=float))
    pos = spec.weights > 0
    d = edf.unit_deviance(spec.family, reps[:, pos], np.asarray(mu_star)[pos])
    return float((d @ spec.weights[pos]).mean())


def r3_objective(family: Family, weights, expected_dev: float):
    """R3 as a function of phi, for the proper dispersion families."""
    if not family.is_proper:
        raise UnsupportedFamilyError(f"{family.name} is not a proper dispersion model")
    if expected_dev < 0:
        raise DomainError("expected deviance must be nonnegative")
    w = np.asarray(weights, dtype=float)
    w = w[w > 0]

    def r3(phi: float) -> float:
        return float(-np.sum(edf.log_e_phi(family, phi / w)) + expected_dev / (2.0 * phi))

    return r3


def rn_objective(spec: GlmSpec, replicates, mu_star):
    """Monte Carlo objective RN(phi) with the exact normalizer C(y, phi)."""
    family = spec.family
    reps = np.atleast_2d(np.asarray(replicates, dtype=float))
    pos = spec.weights > 0
    yr = reps[:, pos]
    w = spec.weights[pos]
    if not np.all(family.in_support(yr)):
        raise DomainError("replicates outside the family support")
    n = yr.shape[0]
    mean_dev = float((edf.unit_deviance(family, yr, np.asarray(mu_star)[pos]) @ w).mean())

    def log_c_mean(phi):
        return float(edf.log_normalizer(family, yr, phi, w).sum() / n)

    def rn(phi: float) -> float:
        return -log_c_mean(phi) + mean_dev / (2.0 * phi)

    rn.mean_deviance = mean_dev
    return rn


def _central_derivative(f, x: float) -> float:
    h = 1e-5 * x
    return (f(x + h) - f(x - h)) / (2 * h)


def minimize_dispersion(objective, interval=DEFAULT_INTERVAL) -> tuple[float, float]:
    """Minimize a univariate objective in phi over ``interval``.

    Golden-section search with parabolic steps (Brent) on log(phi).  Raises
    :class:`EndpointError` when the minimizer sits on either end.
    """
    lo, hi = interval
    if not 0 < lo < hi:
        raise ValueError(f"bad dispersion interval {interval}")
    a, b = math.log(lo), math.log(hi)
    res = optimize.minimize_scalar(
        lambda t: objective(math.exp(t)),
        bounds=(a, b),
        method="bounded",
        options={"xatol": XTOL, "maxiter": 1000},
    )
    t = float(res.x)
    phi = math.exp(t)
    if t - a < ENDPOINT_GAP or b - t < ENDPOINT_GAP:
        raise EndpointError(f"dispersion minimizer {phi:.6g} is on the interval boundary", value=phi)
    return phi, float(res.fun)


def dispersion_proper(family: Family, weights, expected_dev: float, interval=DEFAULT_INTERVAL) -> DispersionResult:
    """phi* minimizing R3, for normal, gamma and inverse Gaussian responses."""
    r3 = r3_objective(family, weights, expected_dev)
    phi, val = minimize_dispersion(r3, interval)
    deriv = _central_derivative(r3, phi)
    scale = abs(expected_dev) / phi**2 + 1.0
    if abs(deriv) > 1e-4 * scale:
        logger.warning("R3 derivative %.3g at phi*=%.6g is not near zero", deriv, phi)
    return DispersionResult(phi, DispersionMethod.PROPER, val, deriv)


def dispersion_general(spec: GlmSpec, replicates, mu_star, interval=DEFAULT_INTERVAL) -> DispersionResult:
    """phi* minimizing the Monte Carlo objective RN over predictive replicates."""
    reps = np.atleast_2d(np.asarray(replicates, dtype=float))
    if reps.shape[0] < 100:
        raise ValueError(f"need at least 100 replicates, got {reps.shape[0]}")
    if spec.family.dispersion_fixed is not None:
        raise UnsupportedFamilyError(f"{spec.family.name} has fixed dispersion")
    rn = rn_objective(spec, reps, mu_star)
    phi, val = minimize_dispersion(rn, interval)
    return DispersionResult(phi, DispersionMethod.MONTE_CARLO, val, _central_derivative(rn, phi))


def rn_stability(spec: GlmSpec, replicates, mu_star, grid) -> float:
    """max over ``grid`` of |RN - R2N|, using the first half of the replicates for RN."""
    reps = np.atleast_2d(np.asarray(replicates, dtype=float))
    half = reps.shape[0] // 2
    if half < 1:
        raise ValueError("need at least two replicates")
    r_half = rn_objective(spec, reps[:half], mu_star)
    r_full = rn_objective(spec, reps[: 2 * half], mu_star)
    return float(max(abs(r_half(g) - r_full(g)) for g in grid))


def entropic_estimate(
    spec: GlmSpec,
    draws: PosteriorDraws,
    dispersion: str | None = "proper",
    n_replicates: int = 10000,
    rng: np.random.Generator | None = None,
    interval=DEFAULT_INTERVAL,
) -> EntropicResult:
    """Full pipeline: E[Y], beta*, mu*, and optionally phi*.

    ``dispersion`` is ``"proper"``, ``"monte_carlo"`` or ``None``.  Poisson
    models always report phi* = 1 without optimizing.
    """
    ey = predictive_mean(spec, draws)
    try:
        fit: GlmFit = fit_irls(spec, ey)
    except ConvergenceError as exc:
        exc.response = ey
        raise
    mu_star = entropic_premium(spec, fit.beta)
    result = EntropicResult(
        ey=ey,
        beta_star=fit.beta,
        mu_star=mu_star,
        fit_meta={"iterations": fit.iterations, "converged": fit.converged, "score_norm": fit.score_norm},
    )
    if dispersion is None:
        return result
    if spec.family.dispersion_fixed is not None:
        result.phi_star = DispersionResult(spec.family.dispersion_fixed, DispersionMethod.FIXED)
        return result
    rng = np.random.default_rng() if rng is None else rng
    reps = predictive_draws(spec, draws, n_replicates, rng)
    method = DispersionMethod(dispersion)
    if method is DispersionMethod.PROPER:
        result.phi_star = dispersion_proper(
            spec.family, spec.weights, expected_deviance(spec, reps, mu_star), interval
        )
    else:
        result.phi_star = dispersion_general(spec, reps, mu_star, interval)
    return result
