"""Frequentist GLM machinery: links, deviance, IRLS and the deviance estimator of phi."""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import edf
from .edf import Family, Kind
from .errors import ConvergenceError, DomainError, LinkRangeError, RankDeficiencyError

logger = logging.getLogger(__name__)

__all__ = [
    "Link",
    "GlmSpec",
    "GlmFit",
    "linear_predictor",
    "inverse_link_map",
    "link_map",
    "total_deviance",
    "active_mask",
    "score",
    "fit_irls",
    "phi_deviance_estimate",
]

MAX_ITER = 50
REL_TOL = 1e-10
MAX_HALVINGS = 10
POLISH_STEPS = 4
# Largest |eta| for which exp stays comfortably finite.
_ETA_CAP = 700.0


class Link(str, enum.Enum):
    LOG = "log"
    IDENTITY = "identity"
    INVERSE = "inverse"

    @classmethod
    def parse(cls, value: "str | Link") -> "Link":
        if isinstance(value, Link):
            return value
        return cls(value.strip().lower())

    def __call__(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self is Link.LOG:
            return np.log(mu)
        if self is Link.IDENTITY:
            return mu.copy()
        return 1.0 / mu

    def inverse(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self is Link.LOG:
            with np.errstate(over="ignore"):
                return np.exp(eta)
        if self is Link.IDENTITY:
            return eta.copy()
        with np.errstate(divide="ignore"):
            return 1.0 / eta

    def derivative(self, mu):
        """g'(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self is Link.LOG:
            return 1.0 / mu
        if self is Link.IDENTITY:
            return np.ones_like(mu)
        return -1.0 / mu**2


@dataclass
class GlmSpec:
    """Model skeleton shared by the frequentist and Bayesian fits.

    ``design`` is the m x (p+1) matrix X; ``weights`` are the class weights.
    Saturated models (p + 1 == m) are allowed.
    """

    family: Family
    link: Link
    design: np.ndarray
    weights: np.ndarray
    class_labels: Sequence = ()
    column_names: Sequence[str] = ()

    def __post_init__(self):
        self.family = edf.get_family(self.family)
        self.link = Link.parse(self.link)
        self.design = np.atleast_2d(np.asarray(self.design, dtype=float))
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        m, k = self.design.shape
        if self.weights.shape != (m,):
            raise ValueError(f"weights have length {self.weights.size}, design has {m} rows")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")
        if not np.all(np.isfinite(self.design)):
            raise ValueError("design matrix contains non-finite entries")
        if not self.class_labels:
            self.class_labels = tuple(range(m))
        if not self.column_names:
            self.column_names = tuple(f"x{j}" for j in range(k))
        if len(self.column_names) != k:
            raise ValueError("column_names must match the number of design columns")

    @property
    def m(self) -> int:
        return self.design.shape[0]

    @property
    def p(self) -> int:
        """Number of covariates; the coefficient vector has p + 1 entries."""
        return self.design.shape[1] - 1

    def with_weights(self, weights) -> "GlmSpec":
        return GlmSpec(
            self.family, self.link, self.design, weights, self.class_labels, self.column_names
        )


@dataclass
class GlmFit:
    beta: np.ndarray
    mu: np.ndarray
    deviance: float
    phi_deviance: float | None
    iterations: int
    converged: bool
    # max |dl/dbeta| per unit of total weight at the returned beta
    score_norm: float = np.nan
    deviance_trace: list = field(default_factory=list)


def linear_predictor(spec: GlmSpec, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float).ravel()
    if beta.shape != (spec.design.shape[1],):
        raise ValueError(f"beta has length {beta.size}, expected {spec.design.shape[1]}")
    if not np.all(np.isfinite(beta)):
        raise ValueError("beta must be finite")
    return spec.design @ beta


def inverse_link_map(spec: GlmSpec, eta) -> np.ndarray:
    """Means G^{-1}(eta), raising :class:`LinkRangeError` outside the mean domain."""
    eta = np.asarray(eta, dtype=float)
    if spec.link is Link.LOG and np.any(eta > _ETA_CAP):
        raise LinkRangeError("linear predictor overflows the log link")
    mu = spec.link.inverse(eta)
    if not np.all(spec.family.in_domain(mu)):
        raise LinkRangeError(
            f"{spec.link.value} link produces means outside the {spec.family.name} domain"
        )
    return mu


def link_map(spec: GlmSpec, mu) -> np.ndarray:
    return spec.link(mu)


def active_mask(spec: GlmSpec, y, warn: bool = True) -> np.ndarray:
    """Classes that enter the likelihood.

    Zero-weight classes never do.  Gamma and inverse Gaussian classes with a
    nonpositive response are dropped with a warning.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.m,):
        raise ValueError(f"response has length {y.size}, expected {spec.m}")
    pos = spec.weights > 0
    ok = spec.family.in_support(y)
    if spec.family.kind in (Kind.GAMMA, Kind.INVERSE_GAUSSIAN):
        bad = pos & np.isfinite(y) & (y <= 0)
        if bad.any() and warn:
            warnings.warn(
                f"{int(bad.sum())} class(es) with nonpositive response excluded "
                f"from the {spec.family.name} likelihood",
                stacklevel=3,
            )
        ok = ok | bad
        pos = pos & ~bad
    if not np.all(ok[pos]):
        raise DomainError(f"response outside the {spec.family.name} support")
    return pos


def total_deviance(spec: GlmSpec, y, mu) -> float:
    """D(y, mu) = sum_i w_i d(y_i, mu_i) over positively weighted classes."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    pos = spec.weights > 0
    d = edf.unit_deviance(spec.family, y[pos], mu[pos])
    return float(np.dot(spec.weights[pos], d))


def score(spec: GlmSpec, y, beta, mask=None) -> np.ndarray:
    """Gradient of -D/2 with respect to beta."""
    mu = inverse_link_map(spec, linear_predictor(spec, beta))
    y = np.asarray(y, dtype=float)
    w = spec.weights if mask is None else np.where(mask, spec.weights, 0.0)
    safe_y = np.where(w > 0, y, mu)
    r = w * (safe_y - mu) / (edf.variance(spec.family, mu) * spec.link.derivative(mu))
    return spec.design.T @ r


def _check_rank(spec: GlmSpec, mask) -> None:
    X = spec.design[mask]
    k = X.shape[1]
    if X.shape[0] < k or np.linalg.matrix_rank(X) < k:
        raise RankDeficiencyError(
            f"design restricted to {X.shape[0]} weighted classes is rank deficient"
        )


def _start(spec: GlmSpec, y):
    fam = spec.family.kind
    mu = np.asarray(y, dtype=float).copy()
    if fam is Kind.POISSON:
        mu = mu + 0.1
    if fam is Kind.NORMAL and spec.link is not Link.IDENTITY:
        floor = 0.1 * max(np.mean(np.abs(mu)), 1.0)
        mu = np.where(mu > 0, mu, floor)
    if spec.link is Link.INVERSE and fam is Kind.NORMAL:
        mu = np.where(mu == 0, 1e-3, mu)
    return mu


def fit_irls(
    spec: GlmSpec,
    y,
    max_iter: int = MAX_ITER,
    tol: float = REL_TOL,
    start=None,
) -> GlmFit:
    """Maximum-likelihood fit by iteratively reweighted least squares.

    Step halving (up to 10 times) is applied whenever the deviance increases
    or the step leaves the mean domain, so the recorded deviance trace is
    non-increasing.

    Raises
    ------
    RankDeficiencyError
        If the weighted design rows do not have full column rank.
    ConvergenceError
        After ``max_iter`` iterations without meeting the relative tolerance;
        the exception carries the last iterate.
    """
    y = np.asarray(y, dtype=float)
    mask = active_mask(spec, y)
    _check_rank(spec, mask)
    X = spec.design[mask]
    w = spec.weights[mask]
    yy = y[mask]
    sub = GlmSpec(spec.family, spec.link, X, w)

    if start is None:
        mu = _start(sub, yy)
        eta = spec.link(mu)
        beta = None
    else:
        beta = np.asarray(start, dtype=float).copy()
        eta = X @ beta
        mu = inverse_link_map(sub, eta)
    dev = total_deviance(sub, yy, mu) if beta is not None else np.inf
    trace = []
    converged = False
    it = 0
    polish = 0
    for it in range(1, max_iter + 1):
        gprime = spec.link.derivative(mu)
        z = eta + (yy - mu) * gprime
        wt = w / (edf.variance(spec.family, mu) * gprime**2)
        sw = np.sqrt(wt)
        new_beta, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        candidate = new_beta
        for _ in range(MAX_HALVINGS + 1):
            try:
                new_eta = X @ candidate
                new_mu = inverse_link_map(sub, new_eta)
                new_dev = total_deviance(sub, yy, new_mu)
            except (LinkRangeError, DomainError):
                new_dev = np.inf
            # Near the optimum the deviance is flat to rounding; tolerate a few ulps.
            slack = 16 * np.finfo(float).eps * (abs(dev) + 0.1) if np.isfinite(dev) else 0.0
            if np.isfinite(new_dev) and (new_dev <= dev + slack or beta is None):
                break
            if beta is None:
                # No feasible previous iterate to halve toward.
                raise ConvergenceError("initial IRLS step left the mean domain", last=candidate)
            candidate = 0.5 * (candidate + beta)
        else:
            # Could not improve: we are at numerical precision of the optimum.
            converged = np.isfinite(dev)
            logger.debug("IRLS step halving exhausted at iteration %d", it)
            break
        change = abs(dev - new_dev)
        beta, eta, mu, dev = candidate, new_eta, new_mu, new_dev
        trace.append(dev)
        if dev == 0.0:
            converged = True
            break
        if change <= tol * (abs(dev) + 0.1):
            # A few extra steps drive the score well below the deviance tolerance.
            converged = True
            polish += 1
            if polish > POLISH_STEPS or change == 0.0:
                break

    fit = GlmFit(
        beta=beta,
        mu=inverse_link_map(spec, linear_predictor(spec, beta)),
        deviance=float(dev),
        phi_deviance=None,
        iterations=it,
        converged=converged,
        deviance_trace=trace,
    )
    fit.score_norm = float(np.max(np.abs(score(spec, y, beta, mask))) / w.sum())
    if not converged:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations", last=fit)
    if spec.m - spec.p > 0:
        fit.phi_deviance = phi_deviance_estimate(fit, spec.m, spec.p)
    return fit


def phi_deviance_estimate(fit: GlmFit, m: int, p: int) -> float:
    """Deviance estimator D(y, mu_hat) / (m - p).

    ``p`` is the number of covariates, i.e. ``design.shape[1] - 1``.
    """
    if m <= p:
        raise ValueError(f"need m > p for the deviance estimator, got m={m}, p={p}")
    return float(fit.deviance / (m - p))
