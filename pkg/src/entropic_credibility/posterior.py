"""Bayesian GLM engine.

Log posterior of (beta, phi), an adaptive random-walk Metropolis sampler
on (beta, log phi), split-Rhat / ESS diagnostics and posterior predictive
summaries.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import special

from . import edf
from .edf import Kind
from .errors import (
    CredibilityError,
    DataError,
    InsufficientDrawsError,
    SamplerInitError,
)
from .glm import GlmSpec, Link, active_mask, fit_irls, inverse_link_map

logger = logging.getLogger(__name__)

__all__ = [
    "UniformBox",
    "NormalPrior",
    "Fixed",
    "JewellConjugate",
    "PriorSpec",
    "McmcConfig",
    "PosteriorDraws",
    "log_posterior",
    "log_likelihood_fn",
    "adaptive_metropolis",
    "run_mcmc",
    "split_rhat",
    "effective_sample_size",
    "diagnostics",
    "predictive_mean",
    "predictive_draws",
    "write_draws_csv",
    "read_draws_csv",
]

RHAT_WARN = 1.05


@dataclass(frozen=True)
class UniformBox:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"uniform prior needs lo < hi, got ({self.lo}, {self.hi})")

    def logpdf(self, x, family=None) -> float:
        if self.lo < x < self.hi:
            return -math.log(self.hi - self.lo)
        return -math.inf

    def clip(self, x: float) -> float:
        pad = 1e-6 * (self.hi - self.lo)
        return min(max(x, self.lo + pad), self.hi - pad)


@dataclass(frozen=True)
class NormalPrior:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("normal prior needs sd > 0")

    def logpdf(self, x, family=None) -> float:
        z = (x - self.mean) / self.sd
        return -0.5 * z * z - math.log(self.sd) - 0.5 * math.log(2 * math.pi)

    def clip(self, x: float) -> float:
        return x


@dataclass(frozen=True)
class JewellConjugate:
    """Jewell's prior exp(n0 [x0 theta - kappa(theta)]) on a canonical parameter.

    Only meaningful for an intercept-only model with the family's canonical
    link, where the single coefficient *is* theta.  Unnormalized.
    """

    n0: float
    x0: float

    def logpdf(self, x, family=None) -> float:
        if family is None:
            raise ValueError("JewellConjugate needs the response family")
        with np.errstate(all="ignore"):
            v = self.n0 * (self.x0 * x - float(family.cumulant(x)))
        return v if math.isfinite(v) else -math.inf

    def clip(self, x: float) -> float:
        return x


@dataclass(frozen=True)
class Fixed:
    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise ValueError("fixed dispersion must be positive")


CoefPrior = Union[UniformBox, NormalPrior, JewellConjugate]


@dataclass(frozen=True)
class PriorSpec:
    """Independent priors on each coefficient and on the dispersion.

    ``beta`` is either one prior shared by every coefficient or a sequence
    with one entry per coefficient.  ``phi=None`` means the family default:
    ``Fixed(1)`` for Poisson, ``UniformBox(0, 1000)`` otherwise.
    """

    beta: CoefPrior | Sequence[CoefPrior] = UniformBox(-20.0, 20.0)
    phi: UniformBox | Fixed | None = None

    def coef_priors(self, k: int) -> list:
        if isinstance(self.beta, (UniformBox, NormalPrior, JewellConjugate)):
            return [self.beta] * k
        priors = list(self.beta)
        if len(priors) != k:
            raise ValueError(f"{len(priors)} coefficient priors for {k} coefficients")
        return priors

    def dispersion(self, family) -> UniformBox | Fixed:
        fixed = family.dispersion_fixed
        phi = self.phi
        if phi is None:
            return Fixed(fixed) if fixed is not None else UniformBox(0.0, 1000.0)
        if fixed is not None and not (isinstance(phi, Fixed) and phi.value == fixed):
            raise ValueError(f"{family.name} requires dispersion fixed at {fixed}")
        if isinstance(phi, UniformBox) and phi.lo < 0:
            raise ValueError("dispersion prior must live on (0, inf)")
        return phi

    def log_prior(self, beta, phi, family) -> float:
        total = 0.0
        for b, pr in zip(beta, self.coef_priors(len(beta))):
            total += pr.logpdf(float(b), family)
            if total == -math.inf:
                return total
        disp = self.dispersion(family)
        if isinstance(disp, Fixed):
            return total if phi == disp.value else -math.inf
        return total + disp.logpdf(float(phi))


@dataclass(frozen=True)
class McmcConfig:
    chains: int = 3
    warmup: int = 2000
    kept: int = 28000
    seed: int = 2019
    target_accept: float = 0.234

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 0 or self.kept < 1:
            raise ValueError("chains and kept must be positive, warmup nonnegative")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class PosteriorDraws:
    """Kept MCMC draws, shape (chains, kept, p + 2); the last column is phi."""

    chains: np.ndarray
    names: tuple
    warmup: int = 0
    seed: int | None = None
    acceptance_rates: np.ndarray = field(default_factory=lambda: np.array([]))
    rhat: np.ndarray | None = None
    ess: np.ndarray | None = None

    def __post_init__(self):
        self.chains = np.asarray(self.chains, dtype=float)
        if self.chains.ndim != 3:
            raise ValueError("chains must have shape (chains, draws, parameters)")
        if self.chains.shape[2] != len(self.names):
            raise ValueError("names must match the parameter axis")

    @property
    def n_chains(self) -> int:
        return self.chains.shape[0]

    @property
    def n_kept(self) -> int:
        return self.chains.shape[1]

    def flat(self) -> np.ndarray:
        return self.chains.reshape(-1, self.chains.shape[2])

    @property
    def beta(self) -> np.ndarray:
        return self.flat()[:, :-1]

    @property
    def phi(self) -> np.ndarray:
        return self.flat()[:, -1]

    def summary(self) -> dict:
        flat = self.flat()
        return {
            name: (float(flat[:, j].mean()), float(flat[:, j].std(ddof=1)) if len(flat) > 1 else 0.0)
            for j, name in enumerate(self.names)
        }


# ---------------------------------------------------------------------------
# log posterior


def log_likelihood_fn(spec: GlmSpec, y) -> Callable[[np.ndarray, float], float]:
    """Fast log f(y | beta, phi) with validation done once up front.

    Returns ``-inf`` when the linear predictor leaves the mean domain.
    """
    y = np.asarray(y, dtype=float)
    mask = active_mask(spec, y, warn=False)
    X = spec.design[mask]
    w = spec.weights[mask]
    yy = y[mask]
    kind = spec.family.kind
    link = spec.link
    log_y = np.log(yy) if kind in (Kind.GAMMA, Kind.INVERSE_GAUSSIAN) else None
    sum_log_y = float(log_y.sum()) if log_y is not None else 0.0
    if kind is Kind.POISSON:
        k = w * yy
        const = float(np.sum(special.xlogy(k, w) - special.gammaln(k + 1.0)))

    def loglik(beta, phi) -> float:
        eta = X @ beta
        if link is Link.LOG:
            if eta.max(initial=-np.inf) > 700.0:
                return -math.inf
            mu = np.exp(eta)
        elif link is Link.IDENTITY:
            mu = eta
        else:
            with np.errstate(divide="ignore"):
                mu = 1.0 / eta
        if kind is Kind.NORMAL:
            if not np.all(np.isfinite(mu)):
                return -math.inf
            r = yy - mu
            return float(-0.5 * np.sum(np.log(2 * np.pi * phi / w)) - np.sum(w * r * r) / (2 * phi))
        if not np.all(mu > 0) or not np.all(np.isfinite(mu)):
            return -math.inf
        if kind is Kind.POISSON:
            return float(np.sum(special.xlogy(k, mu) - w * mu) + const)
        if kind is Kind.GAMMA:
            s = w / phi
            val = np.sum(s * np.log(s) - s * np.log(mu) - s * yy / mu - special.gammaln(s) + (s - 1.0) * log_y)
            return float(val)
        r = yy - mu
        return float(
            -0.5 * np.sum(np.log(2 * np.pi * phi / w)) - 1.5 * sum_log_y
            - np.sum(w * r * r / (mu * mu * yy)) / (2 * phi)
        )

    return loglik


def log_posterior(spec: GlmSpec, prior: PriorSpec, y, beta, phi) -> float:
    """log f(y | beta, phi) + log pi(beta, phi), up to a constant.

    Never NaN: every rejection (outside prior support, outside the mean
    domain, nonpositive phi) is ``-inf``.
    """
    beta = np.asarray(beta, dtype=float).ravel()
    if not np.all(np.isfinite(beta)) or not (np.isfinite(phi) and phi > 0):
        return -math.inf
    lp = prior.log_prior(beta, phi, spec.family)
    if lp == -math.inf:
        return lp
    val = lp + log_likelihood_fn(spec, y)(beta, phi)
    return val if not math.isnan(val) else -math.inf


# ---------------------------------------------------------------------------
# adaptive random-walk Metropolis


def adaptive_metropolis(
    logp: Callable[[np.ndarray], float],
    x0,
    cov0,
    warmup: int,
    kept: int,
    rng: np.random.Generator,
    target_accept: float = 0.234,
):
    """Random-walk Metropolis with proposal adaptation confined to warmup.

    During warmup the proposal covariance moves from ``cov0`` to the running
    sample covariance times 2.38^2/d (plus 1e-6 jitter), and a global scale
    is tuned by Robbins-Monro toward ``target_accept``.  Both are frozen
    when warmup ends, so kept draws come from a fixed Metropolis kernel.

    Returns
    -------
    samples : ndarray, shape (kept, d)
    acceptance : float
        Acceptance rate over the kept phase.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    lp = logp(x)
    if not np.isfinite(lp):
        raise SamplerInitError("starting point has zero posterior density")
    base = 2.38**2 / d
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=float))
    chol = np.linalg.cholesky(base * cov0 + 1e-12 * np.eye(d))
    log_scale = 0.0
    acc_start = warmup // 10
    use_emp = max(warmup // 4, 20 * d)
    n_acc = 0
    mean = np.zeros(d)
    m2 = np.zeros((d, d))
    total = warmup + kept
    out = np.empty((kept, d))
    accepted = 0
    frozen_scale = 1.0
    block = 1024
    for start in range(0, total, block):
        stop = min(start + block, total)
        z = rng.standard_normal((stop - start, d))
        logu = np.log(rng.random(stop - start))
        for i in range(start, stop):
            scale = math.exp(log_scale) if i < warmup else frozen_scale
            prop = x + scale * (chol @ z[i - start])
            lq = logp(prop)
            diff = lq - lp
            ok = logu[i - start] < diff
            if ok:
                x, lp = prop, lq
            if i >= warmup:
                out[i - warmup] = x
                accepted += ok
                continue
            alpha = 1.0 if diff >= 0 else math.exp(diff)
            log_scale += (alpha - target_accept) / (i + 1) ** 0.6
            if i >= acc_start:
                n_acc += 1
                delta = x - mean
                mean += delta / n_acc
                m2 += np.outer(delta, x - mean)
                if n_acc >= use_emp and n_acc % 50 == 0:
                    try:
                        chol = np.linalg.cholesky(base * (m2 / (n_acc - 1) + 1e-6 * np.eye(d)))
                    except np.linalg.LinAlgError:
                        pass
            if i == warmup - 1:
                frozen_scale = math.exp(log_scale)
    return out, accepted / kept


def _initial_state(spec: GlmSpec, prior: PriorSpec, y):
    coef_priors = prior.coef_priors(spec.design.shape[1])
    disp = prior.dispersion(spec.family)
    k = spec.design.shape[1]
    try:
        fit = fit_irls(spec, y)
        beta = fit.beta.copy()
        mu = fit.mu
        mask = active_mask(spec, y, warn=False)
        gp = spec.link.derivative(mu[mask])
        wt = spec.weights[mask] / (edf.variance(spec.family, mu[mask]) * gp**2)
        X = spec.design[mask]
        phi0 = fit.phi_deviance if fit.phi_deviance and fit.phi_deviance > 0 else 1.0
        info = X.T @ (X * wt[:, None])
        cov_beta = np.linalg.inv(info) * phi0
        n_active = int(mask.sum())
    except (CredibilityError, np.linalg.LinAlgError):
        beta = np.zeros(k)
        phi0 = 1.0
        cov_beta = 0.01 * np.eye(k)
        n_active = spec.m
    beta = np.array([pr.clip(b) for b, pr in zip(beta, coef_priors)])
    if isinstance(disp, Fixed):
        return beta, disp.value, cov_beta
    phi0 = disp.clip(phi0)
    cov = np.zeros((k + 1, k + 1))
    cov[:k, :k] = cov_beta
    cov[k, k] = 2.0 / max(n_active - k, 1)
    return np.append(beta, math.log(phi0)), phi0, cov


def _run_chain(args):
    spec, prior, y, warmup, kept, seed_seq, target_accept, x0, cov0, fixed_phi = args
    rng = np.random.default_rng(seed_seq)
    loglik = log_likelihood_fn(spec, y)
    family = spec.family
    k = spec.design.shape[1]

    if fixed_phi is not None:
        def logp(theta):
            lp = prior.log_prior(theta, fixed_phi, family)
            if lp == -math.inf:
                return lp
            v = lp + loglik(theta, fixed_phi)
            return v if not math.isnan(v) else -math.inf
    else:
        def logp(theta):
            t = theta[k]
            if t > 700.0:
                return -math.inf
            phi = math.exp(t)
            lp = prior.log_prior(theta[:k], phi, family)
            if lp == -math.inf or phi <= 0:
                return -math.inf
            # Jacobian of phi = exp(t).
            v = lp + loglik(theta[:k], phi) + t
            return v if not math.isnan(v) else -math.inf

    # Jitter the start so chains are not identical; fall back to x0 itself.
    chol = np.linalg.cholesky(np.atleast_2d(cov0) + 1e-12 * np.eye(len(x0)))
    start = None
    for _ in range(100):
        cand = x0 + 0.5 * chol @ rng.standard_normal(len(x0))
        if np.isfinite(logp(cand)):
            start = cand
            break
    if start is None:
        if not np.isfinite(logp(x0)):
            raise SamplerInitError("every initial point has zero posterior density")
        start = x0
    samples, acc = adaptive_metropolis(logp, start, cov0, warmup, kept, rng, target_accept)
    if fixed_phi is not None:
        phi_col = np.full((kept, 1), fixed_phi)
        return np.hstack([samples, phi_col]), acc
    samples[:, k] = np.exp(samples[:, k])
    return samples, acc


def run_mcmc(spec: GlmSpec, prior: PriorSpec, y, config: McmcConfig = McmcConfig(), workers: int = 1) -> PosteriorDraws:
    """Sample pi(beta, phi | y) with independent adaptive Metropolis chains.

    Each chain gets its own generator spawned from ``config.seed``, so the
    output is identical whether chains run sequentially or on ``workers``
    processes.
    """
    y = np.asarray(y, dtype=float)
    active_mask(spec, y)  # validate once, emitting any exclusion warning
    x0, _, cov0 = _initial_state(spec, prior, y)
    disp = prior.dispersion(spec.family)
    fixed_phi = disp.value if isinstance(disp, Fixed) else None
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    jobs = [
        (spec, prior, y, config.warmup, config.kept, s, config.target_accept, x0, cov0, fixed_phi)
        for s in seeds
    ]
    if workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, config.chains)) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    names = tuple(spec.column_names) + ("phi",)
    draws = PosteriorDraws(
        chains=np.stack([r[0] for r in results]),
        names=names,
        warmup=config.warmup,
        seed=config.seed,
        acceptance_rates=np.array([r[1] for r in results]),
    )
    if draws.n_chains >= 2 and draws.n_kept >= 100:
        draws.rhat, draws.ess = diagnostics(draws)
        bad = [n for n, r in zip(names, draws.rhat) if r > RHAT_WARN]
        if bad:
            warnings.warn(f"split-Rhat above {RHAT_WARN} for: {', '.join(bad)}", stacklevel=2)
    else:
        draws.ess = np.array([effective_sample_size(draws.chains[:, :, j]) for j in range(len(names))])
    return draws


# ---------------------------------------------------------------------------
# diagnostics


def _constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x.flat[0]))


def split_rhat(x) -> float:
    """Split-Rhat for one parameter; ``x`` has shape (chains, draws)."""
    x = np.asarray(x, dtype=float)
    c, n = x.shape
    if c < 2 or n < 4:
        raise InsufficientDrawsError("split-Rhat needs at least 2 chains")
    half = n // 2
    parts = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    if _constant(parts):
        return 1.0
    n2 = half
    means = parts.mean(axis=1)
    W = parts.var(axis=1, ddof=1).mean()
    B = n2 * means.var(ddof=1)
    var_plus = (n2 - 1) / n2 * W + B / n2
    if W == 0:
        return math.inf
    return float(math.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=-1)
    ac = np.fft.irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return ac / n


def effective_sample_size(x) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence, capped at c*n."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c, n = x.shape
    total = c * n
    if _constant(x):
        return float(total)
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    B_over_n = x.mean(axis=1).var(ddof=1) if c > 1 else 0.0
    var_plus = W * (n - 1) / n + B_over_n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforcing monotonicity.
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(max(total, 10)))
    return float(min(total / tau, total))


def diagnostics(draws: PosteriorDraws):
    """Per-parameter (split-Rhat, ESS).  Needs >= 2 chains of >= 100 draws."""
    if draws.n_chains < 2 or draws.n_kept < 100:
        raise InsufficientDrawsError(
            f"diagnostics need >= 2 chains of >= 100 draws, got {draws.n_chains} x {draws.n_kept}"
        )
    k = draws.chains.shape[2]
    rhat = np.array([split_rhat(draws.chains[:, :, j]) for j in range(k)])
    ess = np.array([effective_sample_size(draws.chains[:, :, j]) for j in range(k)])
    return rhat, ess


# ---------------------------------------------------------------------------
# posterior predictive


def _means_of(spec: GlmSpec, betas: np.ndarray) -> np.ndarray:
    eta = betas @ spec.design.T
    return inverse_link_map(spec, eta)


def predictive_mean(spec: GlmSpec, draws: PosteriorDraws | np.ndarray, chunk: int = 20000) -> np.ndarray:
    """E[Y] = posterior average of G^{-1}(X beta), one entry per class."""
    betas = draws.beta if isinstance(draws, PosteriorDraws) else np.atleast_2d(draws)
    if betas.shape[0] == 0:
        raise ValueError("no draws")
    total = np.zeros(spec.m)
    for s in range(0, betas.shape[0], chunk):
        total += _means_of(spec, betas[s:s + chunk]).sum(axis=0)
    return total / betas.shape[0]


def predictive_draws(spec: GlmSpec, draws: PosteriorDraws, n_rep: int, rng: np.random.Generator) -> np.ndarray:
    """Posterior predictive response vectors, shape (n_rep, m).

    Each replicate resamples one posterior draw and then draws
    y_i ~ ED(mu_i, phi / w_i).  Zero-weight classes carry their mean.
    """
    flat = draws.flat()
    idx = rng.integers(0, flat.shape[0], size=n_rep)
    mu = _means_of(spec, flat[idx, :-1])
    phi = flat[idx, -1][:, None]
    out = mu.copy()
    pos = spec.weights > 0
    if pos.any():
        out[:, pos] = edf.sample(spec.family, mu[:, pos], phi, spec.weights[pos], rng=rng)
    return out


# ---------------------------------------------------------------------------
# draws CSV: one row per kept draw, columns chain, iter, beta..., phi


def write_draws_csv(draws: PosteriorDraws, stream, header_lines: Sequence[str] = ()) -> None:
    for line in header_lines:
        stream.write(f"# {line}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["chain", "iter", *draws.names])
    for c in range(draws.n_chains):
        block = draws.chains[c]
        for i in range(draws.n_kept):
            writer.writerow([c, i, *(repr(float(v)) for v in block[i])])


def read_draws_csv(stream) -> PosteriorDraws:
    lines = [ln for ln in stream if ln.strip() and not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("draws file is empty") from None
    if header[:2] != ["chain", "iter"] or header[-1] != "phi":
        raise DataError("draws file must have columns chain, iter, coefficients..., phi")
    rows = [[float(v) for v in r] for r in reader]
    if not rows:
        raise DataError("draws file has no draws")
    arr = np.array(rows)
    chain_ids = arr[:, 0].astype(int)
    n_chains = chain_ids.max() + 1
    per = np.bincount(chain_ids, minlength=n_chains)
    if np.any(per != per[0]):
        raise DataError("chains in the draws file have unequal lengths")
    order = np.lexsort((arr[:, 1], chain_ids))
    vals = arr[order, 2:].reshape(n_chains, per[0], -1)
    draws = PosteriorDraws(chains=vals, names=tuple(header[2:]))
    if draws.n_chains >= 2 and draws.n_kept >= 100:
        draws.rhat, draws.ess = diagnostics(draws)
    return draws
