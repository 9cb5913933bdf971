"""Exponential dispersion family primitives.

Every family here is a regular reproductive EDF written in the mean-value
parameterization

    f(y | mu, phi) = c(y, phi) * exp(-d(y, mu) / (2 phi)),

with ``phi`` replaced by ``phi / w`` for an observation carrying weight ``w``.
All functions broadcast over numpy arrays.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special

from .errors import DomainError, UnsupportedFamilyError

__all__ = [
    "Kind",
    "Family",
    "WeightedObs",
    "NORMAL",
    "POISSON",
    "GAMMA",
    "INVERSE_GAUSSIAN",
    "get_family",
    "variance",
    "unit_deviance",
    "deviance_parts",
    "log_normalizer",
    "log_density",
    "aggregate",
    "e_phi",
    "log_e_phi",
    "sample",
]


class Kind(str, enum.Enum):
    NORMAL = "normal"
    POISSON = "poisson"
    GAMMA = "gamma"
    INVERSE_GAUSSIAN = "inverse_gaussian"


@dataclass(frozen=True)
class Family:
    """A response distribution together with its cumulant function.

    ``cumulant``, ``mean_of`` and ``canonical_of`` are kappa, its derivative
    and the inverse of its derivative.  ``dispersion_fixed`` is set for
    families (Poisson) whose dispersion is not a free parameter.
    """

    kind: Kind

    @property
    def name(self) -> str:
        return self.kind.value

    @property
    def dispersion_fixed(self) -> float | None:
        return 1.0 if self.kind is Kind.POISSON else None

    @property
    def is_proper(self) -> bool:
        return self.kind is not Kind.POISSON

    @property
    def mean_domain(self) -> tuple[float, float]:
        if self.kind is Kind.NORMAL:
            return (-math.inf, math.inf)
        return (0.0, math.inf)

    @property
    def canonical_link(self) -> str:
        return {
            Kind.NORMAL: "identity",
            Kind.POISSON: "log",
            Kind.GAMMA: "inverse",
            Kind.INVERSE_GAUSSIAN: "inverse_squared",
        }[self.kind]

    @property
    def default_link(self) -> str:
        return "identity" if self.kind is Kind.NORMAL else "log"

    def cumulant(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind is Kind.NORMAL:
            return theta**2 / 2.0
        if self.kind is Kind.POISSON:
            return np.exp(theta)
        if self.kind is Kind.GAMMA:
            # The additive constant is immaterial for the likelihood; it fixes
            # the split of d into d1 + d2 so that d2(1, mu) = d(1, mu).
            return -np.log(-theta) - 1.0
        return -np.sqrt(-2.0 * theta)

    def mean_of(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind is Kind.NORMAL:
            return theta
        if self.kind is Kind.POISSON:
            return np.exp(theta)
        if self.kind is Kind.GAMMA:
            return -1.0 / theta
        return 1.0 / np.sqrt(-2.0 * theta)

    def canonical_of(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind is Kind.NORMAL:
            return mu
        if self.kind is Kind.POISSON:
            return np.log(mu)
        if self.kind is Kind.GAMMA:
            return -1.0 / mu
        return -1.0 / (2.0 * mu**2)

    def in_domain(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if self.kind is Kind.NORMAL:
            return np.isfinite(mu)
        return np.isfinite(mu) & (mu > 0)

    def in_support(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.kind is Kind.NORMAL:
            return np.isfinite(y)
        if self.kind is Kind.POISSON:
            return np.isfinite(y) & (y >= 0)
        return np.isfinite(y) & (y > 0)

    def check_dispersion(self, phi) -> None:
        phi = np.asarray(phi, dtype=float)
        if np.any(~(phi > 0)) or np.any(~np.isfinite(phi)):
            raise DomainError(f"dispersion must be positive and finite, got {phi}")
        if self.dispersion_fixed is not None and np.any(phi != self.dispersion_fixed):
            raise DomainError(
                f"{self.name} has fixed dispersion {self.dispersion_fixed}, got {phi}"
            )


NORMAL = Family(Kind.NORMAL)
POISSON = Family(Kind.POISSON)
GAMMA = Family(Kind.GAMMA)
INVERSE_GAUSSIAN = Family(Kind.INVERSE_GAUSSIAN)

_ALIASES = {
    "normal": NORMAL,
    "gaussian": NORMAL,
    "poisson": POISSON,
    "gamma": GAMMA,
    "inverse_gaussian": INVERSE_GAUSSIAN,
    "inverse-gaussian": INVERSE_GAUSSIAN,
    "inversegaussian": INVERSE_GAUSSIAN,
    "ig": INVERSE_GAUSSIAN,
}


def get_family(name: str | Family) -> Family:
    if isinstance(name, Family):
        return name
    try:
        return _ALIASES[name.strip().lower()]
    except KeyError:
        raise UnsupportedFamilyError(f"unknown family {name!r}") from None


@dataclass(frozen=True)
class WeightedObs:
    y: float
    w: float


def _require(mask, what: str, family: Family) -> None:
    if not np.all(mask):
        raise DomainError(f"{what} outside the domain of the {family.name} family")


def _check_pair(family: Family, y, mu):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    _require(family.in_support(y), "response", family)
    _require(family.in_domain(mu), "mean", family)
    return y, mu


def variance(family: Family, mu):
    """Unit variance function V(mu)."""
    mu = np.asarray(mu, dtype=float)
    if family.kind is Kind.NORMAL:
        return np.ones_like(mu)
    if family.kind is Kind.POISSON:
        return mu
    if family.kind is Kind.GAMMA:
        return mu**2
    return mu**3


def unit_deviance(family: Family, y, mu):
    """Unit deviance d(y, mu) >= 0, zero iff ``y == mu``.

    Poisson responses may be 0, using the convention 0 * log(0) = 0.
    """
    y, mu = _check_pair(family, y, mu)
    if family.kind is Kind.NORMAL:
        d = (y - mu) ** 2
    elif family.kind is Kind.POISSON:
        d = 2.0 * (special.xlogy(y, y) - special.xlogy(y, mu) - (y - mu))
    elif family.kind is Kind.GAMMA:
        r = y / mu
        d = 2.0 * (r - 1.0 - np.log(r))
    else:
        d = (y - mu) ** 2 / (y * mu**2)
    # Round-off can leave tiny negatives near y == mu.
    return np.maximum(d, 0.0)


def deviance_parts(family: Family, y, mu):
    """Split ``d(y, mu) = d1(y) + d2(y, mu)`` with ``d2`` affine in ``y``.

    Returns
    -------
    (d1, d2) : tuple of arrays
    """
    y, mu = _check_pair(family, y, mu)
    if family.kind is Kind.NORMAL:
        d1 = y**2
        d2 = mu**2 - 2.0 * y * mu
    elif family.kind is Kind.POISSON:
        d1 = 2.0 * (special.xlogy(y, y) - y)
        d2 = 2.0 * (mu - y * np.log(mu))
    elif family.kind is Kind.GAMMA:
        d1 = -2.0 * np.log(y)
        d2 = 2.0 * (y / mu + np.log(mu) - 1.0)
    else:
        d1 = 1.0 / y
        d2 = y / mu**2 - 2.0 / mu
    return d1, d2


def log_normalizer(family: Family, y, phi, w=1.0):
    """log c(y, phi / w), the normalizing term of the mean-value density."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    family.check_dispersion(phi)
    _require(family.in_support(y), "response", family)
    if np.any(w <= 0):
        raise DomainError("weights must be positive")
    disp = np.asarray(phi, dtype=float) / w
    if family.kind is Kind.NORMAL:
        # free of y, but shaped like it so sums over replicates stay honest
        return np.broadcast_to(-0.5 * np.log(2.0 * np.pi * disp), np.broadcast_shapes(y.shape, disp.shape)).copy()
    if family.kind is Kind.POISSON:
        k = w * y
        return special.xlogy(k, k) - k - special.gammaln(k + 1.0)
    if family.kind is Kind.GAMMA:
        return -np.log(y) + log_e_phi(family, disp)
    return -0.5 * np.log(2.0 * np.pi * disp * y**3)


def log_density(family: Family, y, mu, phi, w=1.0):
    """Log density of ED(mu, phi / w) at ``y``.

    For Poisson this is the log mass of ``w * y`` under Poisson(``w * mu``),
    which is the exposure-offset reading of a rate ``y`` observed over
    exposure ``w``.
    """
    d = unit_deviance(family, y, mu)
    disp = np.asarray(phi, dtype=float) / np.asarray(w, dtype=float)
    return log_normalizer(family, y, phi, w) - d / (2.0 * disp)


def aggregate(family: Family, obs: Sequence[WeightedObs]) -> WeightedObs:
    """Collapse observations sharing a mean into one weighted observation."""
    if not obs:
        raise DomainError("cannot aggregate an empty collection")
    y = np.array([o.y for o in obs], dtype=float)
    w = np.array([o.w for o in obs], dtype=float)
    if np.any(w < 0):
        raise DomainError("weights must be nonnegative")
    total = w.sum()
    if total <= 0:
        raise DomainError("total weight is zero")
    pos = w > 0
    _require(family.in_support(y[pos]), "response", family)
    if family.kind is Kind.POISSON:
        # Offset convention: y is a rate over exposure w, so w*y are counts.
        counts = (w * y).sum()
        return WeightedObs(float(counts / total), float(total))
    return WeightedObs(float((w[pos] * y[pos]).sum() / total), float(total))


def log_e_phi(family: Family, phi):
    """log e(phi) for the proper dispersion families."""
    phi = np.asarray(phi, dtype=float)
    if family.kind is Kind.POISSON:
        raise UnsupportedFamilyError("Poisson is not a proper dispersion model")
    if np.any(~(phi > 0)):
        raise DomainError("dispersion must be positive")
    if family.kind is Kind.GAMMA:
        k = 1.0 / phi
        return -k - special.gammaln(k) + k * np.log(k)
    return -0.5 * np.log(phi)


def e_phi(family: Family, phi):
    return np.exp(log_e_phi(family, phi))


def _gamma_variates(shape, rng: np.random.Generator):
    """Standard gamma variates by Marsaglia-Tsang squeeze rejection."""
    shape = np.asarray(shape, dtype=float)
    flat = shape.ravel()
    boost = flat < 1.0
    a = np.where(boost, flat + 1.0, flat)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        x = rng.standard_normal(todo.size)
        u = rng.random(todo.size)
        v = (1.0 + c[todo] * x) ** 3
        ok = v > 0
        x2 = x * x
        squeeze = u < 1.0 - 0.0331 * x2 * x2
        vs = np.where(ok, v, 1.0)
        full = np.log(np.where(u > 0, u, 1e-300)) < 0.5 * x2 + d[todo] * (
            1.0 - vs + np.log(vs)
        )
        accept = ok & (squeeze | full)
        out[todo[accept]] = d[todo[accept]] * v[accept]
        todo = todo[~accept]
    if np.any(boost):
        u = rng.random(int(boost.sum()))
        out[boost] *= u ** (1.0 / flat[boost])
    return out.reshape(shape.shape)


def _inverse_gaussian_variates(mu, lam, rng: np.random.Generator):
    """Inverse Gaussian variates by the transformation-with-rejection method."""
    nu = rng.standard_normal(mu.shape)
    y = nu * nu
    muy = mu * y
    x = mu + mu * muy / (2.0 * lam) - mu / (2.0 * lam) * np.sqrt(
        4.0 * lam * muy + muy * muy
    )
    u = rng.random(mu.shape)
    return np.where(u <= mu / (mu + x), x, mu * mu / x)


def sample(family: Family, mu, phi, w=1.0, rng: np.random.Generator | None = None, size=None):
    """Draw from ED(mu, phi / w).

    ``mu``, ``phi`` and ``w`` broadcast against each other and ``size``.
    The caller owns ``rng``; ``None`` uses a fresh default generator.
    """
    if rng is None:
        rng = np.random.default_rng()
    family.check_dispersion(phi)
    mu = np.asarray(mu, dtype=float)
    _require(family.in_domain(mu), "mean", family)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise DomainError("weights must be positive")
    shape = np.broadcast_shapes(mu.shape, np.shape(phi), w.shape, () if size is None else tuple(np.atleast_1d(size)))
    mu = np.broadcast_to(mu, shape)
    w = np.broadcast_to(w, shape)
    disp = np.broadcast_to(np.asarray(phi, dtype=float), shape) / w
    if family.kind is Kind.NORMAL:
        out = mu + np.sqrt(disp) * rng.standard_normal(shape)
    elif family.kind is Kind.POISSON:
        out = rng.poisson(w * mu) / w
    elif family.kind is Kind.GAMMA:
        k = 1.0 / disp
        out = _gamma_variates(k, rng) * mu / k
    else:
        out = _inverse_gaussian_variates(mu, 1.0 / disp, rng)
    if out.ndim == 0:
        return float(out)
    return out
