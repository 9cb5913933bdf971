"""Classical linear credibility baselines.

Jewell's univariate credibility premium, the conjugate hyperparameter update
for the GLM-shaped conjugate prior, and the two-class feasibility check for
class-wise (Type 2) linear credibility under a log link.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "JewellPrior",
    "CredibilityBlend",
    "jewell_premium",
    "conjugate_update",
    "Type2Verdict",
    "type2_feasible_2class",
    "type2_feasible_grid",
]


@dataclass(frozen=True)
class JewellPrior:
    n0: float
    x0: float

    def __post_init__(self):
        if not self.n0 > 0:
            raise ValueError("n0 must be positive")


@dataclass(frozen=True)
class CredibilityBlend:
    z: float
    premium: float


def jewell_premium(prior: JewellPrior, phi: float, n: float, ybar: float) -> CredibilityBlend:
    """Blend the manual premium ``x0`` with the sample mean, z = n / (phi n0 + n)."""
    if not phi > 0:
        raise ValueError("phi must be positive")
    if n < 0:
        raise ValueError("n must be nonnegative")
    z = n / (phi * prior.n0 + n)
    return CredibilityBlend(z=z, premium=(1.0 - z) * prior.x0 + z * ybar)


def conjugate_update(n0: float, x0, phi: float, ybar):
    """Posterior hyperparameters (n0 + 1/phi, (ybar + phi n0 x0) / (phi n0 + 1))."""
    x0 = np.asarray(x0, dtype=float)
    ybar = np.asarray(ybar, dtype=float)
    if x0.shape != ybar.shape:
        raise ValueError(f"x0 has shape {x0.shape} but ybar has shape {ybar.shape}")
    if not n0 > 0 or not phi > 0:
        raise ValueError("n0 and phi must be positive")
    a = phi * n0
    return n0 + 1.0 / phi, (ybar + a * x0) / (a + 1.0)


@dataclass(frozen=True)
class Type2Verdict:
    feasible: bool
    z1: float | None = None
    z2: float | None = None
    beta: float | None = None


def type2_feasible_2class(ybar, manual) -> Type2Verdict:
    """Can Z ybar + (I - Z) M lie on the curve {(1, exp(b))}?

    This is the design X = (0, 1)^T with a log link.  The blend sweeps the
    axis-aligned rectangle spanned by ``ybar`` and ``manual``; the model
    curve is the vertical ray x = 1, y > 0.  Ties in ``z1`` resolve to the
    smallest feasible value.
    """
    y1, y2 = (float(v) for v in ybar)
    m1, m2 = (float(v) for v in manual)
    if min(y1, y2, m1, m2) <= 0:
        raise ValueError("sample means and manual premiums must be positive")
    if not min(y1, m1) <= 1.0 <= max(y1, m1):
        return Type2Verdict(False)
    if y1 == m1:
        z1 = 0.0
    else:
        # 1 = z1 y1 + (1 - z1) m1
        z1 = min(max((1.0 - m1) / (y1 - m1), 0.0), 1.0)
    # Second coordinate is positive for every z2; take the manual end.
    z2 = 0.0
    beta = math.log(z2 * y2 + (1.0 - z2) * m2)
    return Type2Verdict(True, z1=z1, z2=z2, beta=beta)


def type2_feasible_grid(ybar, manual, n: int = 401, beta_range=(-30.0, 30.0), tol=None) -> bool:
    """Brute-force oracle for :func:`type2_feasible_2class`.

    Searches (z1, z2, b) on a grid over [0,1]^2 x ``beta_range`` for a point
    where the blend matches (1, exp(b)) to within the grid resolution.
    """
    y = np.asarray(ybar, dtype=float)
    M = np.asarray(manual, dtype=float)
    z = np.linspace(0.0, 1.0, n)
    b = np.linspace(beta_range[0], beta_range[1], 4 * n + 1)
    first = z * y[0] + (1 - z) * M[0]
    second = z * y[1] + (1 - z) * M[1]
    if tol is None:
        tol = 1.01 * abs(y[0] - M[0]) / (n - 1) + 1e-12
    if not np.any(np.abs(first - 1.0) <= tol):
        return False
    eb = np.exp(b)
    # For each z2, distance to the nearest exp(b) on the grid, relative scale.
    idx = np.clip(np.searchsorted(eb, second), 1, eb.size - 1)
    gap = np.minimum(np.abs(eb[idx] - second), np.abs(eb[idx - 1] - second))
    step = np.diff(b)[0]
    return bool(np.any(gap <= second * (math.exp(step) - 1.0)))
