"""Bayesian entropic credibility premiums for generalized linear models."""

from .credibility import JewellPrior, conjugate_update, jewell_premium, type2_feasible_2class
from .edf import GAMMA, INVERSE_GAUSSIAN, NORMAL, POISSON, Family, WeightedObs, get_family
from .entropic import (
    EntropicResult,
    dispersion_general,
    dispersion_proper,
    entropic_beta,
    entropic_estimate,
    entropic_premium,
)
from .glm import GlmFit, GlmSpec, Link, fit_irls, total_deviance
from .posterior import (
    Fixed,
    McmcConfig,
    NormalPrior,
    PosteriorDraws,
    PriorSpec,
    UniformBox,
    predictive_mean,
    run_mcmc,
)

__all__ = [
    "JewellPrior",
    "conjugate_update",
    "jewell_premium",
    "type2_feasible_2class",
    "GAMMA",
    "INVERSE_GAUSSIAN",
    "NORMAL",
    "POISSON",
    "Family",
    "WeightedObs",
    "get_family",
    "EntropicResult",
    "dispersion_general",
    "dispersion_proper",
    "entropic_beta",
    "entropic_estimate",
    "entropic_premium",
    "GlmFit",
    "GlmSpec",
    "Link",
    "fit_irls",
    "total_deviance",
    "Fixed",
    "McmcConfig",
    "NormalPrior",
    "PosteriorDraws",
    "PriorSpec",
    "UniformBox",
    "predictive_mean",
    "run_mcmc",
]

__version__ = "0.1.0"
