"""Smooth additive Cox survival modelling via Poisson pseudo-data.

Core pieces: counting-process data handling with left truncation, spline
and frailty model terms, penalized IRLS with LAML smoothing-parameter
estimation, boosted forward / penalized backward model selection, and
hazard-threshold (breakpoint) estimation with Bayesian credible intervals.
"""

__version__ = "0.1.0"

from .errors import DataValidationError, NumericalError, SmoothCoxError
from .survdata import CohortTable, RiskSet, SubjectInterval, build_risk_sets, load_cohort, write_cohort
from .smooths import ModelSpec, PenalizedBlock, PenalizedDesign, TermSpec
from .coxpois import PseudoData, expand_pseudo, partial_loglik
from .pirls import FitResult, laml_value, optimize_rho, pirls_fit, posterior_sample
from .kmcurve import KMCurve, km_fit
from .simgen import SimSpec, simulate_cohort
from .boostsel import SelectConfig, select_model
from .threshold import BreakpointResult, estimate_breakpoint

__all__ = [
    "__version__",
    "SmoothCoxError",
    "DataValidationError",
    "NumericalError",
    "CohortTable",
    "SubjectInterval",
    "RiskSet",
    "load_cohort",
    "write_cohort",
    "build_risk_sets",
    "TermSpec",
    "ModelSpec",
    "PenalizedBlock",
    "PenalizedDesign",
    "PseudoData",
    "expand_pseudo",
    "partial_loglik",
    "pirls_fit",
    "laml_value",
    "optimize_rho",
    "posterior_sample",
    "FitResult",
    "KMCurve",
    "km_fit",
    "SimSpec",
    "simulate_cohort",
    "SelectConfig",
    "select_model",
    "BreakpointResult",
    "estimate_breakpoint",
]
