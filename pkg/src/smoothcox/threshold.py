"""Hazard-threshold (breakpoint) estimation from a fitted smooth.

The threshold is the covariate value at which the fitted smooth bends
upward most sharply: the argmax of the finite-difference second derivative
along a grid.  Candidate grid points are restricted to where the fitted
slope is positive, so a sharp bend in a falling or flat region does not
count; the restriction can be switched off.  Credible intervals come from
re-running the argmax on posterior coefficient draws.  When the credible
interval spans (almost) the whole covariate range, or when most posterior
draws have no rising region at all, there is no evidence of a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .pirls import FitResult, posterior_sample
from .smooths import PenalizedBlock

# "Covers the entire covariate range" is operationalized as both credible
# bounds reaching within this fraction of the grid range of the respective
# ends: the empirical 2.5%/97.5% quantiles of a diffuse argmax sit just
# inside the range, never exactly at it.
FULL_RANGE_END_MARGIN = 0.15

TIE_REL_TOL = 1e-9


@dataclass(frozen=True)
class BreakpointResult:
    term: str
    psi_hat: float
    grid: np.ndarray
    f_hat: np.ndarray
    f2_hat: np.ndarray
    psi_samples: np.ndarray
    ci_low: float
    ci_high: float
    no_evidence: bool
    h: float
    tie: bool
    n_draws_without_rise: int
    restrict_positive_slope: bool

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "psi_hat": float(self.psi_hat),
            "ci_low": float(self.ci_low),
            "ci_high": float(self.ci_high),
            "no_evidence": bool(self.no_evidence),
            "h": float(self.h),
            "tie": bool(self.tie),
            "n_draws_without_rise": int(self.n_draws_without_rise),
            "restrict_positive_slope": bool(self.restrict_positive_slope),
            "b_samples": int(self.psi_samples.size),
        }


def second_derivative_matrix(block: PenalizedBlock, grid: np.ndarray, h: float) -> np.ndarray:
    """Rows map the term's coefficients to f''(g) by central differences.

    Every grid point must sit at least h inside the covariate range seen at
    build time, so no finite-difference stencil leaves the data.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(grid - h < block.x_min - 1e-12) or np.any(grid + h > block.x_max + 1e-12):
        raise DataValidationError(
            f"term {block.term.name!r}: grid point within h={h} of the covariate range boundary"
        )
    return (block.evaluate(grid + h) - 2.0 * block.evaluate(grid) + block.evaluate(grid - h)) / h**2


def _argmax_with_slope_rule(f2: np.ndarray, f1: np.ndarray, restrict: bool) -> tuple[int, bool]:
    """Index of the best candidate point and whether a rising region existed."""
    if restrict:
        mask = f1 > 0.0
        if not np.any(mask):
            return int(np.argmax(f2)), False
        masked = np.where(mask, f2, -np.inf)
        return int(np.argmax(masked)), True
    return int(np.argmax(f2)), True


def estimate_breakpoint(
    fit: FitResult,
    term: str,
    B: int = 1000,
    seed: int = 0,
    grid_size: int = 201,
    restrict_positive_slope: bool = True,
) -> BreakpointResult:
    """Estimate the threshold for one fitted spline term, with a Bayesian CI.

    The grid has ``grid_size`` equally spaced points over the covariate
    range inset by h = range/100 on both sides.  Per posterior draw the same
    argmax rule is applied; the 2.5% and 97.5% empirical quantiles of the
    draws form the credible interval.
    """
    block, sl = fit.design.block_for(term)
    if block.term.kind != "spline":
        raise DataValidationError(f"term {term!r} is not a spline term")
    span = block.x_max - block.x_min
    if span <= 0:
        raise DataValidationError(f"term {term!r}: degenerate covariate range")
    h = span / 100.0
    grid = np.linspace(block.x_min + h, block.x_max - h, grid_size)

    D2 = second_derivative_matrix(block, grid, h)
    D1 = (block.evaluate(grid + h) - block.evaluate(grid - h)) / (2.0 * h)
    Xg = block.evaluate(grid)

    beta_term = fit.beta[sl]
    f_hat = Xg @ beta_term
    f2_hat = D2 @ beta_term
    f1_hat = D1 @ beta_term

    idx, had_rise = _argmax_with_slope_rule(f2_hat, f1_hat, restrict_positive_slope)
    psi_hat = float(grid[idx])
    candidates = f2_hat if not (restrict_positive_slope and had_rise) else np.where(f1_hat > 0, f2_hat, -np.inf)
    top = candidates[idx]
    tie = int(np.sum(candidates >= top - TIE_REL_TOL * max(abs(top), 1.0))) > 1

    draws = posterior_sample(fit, B, seed)[:, sl]
    f2_all = draws @ D2.T
    f1_all = draws @ D1.T
    psi_samples = np.empty(B)
    n_without = 0
    for b in range(B):
        j, rise = _argmax_with_slope_rule(f2_all[b], f1_all[b], restrict_positive_slope)
        if not rise:
            n_without += 1
        psi_samples[b] = grid[j]
    ci_low, ci_high = (float(q) for q in np.quantile(psi_samples, [0.025, 0.975]))

    margin = FULL_RANGE_END_MARGIN * (grid[-1] - grid[0])
    covers_range = ci_low <= grid[0] + margin and ci_high >= grid[-1] - margin
    no_evidence = bool(covers_range or n_without >= B / 2.0)

    return BreakpointResult(
        term=term,
        psi_hat=psi_hat,
        grid=grid,
        f_hat=f_hat,
        f2_hat=f2_hat,
        psi_samples=psi_samples,
        ci_low=ci_low,
        ci_high=ci_high,
        no_evidence=no_evidence,
        h=h,
        tie=tie,
        n_draws_without_rise=n_without,
        restrict_positive_slope=restrict_positive_slope,
    )


def breakpoint_curve_csv(result: BreakpointResult) -> str:
    """Curve, second derivative and CI bounds for external plotting."""
    lines = ["x,f_hat,f2_hat,in_ci"]
    for x, f, f2 in zip(result.grid, result.f_hat, result.f2_hat):
        inside = int(result.ci_low <= x <= result.ci_high and not result.no_evidence)
        lines.append(f"{x!r},{f!r},{f2!r},{inside}")
    return "\n".join(lines) + "\n"
