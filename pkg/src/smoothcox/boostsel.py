"""Boost forward, penalise backward model selection.

Forward phase: component-wise gradient boosting over the candidate terms
that are not yet in the model, each represented by a fixed low-edf base
smoother.  Backward phase: refit with null-space shrinkage penalties on all
selectable terms and drop those whose effective degrees of freedom fall
below a threshold.  The two phases alternate until the selected set and the
AIC stop changing; the best-AIC iterate seen (including the minimal model)
is returned, so the loop can never end on a model worse than its starting
point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coxpois import PseudoData, expand_pseudo
from .errors import DataValidationError
from .modelbuild import blocks_from_pseudo, design_from_blocks
from .pirls import RHO_BOUND, FitResult, _penalty_groups, laml_from_fit, optimize_rho, pirls_fit
from .smooths import ModelSpec, PenalizedBlock
from .survdata import CohortTable

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class BaseSmoother:
    """Fixed hat-matrix smoother A = X (X'X + lambda_big S)^-1 X'.

    Stored as a factorization plus the block columns, never as a dense
    n x n matrix.
    """

    term_name: str
    X: np.ndarray
    chol: tuple
    lambda_big: float
    target_edf: float
    achieved_edf: float

    def apply(self, e: np.ndarray) -> np.ndarray:
        return self.X @ scipy.linalg.cho_solve(self.chol, self.X.T @ e, check_finite=False)


def _edf_for(G: np.ndarray, S: np.ndarray | None, lam: float) -> float:
    p = G.shape[0]
    A = G + (lam * S if S is not None else 0.0) + 1e-12 * np.eye(p)
    return float(np.trace(np.linalg.solve(A, G)))


def make_base_smoother(block: PenalizedBlock, target_edf: float = 4.0) -> BaseSmoother:
    """Calibrate lambda_big by bisection so trace(A) hits target_edf +/- 0.2.

    Blocks that cannot reach the target (few columns, or a trace floor above
    it) fall back to lambda_big = 0, with a warning in the non-bracketing
    case.
    """
    X = block.columns
    G = X.T @ X
    S = block.S_wiggle
    lam = 0.0
    lo, hi = 1e-8, 1e12
    if S is None or _edf_for(G, S, lo) <= target_edf + 0.2:
        lam = 0.0  # max achievable trace already at or below target
    elif _edf_for(G, S, hi) > target_edf + 0.2:
        warnings.warn(
            f"term {block.term.name!r}: base smoother bisection cannot bracket "
            f"target edf {target_edf}, using lambda_big = 0",
            stacklevel=2,
        )
        lam = 0.0
    else:
        for _ in range(200):
            mid = np.sqrt(lo * hi)
            val = _edf_for(G, S, mid)
            if abs(val - target_edf) <= 0.2:
                lam = mid
                break
            if val > target_edf:
                lo = mid
            else:
                hi = mid
        else:
            lam = np.sqrt(lo * hi)
    A = G + (lam * S if S is not None else 0.0)
    A[np.diag_indices_from(A)] += 1e-10 * max(float(np.trace(G)) / max(G.shape[0], 1), 1e-10)
    chol = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    achieved = _edf_for(G, S, lam) if S is not None else float(np.linalg.matrix_rank(G))
    return BaseSmoother(
        term_name=block.term.name,
        X=X,
        chol=chol,
        lambda_big=float(lam),
        target_edf=target_edf,
        achieved_edf=achieved,
    )


def _poisson_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    with np.errstate(over="ignore"):
        return float(np.dot(y, eta) - np.sum(np.exp(eta)))


def _golden_max(fun, lo: float, hi: float, tol: float = 1e-6) -> tuple[float, float]:
    """Golden-section maximization on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    while (b - a) > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
    x = 0.5 * (a + b)
    return x, fun(x)


@dataclass
class BoostState:
    eta: np.ndarray
    y: np.ndarray
    selected_terms: list[str] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    gradient: np.ndarray | None = None
    stopped: str | None = None


def boost_steps(state: BoostState, candidates: list[BaseSmoother], m: int) -> BoostState:
    """Run up to m component-wise boosting steps, updating state in place.

    Per step the negative log-likelihood gradient w.r.t. the linear
    predictor (mu - y for Poisson with log link) is smoothed by every
    candidate, a bracketed line search picks the step length, and the
    candidate with the best resulting log likelihood wins; ties go to the
    smallest candidate index.  Stops early when no candidate improves the
    log likelihood by more than 1e-10.
    """
    if m < 1:
        raise DataValidationError("boosting needs m >= 1")
    for step in range(1, m + 1):
        mu = np.exp(state.eta)
        e = mu - state.y
        state.gradient = e
        current = _poisson_loglik(state.eta, state.y)
        best = None
        for idx, smoother in enumerate(candidates):
            direction = smoother.apply(e)
            alpha, value = _golden_max(
                lambda a: _poisson_loglik(state.eta + a * direction, state.y), -2.0, 2.0
            )
            if best is None or value > best[0]:
                best = (value, idx, alpha, direction)
        if best is None or best[0] - current < 1e-10:
            state.stopped = "no_improvement"
            break
        value, idx, alpha, direction = best
        state.eta = state.eta + alpha * direction
        name = candidates[idx].term_name
        if name not in state.selected_terms:
            state.selected_terms.append(name)
        state.history.append({"step": step, "term": name, "alpha": float(alpha), "loglik": float(value)})
    return state


@dataclass(frozen=True)
class SelectConfig:
    m_forward: int = 5
    max_outer: int = 20
    drop_edf: float = 0.1
    drop_evidence: float = 2.0  # LAML margin below which a term counts as penalized out
    aic_tol: float = 0.1
    target_edf: float = 4.0
    pirls_tol: float = 1e-9

    def to_dict(self) -> dict:
        return {
            "m_forward": self.m_forward,
            "max_outer": self.max_outer,
            "drop_edf": self.drop_edf,
            "drop_evidence": self.drop_evidence,
            "aic_tol": self.aic_tol,
            "target_edf": self.target_edf,
        }


@dataclass
class SelectionTrace:
    iterations: list[dict] = field(default_factory=list)
    final_terms: list[str] = field(default_factory=list)
    stopped_reason: str = ""
    aborted: bool = False
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_terms": self.final_terms,
            "stopped_reason": self.stopped_reason,
            "aborted": self.aborted,
            "config": self.config,
        }


def removal_evidence(pseudo: PseudoData, fit: FitResult, term: str) -> float:
    """LAML cost of penalizing one term out of the fitted model.

    The term's smoothing parameters are pushed to the clamping bound (which
    numerically zeroes the term) with every other parameter held at its
    estimate, beta is re-fitted, and the LAML drop is returned.  Values near
    zero mean the marginal likelihood is indifferent to the term.
    """
    design = fit.design
    rho = fit.rho.copy()
    hit = False
    for j, name in enumerate(fit.rho_names):
        if name == term or name == f"{term}:null":
            rho[j] = RHO_BOUND
            hit = True
    if not hit:
        raise DataValidationError(f"term {term!r} carries no penalty in this fit")
    lam = np.exp(rho)
    refit = pirls_fit(pseudo, design, lam, beta0=fit.beta, tol=1e-9)
    if not refit.converged:
        refit = pirls_fit(pseudo, design, lam, tol=1e-9)
    v_removed = laml_from_fit(refit, design, lam, groups=_penalty_groups(design))
    return float(fit.laml - v_removed)


def _fit_summary(fit: FitResult) -> dict:
    return {
        "aic": float(fit.aic),
        "edf_total": float(fit.edf_total),
        "edf_per_term": {k: float(v) for k, v in sorted(fit.edf_per_term.items())},
        "rho": {name: float(r) for name, r in zip(fit.rho_names, fit.rho)},
        "converged": bool(fit.converged),
    }


def select_model(
    cohort: CohortTable, spec: ModelSpec, config: SelectConfig = SelectConfig()
) -> tuple[FitResult, SelectionTrace]:
    """Run the full boost-forward / penalise-backward selection loop.

    Minimal-model terms (fixed_in_model) are always present and never carry
    selection penalties; every other term is a candidate.  Returns the
    best-AIC fit seen together with the full selection trace.
    """
    if not spec.min_model_terms:
        raise DataValidationError("model spec needs a non-empty minimal model")
    pseudo = expand_pseudo(cohort)
    blocks = blocks_from_pseudo(pseudo, spec)
    min_names = [t.name for t in spec.min_model_terms]
    candidate_names = [t.name for t in spec.selectable_terms]

    smoothers: dict[str, BaseSmoother] = {}

    def smoother_for(name: str) -> BaseSmoother:
        if name not in smoothers:
            smoothers[name] = make_base_smoother(blocks[name], config.target_edf)
        return smoothers[name]

    trace = SelectionTrace(config=config.to_dict())

    def refit(included: list[str], rho_prev: dict[str, float]):
        design = design_from_blocks(
            pseudo, spec, blocks, term_names=min_names + included, select_terms=set(included)
        )
        rho0 = np.asarray([rho_prev.get(pen.name, 0.0) for pen in design.penalties])
        fit = optimize_rho(pseudo, design, rho0=rho0, pirls_tol=config.pirls_tol)
        return design, fit

    design_cur, fit_cur = refit([], {})
    included: list[str] = []
    rho_by_name = dict(zip(fit_cur.rho_names, fit_cur.rho))
    best_fit, best_terms = fit_cur, []
    if not fit_cur.converged:
        trace.aborted = True
        trace.stopped_reason = "minimal model fit did not converge"
        trace.final_terms = []
        return fit_cur, trace

    prev_set: frozenset | None = frozenset()
    prev_aic = fit_cur.aic
    stopped_reason = "max_outer"
    for outer in range(1, config.max_outer + 1):
        entry: dict = {"iteration": outer}
        not_in = [name for name in candidate_names if name not in included]
        picks: list[str] = []
        if not_in:
            state = BoostState(eta=design_cur.X @ fit_cur.beta, y=pseudo.y)
            boost_steps(state, [smoother_for(name) for name in not_in], config.m_forward)
            picks = list(state.selected_terms)
            entry["boosted"] = state.history
            entry["boost_stopped"] = state.stopped
        else:
            entry["boosted"] = []
            entry["boost_stopped"] = "no_candidates"

        new_included = included + [p for p in picks if p not in included]
        design_cur, fit_cur = refit(new_included, rho_by_name)
        entry["refit"] = _fit_summary(fit_cur)
        entry["warm_started"] = True
        if not fit_cur.converged:
            trace.aborted = True
            entry["aborted"] = True
            trace.iterations.append(entry)
            stopped_reason = "refit did not converge"
            break
        rho_by_name = dict(zip(fit_cur.rho_names, fit_cur.rho))

        evidence = {
            name: removal_evidence(pseudo, fit_cur, name) for name in new_included
        }
        entry["removal_evidence"] = {k: float(v) for k, v in sorted(evidence.items())}
        dropped = [
            name
            for name in new_included
            if fit_cur.edf_per_term.get(name, 0.0) < config.drop_edf
            or evidence[name] < config.drop_evidence
        ]
        entry["dropped"] = dropped
        included = [name for name in new_included if name not in dropped]
        if dropped:
            design_cur, fit_cur = refit(included, rho_by_name)
            entry["refit_after_drop"] = _fit_summary(fit_cur)
            if not fit_cur.converged:
                trace.aborted = True
                entry["aborted"] = True
                trace.iterations.append(entry)
                stopped_reason = "refit did not converge"
                break
            rho_by_name = dict(zip(fit_cur.rho_names, fit_cur.rho))
        trace.iterations.append(entry)

        if fit_cur.aic < best_fit.aic:
            best_fit, best_terms = fit_cur, list(included)
        if frozenset(included) == prev_set and abs(fit_cur.aic - prev_aic) < config.aic_tol:
            stopped_reason = "stable"
            break
        prev_set = frozenset(included)
        prev_aic = fit_cur.aic

    trace.stopped_reason = stopped_reason
    trace.final_terms = list(best_terms)
    return best_fit, trace
