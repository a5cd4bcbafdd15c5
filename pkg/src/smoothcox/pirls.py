"""Penalized IRLS for the Poisson pseudo-data model and LAML optimization.

The inner problem maximizes the penalized Poisson log likelihood

    lp(beta) = sum_i [ y_i eta_i - exp(eta_i) ] - 1/2 sum_j lambda_j beta' S_j beta

by Newton steps with step halving.  The outer problem maximizes the Laplace
approximate marginal likelihood over rho = log(lambda):

    V(rho) = l(beta_hat) - 1/2 beta_hat' S_l beta_hat
             + 1/2 log|S_l|_+ - 1/2 log|H + S_l| + (M_p / 2) log(2 pi)

with H = X'WX at beta_hat, |.|_+ the pseudo-determinant over the joint
penalty range space and M_p its rank.  Unpenalized directions (the
event-time stratum factor, plain linear terms) contribute no prior term.
The gradient of V w.r.t. rho is computed analytically, including the
dependence of H on rho through beta_hat.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .coxpois import PseudoData, breslow_loglik
from .errors import NumericalError
from .smooths import PenalizedDesign

RHO_BOUND = 15.0

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PirlsFit:
    beta: np.ndarray
    penalized_loglik: float
    loglik: float
    converged: bool
    n_iter: int
    mu: np.ndarray
    H: np.ndarray  # X'WX at beta
    chol: tuple  # cho_factor of H + S_lambda

    def V_post(self) -> np.ndarray:
        V = scipy.linalg.cho_solve(self.chol, np.eye(self.H.shape[0]))
        return 0.5 * (V + V.T)


@dataclass
class FitResult:
    """Converged fit: coefficients, smoothing parameters and summaries."""

    beta: np.ndarray
    rho: np.ndarray
    rho_names: tuple[str, ...]
    V_post: np.ndarray
    edf_per_term: dict[str, float]
    edf_stratum: float
    edf_total: float
    aic: float
    laml: float
    converged: bool
    penalized_loglik: float
    loglik_poisson: float
    partial_loglik: float
    null_partial_loglik: float
    design: PenalizedDesign
    n_outer: int = 0
    messages: list[str] = field(default_factory=list)

    @property
    def deviance_explained(self) -> float:
        # Deviance relative to the stratum-only null, saturated value 0.
        return 1.0 - self.partial_loglik / self.null_partial_loglik

    def stratum_coefficients(self) -> np.ndarray:
        return self.beta[self.design.stratum_slice]

    def term_coefficients(self, name: str) -> np.ndarray:
        _, sl = self.design.block_for(name)
        return self.beta[sl]


def _poisson_loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # y in {0,1} so the log(y!) term vanishes.
    with np.errstate(over="ignore"):
        mu = np.exp(eta)
    return float(np.dot(y, eta) - np.sum(mu))


def _initial_beta(y: np.ndarray, stratum: np.ndarray, n_strata: int, p: int, stratum_slice: slice) -> np.ndarray:
    beta = np.zeros(p)
    counts = np.bincount(stratum, minlength=n_strata).astype(float)
    events = np.bincount(stratum, weights=y, minlength=n_strata)
    rate = (events + 0.5) / (counts + 1.0)
    beta[stratum_slice] = np.log(rate)
    return beta


def pirls_fit(
    pseudo: PseudoData,
    design: PenalizedDesign,
    lam: np.ndarray,
    beta0: np.ndarray | None = None,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> PirlsFit:
    """Maximize the penalized Poisson log likelihood for fixed lambda.

    Convergence: relative change of the penalized log likelihood below
    ``tol``; steps that fail to increase it are halved.  A fit that runs out
    of iterations is returned with ``converged=False`` rather than raised.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.size != len(design.penalties):
        raise NumericalError(
            f"lambda has {lam.size} entries, design has {len(design.penalties)} penalties"
        )
    X = design.X
    y = pseudo.y
    n, p = X.shape
    S = design.penalty_full(lam)
    if beta0 is None:
        beta0 = _initial_beta(y, pseudo.stratum, design.n_strata, p, design.stratum_slice)
    beta = beta0.copy()

    def penalized(beta_val, eta_val):
        return _poisson_loglik(eta_val, y) - 0.5 * float(beta_val @ S @ beta_val)

    eta = X @ beta
    lp = penalized(beta, eta)
    converged = False
    chol = None
    mu = np.exp(np.clip(eta, -700, 700))
    it = 0
    for it in range(1, max_iter + 1):
        mu = np.exp(np.clip(eta, -700, 700))
        H = (X * mu[:, None]).T @ X
        G = H + S
        try:
            chol = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError:
            raise NumericalError(_rank_deficiency_message(design, G)) from None
        score = X.T @ (y - mu) - S @ beta
        step = scipy.linalg.cho_solve(chol, score, check_finite=False)

        step_scale = 1.0
        improved = False
        for _ in range(30):
            cand = beta + step_scale * step
            eta_cand = X @ cand
            lp_cand = penalized(cand, eta_cand)
            if np.isfinite(lp_cand) and lp_cand >= lp - 1e-12:
                improved = True
                break
            step_scale *= 0.5
        if not improved:
            break
        beta, eta = cand, eta_cand
        delta = lp_cand - lp
        lp = lp_cand
        if abs(delta) < tol * (abs(lp) + 0.1):
            converged = True
            break

    mu = np.exp(np.clip(eta, -700, 700))
    H = (X * mu[:, None]).T @ X
    try:
        chol = scipy.linalg.cho_factor(H + S, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError:
        raise NumericalError(_rank_deficiency_message(design, H + S)) from None
    return PirlsFit(
        beta=beta,
        penalized_loglik=lp,
        loglik=_poisson_loglik(eta, y),
        converged=converged,
        n_iter=it,
        mu=mu,
        H=H,
        chol=chol,
    )


def _rank_deficiency_message(design: PenalizedDesign, G: np.ndarray) -> str:
    # Name the block whose penalized diagonal sub-block is closest to singular.
    worst, worst_val = "stratum", np.inf
    for block, sl in zip(design.blocks, design.block_slices):
        sub = G[sl, sl]
        val = float(np.linalg.eigvalsh(sub).min())
        if val < worst_val:
            worst, worst_val = block.term.name, val
    return f"penalized information matrix is rank deficient (suspect block: {worst})"


# ---------------------------------------------------------------------------
# LAML
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PenaltyGroup:
    col_slice: slice
    penalty_idx: tuple[int, ...]
    U: np.ndarray  # block-local orthonormal range basis of the summed penalties
    projected: tuple[np.ndarray, ...]  # U' S_j U per penalty in penalty_idx


def _penalty_groups(design: PenalizedDesign) -> list[_PenaltyGroup]:
    by_slice: dict[tuple[int, int], list[int]] = {}
    for j, pen in enumerate(design.penalties):
        key = (pen.col_slice.start, pen.col_slice.stop)
        by_slice.setdefault(key, []).append(j)
    groups = []
    for (start, stop), idx in by_slice.items():
        total = np.zeros((stop - start, stop - start))
        for j in idx:
            Sj = design.penalties[j].matrix
            norm = np.linalg.norm(Sj)
            if norm > 0:
                total += Sj / norm
        vals, vecs = np.linalg.eigh(total)
        keep = vals > 1e-12 * max(float(vals.max()), 1e-300)
        U = vecs[:, keep]
        projected = tuple(U.T @ design.penalties[j].matrix @ U for j in idx)
        groups.append(
            _PenaltyGroup(col_slice=slice(start, stop), penalty_idx=tuple(idx), U=U, projected=projected)
        )
    return groups


def _log_pseudo_det(groups: list[_PenaltyGroup], lam: np.ndarray) -> tuple[float, int]:
    """log |S_lambda|_+ over the joint penalty range space, and its rank M_p."""
    total = 0.0
    rank = 0
    for g in groups:
        r = g.U.shape[1]
        if r == 0:
            continue
        M = np.zeros((r, r))
        for j, P in zip(g.penalty_idx, g.projected):
            M += lam[j] * P
        sign, logdet = np.linalg.slogdet(M)
        if sign <= 0:
            raise NumericalError("penalty pseudo-determinant is not positive")
        total += logdet
        rank += r
    return total, rank


def laml_from_fit(
    fit: PirlsFit, design: PenalizedDesign, lam: np.ndarray, groups: list[_PenaltyGroup] | None = None
) -> float:
    if groups is None:
        groups = _penalty_groups(design)
    if not fit.converged:
        raise NumericalError("PIRLS did not converge; LAML undefined")
    log_det_plus, m_p = _log_pseudo_det(groups, lam)
    # log|H + S_lambda| from the stored Cholesky factor.
    log_det_G = 2.0 * float(np.sum(np.log(np.diag(fit.chol[0]))))
    return fit.penalized_loglik + 0.5 * log_det_plus - 0.5 * log_det_G + 0.5 * m_p * LOG_2PI


def laml_value(pseudo: PseudoData, design: PenalizedDesign, rho: np.ndarray, tol: float = 1e-10) -> float:
    """LAML at rho = log(lambda), fitting the inner problem from scratch."""
    lam = np.exp(np.asarray(rho, dtype=float))
    fit = pirls_fit(pseudo, design, lam, tol=tol)
    return laml_from_fit(fit, design, lam)


def laml_gradient(
    pseudo: PseudoData,
    design: PenalizedDesign,
    rho: np.ndarray,
    fit: PirlsFit | None = None,
    groups: list[_PenaltyGroup] | None = None,
    tol: float = 1e-10,
) -> np.ndarray:
    """Analytic gradient of LAML w.r.t. rho.

    Includes the implicit dependence of beta_hat (and hence of the Poisson
    weights inside H) on rho; verified against central finite differences.
    """
    rho = np.asarray(rho, dtype=float)
    lam = np.exp(rho)
    if groups is None:
        groups = _penalty_groups(design)
    if fit is None:
        fit = pirls_fit(pseudo, design, lam, tol=tol)
    X = design.X
    beta = fit.beta
    p = X.shape[1]
    A = scipy.linalg.cho_solve(fit.chol, np.eye(p), check_finite=False)
    # a_i = x_i' A x_i for the trace of A dH/drho_j
    XA = X @ A
    a_diag = np.einsum("ij,ij->i", XA, X)

    grad = np.zeros(lam.size)
    # + 1/2 d log|S_lambda|_+ / d rho_j
    for g in groups:
        r = g.U.shape[1]
        if r == 0:
            continue
        M = np.zeros((r, r))
        for j, P in zip(g.penalty_idx, g.projected):
            M += lam[j] * P
        Minv = np.linalg.inv(M)
        for j, P in zip(g.penalty_idx, g.projected):
            grad[j] += 0.5 * lam[j] * float(np.sum(Minv * P.T))

    for j, pen in enumerate(design.penalties):
        sl = pen.col_slice
        Sb = pen.matrix @ beta[sl]
        # -1/2 d(beta' S_lambda beta)/d rho_j at fixed beta_hat (envelope)
        grad[j] -= 0.5 * lam[j] * float(beta[sl] @ Sb)
        # -1/2 lambda_j tr(A S_j)
        grad[j] -= 0.5 * lam[j] * float(np.sum(A[sl, sl] * pen.matrix))
        # -1/2 tr(A dH/drho_j) with dH through the weights mu
        rhs = np.zeros(p)
        rhs[sl] = Sb
        dbeta = -lam[j] * scipy.linalg.cho_solve(fit.chol, rhs, check_finite=False)
        deta = X @ dbeta
        grad[j] -= 0.5 * float(np.sum(a_diag * fit.mu * deta))
    return grad


# ---------------------------------------------------------------------------
# Outer optimization and fit summaries
# ---------------------------------------------------------------------------


def _edf_blocks(design: PenalizedDesign, A: np.ndarray, lam: np.ndarray) -> tuple[dict[str, float], float, float]:
    """Per-term edf as block traces of I - A S_lambda (== A H exactly)."""
    M = -A @ design.penalty_full(lam)
    M[np.diag_indices_from(M)] += 1.0
    per_term: dict[str, float] = {}
    for block, sl in zip(design.blocks, design.block_slices):
        val = float(np.trace(M[sl, sl]))
        per_term[block.term.name] = min(max(val, 0.0), float(block.width))
    sl = design.stratum_slice
    edf_stratum = float(np.trace(M[sl, sl]))
    total = edf_stratum + sum(per_term.values())
    return per_term, edf_stratum, total


def optimize_rho(
    pseudo: PseudoData,
    design: PenalizedDesign,
    rho0: np.ndarray | None = None,
    max_outer: int = 100,
    outer_gtol: float = 1e-4,
    pirls_tol: float = 1e-10,
    rho_bound: float = RHO_BOUND,
) -> FitResult:
    """Nested optimization: quasi-Newton on rho (LAML), PIRLS inside.

    rho is clamped to [-rho_bound, rho_bound]; hitting the bound is recorded
    as a warning message on the result.  beta is warm-started between outer
    evaluations.
    """
    n_pen = len(design.penalties)
    if rho0 is None:
        rho0 = np.zeros(n_pen)
    rho0 = np.clip(np.asarray(rho0, dtype=float), -rho_bound, rho_bound)
    groups = _penalty_groups(design)
    messages: list[str] = []
    state = {"beta": None}

    def objective(rho):
        lam = np.exp(rho)
        fit = pirls_fit(pseudo, design, lam, beta0=state["beta"], tol=pirls_tol)
        if not fit.converged:
            # retry cold once before giving up on this rho
            fit = pirls_fit(pseudo, design, lam, tol=pirls_tol)
        state["beta"] = fit.beta
        value = laml_from_fit(fit, design, lam, groups=groups) if fit.converged else -np.inf
        if not np.isfinite(value):
            return 1e12, np.zeros(n_pen)
        grad = laml_gradient(pseudo, design, rho, fit=fit, groups=groups)
        return -value, -grad

    if n_pen == 0:
        res_x = np.zeros(0)
        n_outer = 0
        rho_converged = True
    else:
        res = scipy.optimize.minimize(
            objective,
            rho0,
            jac=True,
            method="L-BFGS-B",
            bounds=[(-rho_bound, rho_bound)] * n_pen,
            options={"maxiter": max_outer, "gtol": outer_gtol, "ftol": 1e-12},
        )
        res_x = res.x
        n_outer = int(res.nit)
        rho_converged = bool(res.success)
        if not res.success:
            messages.append(f"outer optimizer: {res.message}")

    rho_hat = np.clip(res_x, -rho_bound, rho_bound)
    if n_pen and np.any(np.abs(rho_hat) >= rho_bound - 1e-8):
        at_bound = [design.penalties[j].name for j in np.flatnonzero(np.abs(rho_hat) >= rho_bound - 1e-8)]
        messages.append(f"log smoothing parameter clamped at +/-{rho_bound} for: {at_bound}")
        warnings.warn(messages[-1], stacklevel=2)

    lam_hat = np.exp(rho_hat)
    final = pirls_fit(pseudo, design, lam_hat, beta0=state["beta"], tol=pirls_tol)
    laml = laml_from_fit(final, design, lam_hat, groups=groups) if final.converged else float("nan")
    V_post = final.V_post()
    A = V_post  # (H + S_lambda)^{-1}
    edf_per_term, edf_stratum, edf_total = _edf_blocks(design, A, lam_hat)

    eta = design.X @ final.beta
    partial = breslow_loglik(eta, pseudo.y, pseudo.stratum, design.n_strata)
    null_partial = breslow_loglik(np.zeros_like(eta), pseudo.y, pseudo.stratum, design.n_strata)
    aic = -2.0 * partial + 2.0 * edf_total

    return FitResult(
        beta=final.beta,
        rho=rho_hat,
        rho_names=tuple(pen.name for pen in design.penalties),
        V_post=V_post,
        edf_per_term=edf_per_term,
        edf_stratum=edf_stratum,
        edf_total=edf_total,
        aic=aic,
        laml=laml,
        converged=bool(final.converged and rho_converged),
        penalized_loglik=final.penalized_loglik,
        loglik_poisson=final.loglik,
        partial_loglik=partial,
        null_partial_loglik=null_partial,
        design=design,
        n_outer=n_outer,
        messages=messages,
    )


def posterior_sample(fit: FitResult, B: int, seed: int) -> np.ndarray:
    """Draw B samples from N(beta_hat, V_post); deterministic given seed."""
    if B < 1:
        raise NumericalError("B must be >= 1")
    V = fit.V_post
    jitter = 0.0
    for attempt in range(6):
        try:
            L = np.linalg.cholesky(V + jitter * np.eye(V.shape[0]))
            break
        except np.linalg.LinAlgError:
            jitter = 1e-10 * max(float(np.mean(np.diag(V))), 1.0) * 10.0**attempt
    else:
        raise NumericalError("posterior covariance is not positive definite")
    if jitter > 0.0:
        warnings.warn(f"posterior covariance jittered by {jitter:g} to factorize", stacklevel=2)
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((B, V.shape[0]))
    return fit.beta[None, :] + Z @ L.T
