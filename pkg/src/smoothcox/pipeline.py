"""Command implementations shared by the HTTP service and the CLI.

Every function takes plain JSON-ready inputs (CSV text, spec documents,
scalar options) and returns JSON-ready payloads, so the service layer stays
a thin validation shell and the CLI a thin client.
"""

from __future__ import annotations

import io

import numpy as np

from . import __version__
from .boostsel import SelectConfig, select_model
from .coxpois import expand_pseudo
from .errors import DataValidationError
from .kmcurve import km_fit, km_to_csv
from .modelbuild import design_from_pseudo
from .pirls import FitResult, optimize_rho
from .simgen import SimSpec, simulate_cohort
from .smooths import DEFAULT_K, ModelSpec
from .survdata import build_risk_sets, cohort_to_csv, load_cohort
from .threshold import breakpoint_curve_csv, estimate_breakpoint


def _cohort(csv_text: str):
    return load_cohort(csv_text, from_text=True)


def fit_payload(fit: FitResult) -> dict:
    design = fit.design
    coefficients = {}
    for block, sl in zip(design.blocks, design.block_slices):
        entry = {"values": [float(v) for v in fit.beta[sl]]}
        if block.term.kind == "random_effect":
            entry["levels"] = [str(lev) for lev in block.levels]
        coefficients[block.term.name] = entry
    return {
        "coefficients": coefficients,
        "stratum": {
            "event_times": [float(t) for t in design.event_levels],
            "values": [float(v) for v in fit.stratum_coefficients()],
        },
        "rho": {name: float(r) for name, r in zip(fit.rho_names, fit.rho)},
        "edf": {
            "per_term": {k: float(v) for k, v in sorted(fit.edf_per_term.items())},
            "stratum": float(fit.edf_stratum),
            "total": float(fit.edf_total),
        },
        "aic": float(fit.aic),
        "laml": float(fit.laml),
        "partial_loglik": float(fit.partial_loglik),
        "deviance_explained": float(fit.deviance_explained),
        "converged": bool(fit.converged),
        "n_outer": int(fit.n_outer),
        "messages": list(fit.messages),
    }


def smooth_curves_csv(fit: FitResult, grid_size: int = 200) -> str:
    """Fitted effect curves with 95% pointwise Bayesian bands."""
    buf = io.StringIO()
    buf.write("term,x,fit,se,lo,hi\n")
    for block, sl in zip(fit.design.blocks, fit.design.block_slices):
        if block.term.kind == "random_effect":
            continue
        grid = np.linspace(block.x_min, block.x_max, grid_size)
        Xg = block.evaluate(grid)
        f = Xg @ fit.beta[sl]
        V = fit.V_post[sl, sl]
        se = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", Xg, V, Xg), 0.0))
        for x, fv, s in zip(grid, f, se):
            buf.write(
                f"{block.term.name},{x!r},{fv!r},{s!r},{fv - 1.96 * s!r},{fv + 1.96 * s!r}\n"
            )
    return buf.getvalue()


def run_ingest(csv_text: str) -> dict:
    cohort = _cohort(csv_text)
    risk_sets = build_risk_sets(cohort) if cohort.distinct_event_times.size else []
    return {
        "n_intervals": cohort.n_intervals,
        "n_subjects": len(cohort.subject_ids),
        "n_events": cohort.n_events,
        "covariates": list(cohort.covariate_names),
        "event_times": [float(t) for t in cohort.distinct_event_times],
        "risk_set_sizes": [int(rs.at_risk.size) for rs in risk_sets],
    }


def run_km(csv_text: str, group: str | None = None) -> dict:
    cohort = _cohort(csv_text)
    curves = km_fit(cohort, group=group)
    return {
        "curves": [
            {
                "group": c.group,
                "times": [float(t) for t in c.times],
                "survival": [float(s) for s in c.survival],
                "n_risk": [int(r) for r in c.n_risk],
                "n_event": [int(d) for d in c.n_event],
                "censor_marks": [float(t) for t in c.censor_marks],
            }
            for c in curves
        ],
        "csv": km_to_csv(curves),
    }


def _fit_one(csv_text: str, spec_doc: dict, k_default: int) -> FitResult:
    cohort = _cohort(csv_text)
    spec = ModelSpec.from_dict(spec_doc, k_default=k_default)
    pseudo = expand_pseudo(cohort)
    design = design_from_pseudo(pseudo, spec)
    return optimize_rho(pseudo, design)


def run_fit(csv_text: str, spec_doc: dict, k_default: int = DEFAULT_K) -> dict:
    fit = _fit_one(csv_text, spec_doc, k_default)
    return {"fit": fit_payload(fit), "curves_csv": smooth_curves_csv(fit)}


def run_compare(csv_text: str, spec_docs: list[tuple[str, dict]], k_default: int = DEFAULT_K) -> dict:
    cohort = _cohort(csv_text)
    pseudo = expand_pseudo(cohort)
    rows = []
    for label, doc in spec_docs:
        spec = ModelSpec.from_dict(doc, k_default=k_default)
        design = design_from_pseudo(pseudo, spec)
        fit = optimize_rho(pseudo, design)
        rows.append(
            {
                "model": label,
                "n": pseudo.n_pseudo,
                "edf": float(fit.edf_total),
                "dev_expl": float(fit.deviance_explained),
                "aic": float(fit.aic),
                "laml": float(fit.laml),
                "converged": bool(fit.converged),
            }
        )
    best = min((r["aic"] for r in rows if r["converged"]), default=float("nan"))
    for r in rows:
        r["best_aic"] = bool(r["converged"] and r["aic"] == best)
    return {"table": rows}


def run_select(
    csv_text: str,
    spec_doc: dict,
    seed: int,
    k_default: int = DEFAULT_K,
    m_forward: int | None = None,
) -> dict:
    cohort = _cohort(csv_text)
    spec = ModelSpec.from_dict(spec_doc, k_default=k_default)
    config = SelectConfig() if m_forward is None else SelectConfig(m_forward=m_forward)
    fit, trace = select_model(cohort, spec, config)
    doc = trace.to_dict()
    doc["seed"] = int(seed)
    return {"fit": fit_payload(fit), "trace": doc, "curves_csv": smooth_curves_csv(fit)}


def run_threshold(
    csv_text: str,
    spec_doc: dict,
    term: str,
    seed: int,
    b_samples: int = 1000,
    k_default: int = DEFAULT_K,
    restrict_positive_slope: bool = True,
) -> dict:
    fit = _fit_one(csv_text, spec_doc, k_default)
    bp = estimate_breakpoint(
        fit, term, B=b_samples, seed=seed, restrict_positive_slope=restrict_positive_slope
    )
    return {
        "fit": fit_payload(fit),
        "breakpoint": bp.to_dict(),
        "curve_csv": breakpoint_curve_csv(bp),
    }


def run_simulate(sim_doc: dict) -> dict:
    spec = SimSpec.from_dict(sim_doc)
    cohort, truth = simulate_cohort(spec)
    return {
        "cohort_csv": cohort_to_csv(cohort),
        "truth": truth.to_dict(),
        "n_intervals": cohort.n_intervals,
        "n_events": cohort.n_events,
    }


def version_info() -> dict:
    return {"package": "smoothcox", "version": __version__}
