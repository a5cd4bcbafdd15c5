"""Poisson pseudo-data expansion of the Cox partial likelihood.

At each distinct event time every at-risk interval contributes one binary
row: 1 for the interval(s) whose event occurs at that time, 0 otherwise.
Together with an unpenalized factor over event times (the stratum), the
Poisson log likelihood of these rows equals the Breslow-tied partial log
likelihood up to a constant that does not depend on the coefficients.

``partial_loglik`` is a deliberately separate code path over risk sets; it
exists to cross-check the pseudo-data route, not to fit models.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .smooths import PenalizedDesign
from .survdata import CohortTable, build_risk_sets


@dataclass(frozen=True)
class PseudoData:
    y: np.ndarray
    stratum: np.ndarray  # event-time level codes, aligned with event_times
    event_times: np.ndarray
    covariates: dict[str, np.ndarray]
    groups: dict[str, np.ndarray]  # label columns (location_id, subject_id)
    source_interval: np.ndarray

    @property
    def n_pseudo(self) -> int:
        return self.y.size

    @property
    def n_strata(self) -> int:
        return self.event_times.size

    def events_per_stratum(self) -> np.ndarray:
        return np.bincount(self.stratum, weights=self.y, minlength=self.n_strata)


def expand_pseudo(cohort: CohortTable) -> PseudoData:
    """Expand a cohort into pseudo rows, ordered by event time then subject."""
    risk_sets = build_risk_sets(cohort)
    intervals = cohort.intervals
    y_rows: list[int] = []
    stratum_rows: list[int] = []
    source: list[int] = []
    for code, rs in enumerate(risk_sets):
        order = sorted(rs.at_risk, key=lambda i: (intervals[i].subject_id, i))
        for i in order:
            iv = intervals[i]
            y_rows.append(int(iv.event and iv.t_stop == rs.event_time))
            stratum_rows.append(code)
            source.append(i)
    source_arr = np.asarray(source, dtype=int)
    covs = {
        name: np.asarray([intervals[i].covariates[name] for i in source], dtype=float)
        for name in cohort.covariate_names
    }
    groups = {
        "location_id": np.asarray([intervals[i].location_id for i in source]),
        "subject_id": np.asarray([intervals[i].subject_id for i in source]),
    }
    return PseudoData(
        y=np.asarray(y_rows, dtype=float),
        stratum=np.asarray(stratum_rows, dtype=int),
        event_times=np.asarray([rs.event_time for rs in risk_sets], dtype=float),
        covariates=covs,
        groups=groups,
        source_interval=source_arr,
    )


def pseudo_to_csv(pseudo: PseudoData) -> str:
    """Export pseudo rows for external cross-checks."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = sorted(pseudo.covariates)
    writer.writerow(["y", "stratum"] + names)
    for i in range(pseudo.n_pseudo):
        writer.writerow(
            [int(pseudo.y[i]), repr(float(pseudo.event_times[pseudo.stratum[i]]))]
            + [repr(float(pseudo.covariates[n][i])) for n in names]
        )
    return buf.getvalue()


def _design_eta(cohort: CohortTable, design: PenalizedDesign, beta: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Linear predictor for the given intervals, excluding the stratum factor."""
    intervals = cohort.intervals
    eta = np.zeros(idx.size)
    for block, sl in zip(design.blocks, design.block_slices):
        term = block.term
        if term.kind == "random_effect" and term.covariate in ("location_id", "subject_id"):
            values = np.asarray([getattr(intervals[i], term.covariate) for i in idx])
        else:
            values = np.asarray([intervals[i].covariates[term.covariate] for i in idx], dtype=float)
        eta += block.evaluate(values) @ beta[sl]
    return eta


def partial_loglik(cohort: CohortTable, beta: np.ndarray, design: PenalizedDesign) -> float:
    """Breslow partial log likelihood, computed directly over risk sets.

    ``beta`` is a full coefficient vector for ``design``; any stratum
    coefficients it contains are irrelevant here because they cancel within
    each risk set.
    """
    beta = np.asarray(beta, dtype=float)
    if beta.size != design.total_p:
        raise DataValidationError(
            f"beta has length {beta.size}, design has {design.total_p} columns"
        )
    total = 0.0
    for rs in build_risk_sets(cohort):
        eta = _design_eta(cohort, design, beta, rs.at_risk)
        events = [
            k
            for k, i in enumerate(rs.at_risk)
            if cohort.intervals[i].event and cohort.intervals[i].t_stop == rs.event_time
        ]
        m = np.max(eta)
        log_denom = m + np.log(np.sum(np.exp(eta - m)))
        total += float(np.sum(eta[events]) - rs.events_at_time * log_denom)
    return total


def partial_loglik_grad(cohort: CohortTable, beta: np.ndarray, design: PenalizedDesign) -> np.ndarray:
    """Gradient of the Breslow partial log likelihood in the full coefficient space."""
    beta = np.asarray(beta, dtype=float)
    grad = np.zeros(design.total_p)
    intervals = cohort.intervals
    for rs in build_risk_sets(cohort):
        idx = rs.at_risk
        rows = np.zeros((idx.size, design.total_p))
        for block, sl in zip(design.blocks, design.block_slices):
            term = block.term
            if term.kind == "random_effect" and term.covariate in ("location_id", "subject_id"):
                values = np.asarray([getattr(intervals[i], term.covariate) for i in idx])
            else:
                values = np.asarray([intervals[i].covariates[term.covariate] for i in idx], dtype=float)
            rows[:, sl] = block.evaluate(values)
        eta = rows @ beta
        w = np.exp(eta - np.max(eta))
        w /= w.sum()
        events = [
            k
            for k, i in enumerate(idx)
            if intervals[i].event and intervals[i].t_stop == rs.event_time
        ]
        grad += rows[events].sum(axis=0) - rs.events_at_time * (w @ rows)
    return grad


def breslow_loglik(eta: np.ndarray, y: np.ndarray, stratum: np.ndarray, n_strata: int) -> float:
    """Partial log likelihood from pseudo-row linear predictors.

    Stratum-level constants in ``eta`` cancel, so the full fitted linear
    predictor (including the event-time factor) can be passed directly.
    """
    total = 0.0
    for s in range(n_strata):
        mask = stratum == s
        eta_s = eta[mask]
        d = float(np.sum(y[mask]))
        m = np.max(eta_s)
        total += float(np.sum(eta_s[y[mask] == 1.0])) - d * (m + np.log(np.sum(np.exp(eta_s - m))))
    return total
