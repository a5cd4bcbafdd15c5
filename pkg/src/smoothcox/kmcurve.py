"""Kaplan-Meier survival curves adjusted for left truncation.

The risk set at an event time contains every interval with
``t_start < t <= t_stop``, so subjects recruited late only enter once under
observation and subjects with gaps in observation drop out in between.
With all entries at the time origin this reduces to the classical
product-limit estimator.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .survdata import CohortTable


@dataclass(frozen=True)
class KMCurve:
    group: str
    times: np.ndarray
    survival: np.ndarray
    n_risk: np.ndarray
    n_event: np.ndarray
    censor_marks: np.ndarray  # censoring times that are not event times


def _subject_summary(cohort: CohortTable, indices):
    """Per subject: last interval index, whether it ends in an event."""
    last: dict[str, int] = {}
    for i in indices:
        iv = cohort.intervals[i]
        cur = last.get(iv.subject_id)
        if cur is None or cohort.intervals[cur].t_stop <= iv.t_stop:
            last[iv.subject_id] = i
    return last


def _km_for(cohort: CohortTable, indices, label: str) -> KMCurve:
    intervals = cohort.intervals
    t_start = np.asarray([intervals[i].t_start for i in indices])
    t_stop = np.asarray([intervals[i].t_stop for i in indices])
    event = np.asarray([intervals[i].event for i in indices], dtype=bool)

    event_times = np.asarray(sorted({float(t) for t, e in zip(t_stop, event) if e}))
    surv = []
    n_risk = []
    n_event = []
    s = 1.0
    for t in event_times:
        at_risk = int(np.sum((t_start < t) & (t <= t_stop)))
        d = int(np.sum(event & (t_stop == t)))
        s *= 1.0 - d / at_risk
        surv.append(s)
        n_risk.append(at_risk)
        n_event.append(d)

    last = _subject_summary(cohort, indices)
    censor_times = sorted(
        {
            float(intervals[i].t_stop)
            for i in last.values()
            if not intervals[i].event and float(intervals[i].t_stop) not in set(event_times.tolist())
        }
    )
    return KMCurve(
        group=label,
        times=event_times,
        survival=np.asarray(surv),
        n_risk=np.asarray(n_risk, dtype=int),
        n_event=np.asarray(n_event, dtype=int),
        censor_marks=np.asarray(censor_times),
    )


def km_fit(cohort: CohortTable, group: str | None = None) -> list[KMCurve]:
    """Product-limit estimate, one curve per level of the grouping covariate.

    The group label of a subject is taken from its first interval.
    """
    n = cohort.n_intervals
    if group is None:
        return [_km_for(cohort, range(n), "all")]
    if group == "location_id":
        value_of = lambda iv: iv.location_id  # noqa: E731
    elif group in cohort.covariate_names:
        value_of = lambda iv: iv.covariates[group]  # noqa: E731
    else:
        raise DataValidationError(f"grouping column {group!r} not in cohort")
    first_seen: dict[str, object] = {}
    members: dict[object, list[int]] = {}
    for i, iv in enumerate(cohort.intervals):
        label = first_seen.setdefault(iv.subject_id, value_of(iv))
        members.setdefault(label, []).append(i)
    return [_km_for(cohort, members[label], str(label)) for label in sorted(members, key=str)]


def km_to_csv(curves: list[KMCurve]) -> str:
    """Merged export: event rows and censor-mark rows, per group."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "time", "survival", "n_risk", "n_event", "is_censor_mark"])
    for curve in curves:
        rows = [(float(t), float(s), int(r), int(d), 0) for t, s, r, d in
                zip(curve.times, curve.survival, curve.n_risk, curve.n_event)]
        for t in curve.censor_marks:
            # survival level in force at the censoring time
            s = 1.0
            for et, sv in zip(curve.times, curve.survival):
                if et <= t:
                    s = float(sv)
            rows.append((float(t), s, 0, 0, 1))
        for t, s, r, d, m in sorted(rows):
            writer.writerow([curve.group, repr(t), repr(s), r, d, m])
    return buf.getvalue()
