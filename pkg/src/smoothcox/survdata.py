"""Counting-process survival data: ingestion, validation and risk sets.

Records are kept in long format: one row per subject per covariate interval
``(t_start, t_stop]``, with the covariate values in force on that interval.
Covariates are therefore step functions of time; a value recorded for a
multi-year interval is carried forward unchanged until the next interval
starts.  Left truncation is expressed through ``t_start`` of a subject's
first interval, right censoring through a final interval with ``event = 0``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError

RESERVED_COLUMNS = ("subject_id", "location_id", "t_start", "t_stop", "event")


@dataclass(frozen=True)
class SubjectInterval:
    subject_id: str
    location_id: str
    t_start: float
    t_stop: float
    event: bool
    covariates: dict[str, float]


@dataclass(frozen=True)
class RiskSet:
    """Intervals at risk at one distinct event time (ties grouped)."""

    event_time: float
    at_risk: np.ndarray  # indices into CohortTable.intervals
    events_at_time: int


@dataclass(frozen=True)
class CohortTable:
    intervals: tuple[SubjectInterval, ...]
    covariate_names: tuple[str, ...]
    distinct_event_times: np.ndarray = field(init=False)

    def __post_init__(self):
        _validate_intervals(self.intervals, self.covariate_names)
        times = sorted({iv.t_stop for iv in self.intervals if iv.event})
        object.__setattr__(self, "distinct_event_times", np.asarray(times, dtype=float))

    @property
    def n_intervals(self) -> int:
        return len(self.intervals)

    @property
    def subject_ids(self) -> list[str]:
        seen: dict[str, None] = {}
        for iv in self.intervals:
            seen.setdefault(iv.subject_id, None)
        return list(seen)

    @property
    def n_events(self) -> int:
        return sum(iv.event for iv in self.intervals)

    def covariate_column(self, name: str) -> np.ndarray:
        if name not in self.covariate_names:
            raise DataValidationError(f"unknown covariate {name!r}")
        return np.asarray([iv.covariates[name] for iv in self.intervals], dtype=float)


def _validate_intervals(intervals, covariate_names):
    if not intervals:
        raise DataValidationError("cohort contains no intervals")
    by_subject: dict[str, list[SubjectInterval]] = {}
    for iv in intervals:
        if not iv.t_start < iv.t_stop:
            raise DataValidationError(
                f"subject {iv.subject_id!r}: interval ({iv.t_start}, {iv.t_stop}] "
                "requires t_start < t_stop"
            )
        for name in covariate_names:
            if name not in iv.covariates:
                raise DataValidationError(
                    f"subject {iv.subject_id!r}: missing covariate {name!r}"
                )
        by_subject.setdefault(iv.subject_id, []).append(iv)
    for sid, ivs in by_subject.items():
        for prev, cur in zip(ivs, ivs[1:]):
            if cur.t_start < prev.t_stop:
                raise DataValidationError(
                    f"subject {sid!r}: overlapping intervals at t={cur.t_start}"
                )
            if prev.event:
                raise DataValidationError(
                    f"subject {sid!r}: event interval followed by a later interval"
                )
        if sum(iv.event for iv in ivs) > 1:
            raise DataValidationError(f"subject {sid!r}: more than one event interval")


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise DataValidationError(
            f"row {row}, column {column!r}: malformed numeric value {text!r}"
        ) from None


def load_cohort(path_or_text, *, from_text: bool = False) -> CohortTable:
    """Read a cohort from CSV (long counting-process format).

    The header must name ``subject_id, location_id, t_start, t_stop, event``;
    every remaining column is treated as a numeric covariate.  ``event`` must
    be 0 or 1.  Row order is preserved.
    """
    if from_text:
        handle = io.StringIO(path_or_text)
    else:
        handle = open(path_or_text, newline="", encoding="utf-8")
    with handle:
        # leading '#' lines carry artifact metadata (manifest hash), not data
        reader = csv.reader(line for line in handle if not line.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError("empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in RESERVED_COLUMNS if c not in header]
        if missing:
            raise DataValidationError(f"missing required columns: {missing}")
        covariate_names = tuple(c for c in header if c not in RESERVED_COLUMNS)
        col = {name: header.index(name) for name in header}

        intervals: list[SubjectInterval] = []
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise DataValidationError(
                    f"row {rownum}: expected {len(header)} cells, got {len(row)}"
                )
            event_cell = row[col["event"]].strip()
            if event_cell not in ("0", "1"):
                raise DataValidationError(
                    f"row {rownum}, column 'event': expected 0 or 1, got {event_cell!r}"
                )
            covs = {}
            for name in covariate_names:
                cell = row[col[name]].strip()
                if cell == "":
                    raise DataValidationError(
                        f"row {rownum}, column {name!r}: missing value"
                    )
                covs[name] = _parse_float(cell, rownum, name)
            intervals.append(
                SubjectInterval(
                    subject_id=row[col["subject_id"]].strip(),
                    location_id=row[col["location_id"]].strip(),
                    t_start=_parse_float(row[col["t_start"]].strip(), rownum, "t_start"),
                    t_stop=_parse_float(row[col["t_stop"]].strip(), rownum, "t_stop"),
                    event=event_cell == "1",
                    covariates=covs,
                )
            )
    if not intervals:
        raise DataValidationError("empty file")
    return CohortTable(intervals=tuple(intervals), covariate_names=covariate_names)


def _format_number(x: float) -> str:
    # repr() round-trips floats; integers print without trailing '.0' noise.
    if float(x) == int(x):
        return str(int(x))
    return repr(float(x))


def write_cohort(cohort: CohortTable, path_or_buffer) -> None:
    """Write a cohort back to CSV, in row order, with deterministic bytes."""
    own = isinstance(path_or_buffer, (str, bytes)) or hasattr(path_or_buffer, "__fspath__")
    handle = open(path_or_buffer, "w", newline="", encoding="utf-8") if own else path_or_buffer
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(RESERVED_COLUMNS) + list(cohort.covariate_names))
        for iv in cohort.intervals:
            writer.writerow(
                [
                    iv.subject_id,
                    iv.location_id,
                    _format_number(iv.t_start),
                    _format_number(iv.t_stop),
                    int(iv.event),
                ]
                + [_format_number(iv.covariates[name]) for name in cohort.covariate_names]
            )
    finally:
        if own:
            handle.close()


def cohort_to_csv(cohort: CohortTable) -> str:
    buf = io.StringIO()
    write_cohort(cohort, buf)
    return buf.getvalue()


def build_risk_sets(cohort: CohortTable) -> list[RiskSet]:
    """One RiskSet per distinct event time, ordered by time.

    An interval is at risk at time ``t`` iff ``t_start < t <= t_stop``, so a
    left-truncated subject only enters risk sets after its entry time.
    """
    if cohort.distinct_event_times.size == 0:
        raise DataValidationError("cohort contains no events")
    t_start = np.asarray([iv.t_start for iv in cohort.intervals])
    t_stop = np.asarray([iv.t_stop for iv in cohort.intervals])
    event = np.asarray([iv.event for iv in cohort.intervals], dtype=bool)
    out = []
    for t in cohort.distinct_event_times:
        mask = (t_start < t) & (t <= t_stop)
        idx = np.flatnonzero(mask)
        n_events = int(np.sum(event[idx] & (t_stop[idx] == t)))
        out.append(RiskSet(event_time=float(t), at_risk=idx, events_at_time=n_events))
    return out
