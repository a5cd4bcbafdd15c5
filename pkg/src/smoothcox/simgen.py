"""Synthetic cohorts with known hazard structure, for oracle-based testing.

Time runs in whole years.  Within a year the hazard is constant:
``rate = baseline * exp(sum_c f_c(x_c) + b_location)``, so the event
probability for a subject observed through year ``(t, t+1]`` is
``1 - exp(-rate)``.  Covariates are redrawn each year (time-varying) or once
per subject (time-invariant), giving yearly step functions exactly like the
counting-process format expects.  Events are recorded at the year end, which
makes ties at year boundaries the norm, as in the motivating data.

Per-subject RNG streams are spawned from the master seed, so output is
byte-identical for a given seed regardless of how subjects are iterated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataValidationError
from .survdata import CohortTable, SubjectInterval

EFFECT_KINDS = ("zero", "linear", "sine", "piecewise_linear")


@dataclass(frozen=True)
class EffectSpec:
    covariate: str
    kind: str = "zero"
    low: float = 0.0
    high: float = 1.0
    amplitude: float = 1.0  # linear slope over range / sine amplitude / high slope
    cycles: float = 1.0
    break_at: float | None = None
    slope_low: float = 0.0
    per_subject: bool = False

    def __post_init__(self):
        if self.kind not in EFFECT_KINDS:
            raise DataValidationError(f"effect {self.covariate!r}: unknown kind {self.kind!r}")
        if not self.high > self.low:
            raise DataValidationError(f"effect {self.covariate!r}: needs high > low")
        if self.kind == "piecewise_linear" and self.break_at is None:
            raise DataValidationError(f"effect {self.covariate!r}: piecewise_linear needs break_at")

    def value(self, x):
        """True effect on the log hazard, centred over the covariate range."""
        x = np.asarray(x, dtype=float)
        u = (x - self.low) / (self.high - self.low)
        if self.kind == "zero":
            out = np.zeros_like(u)
        elif self.kind == "linear":
            out = self.amplitude * (u - 0.5)
        elif self.kind == "sine":
            out = self.amplitude * np.sin(2.0 * np.pi * self.cycles * u)
        else:
            out = self.slope_low * np.minimum(x, self.break_at) + self.amplitude * np.maximum(
                x - self.break_at, 0.0
            )
            # centre analytically over [low, high]
            b, lo, hi = self.break_at, self.low, self.high
            width = hi - lo
            mean_lowpart = self.slope_low * (
                (b * b - lo * lo) / 2.0 + b * (hi - b)
            ) / width if b < hi else self.slope_low * (hi * hi - lo * lo) / (2.0 * width)
            mean_highpart = self.amplitude * (hi - b) ** 2 / (2.0 * width) if b < hi else 0.0
            out = out - mean_lowpart - mean_highpart
        return out if out.shape else float(out)


@dataclass(frozen=True)
class SimSpec:
    n_subjects: int
    n_locations: int = 1
    frailty_sd: float = 0.0
    effects: tuple[EffectSpec, ...] = ()
    baseline_rate: float = 0.05
    year_start: int = 0
    year_end: int = 10
    entry: tuple = ("fixed", 0)  # ("fixed", year) or ("uniform", lo, hi)
    censor_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.baseline_rate <= 0:
            raise DataValidationError("baseline hazard must be positive")
        if not 0.0 <= self.censor_rate < 1.0:
            raise DataValidationError("censoring rate must be in [0, 1)")
        if self.year_end <= self.year_start:
            raise DataValidationError("year_end must exceed year_start")

    @classmethod
    def from_dict(cls, doc: dict) -> "SimSpec":
        effects = tuple(EffectSpec(**e) for e in doc.get("effects", []))
        entry = doc.get("entry", ("fixed", doc.get("year_start", 0)))
        return cls(
            n_subjects=int(doc["n_subjects"]),
            n_locations=int(doc.get("n_locations", 1)),
            frailty_sd=float(doc.get("frailty_sd", 0.0)),
            effects=effects,
            baseline_rate=float(doc.get("baseline_rate", 0.05)),
            year_start=int(doc.get("year_start", 0)),
            year_end=int(doc.get("year_end", 10)),
            entry=tuple(entry),
            censor_rate=float(doc.get("censor_rate", 0.0)),
            seed=int(doc.get("seed", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SimSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"simulation spec is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


@dataclass
class SimTruth:
    frailty_sd: float
    frailty: dict[str, float]
    effects: list[dict]
    baseline_rate: float
    seed: int

    def to_dict(self) -> dict:
        return {
            "frailty_sd": self.frailty_sd,
            "frailty": self.frailty,
            "effects": self.effects,
            "baseline_rate": self.baseline_rate,
            "seed": self.seed,
        }


def _entry_year(spec: SimSpec, rng) -> int:
    kind = spec.entry[0]
    if kind == "fixed":
        return int(spec.entry[1])
    if kind == "uniform":
        lo, hi = int(spec.entry[1]), int(spec.entry[2])
        return int(rng.integers(lo, hi + 1))
    raise DataValidationError(f"unknown entry distribution {kind!r}")


def simulate_cohort(spec: SimSpec) -> tuple[CohortTable, SimTruth]:
    """Simulate a counting-process cohort plus its ground-truth record."""
    master = np.random.SeedSequence(spec.seed)
    streams = master.spawn(spec.n_subjects + 1)
    rng0 = np.random.default_rng(streams[0])
    frailty = rng0.normal(0.0, spec.frailty_sd, spec.n_locations) if spec.frailty_sd > 0 else np.zeros(spec.n_locations)
    loc_width = max(3, len(str(spec.n_locations)))
    sub_width = max(4, len(str(spec.n_subjects)))

    intervals: list[SubjectInterval] = []
    n_events = 0
    for i in range(spec.n_subjects):
        rng = np.random.default_rng(streams[i + 1])
        loc = int(rng.integers(0, spec.n_locations))
        entry = _entry_year(spec, rng)
        entry = min(max(entry, spec.year_start), spec.year_end - 1)
        sid = f"s{i:0{sub_width}d}"
        lid = f"loc{loc:0{loc_width}d}"
        fixed_values = {
            e.covariate: float(rng.uniform(e.low, e.high)) for e in spec.effects if e.per_subject
        }
        for year in range(entry, spec.year_end):
            values = dict(fixed_values)
            for e in spec.effects:
                if not e.per_subject:
                    values[e.covariate] = float(rng.uniform(e.low, e.high))
            eta = float(sum(e.value(values[e.covariate]) for e in spec.effects)) + float(frailty[loc])
            rate = spec.baseline_rate * np.exp(eta)
            p_event = -np.expm1(-rate)
            u_event = rng.uniform()
            u_censor = rng.uniform()
            is_event = u_event < p_event
            intervals.append(
                SubjectInterval(
                    subject_id=sid,
                    location_id=lid,
                    t_start=float(year),
                    t_stop=float(year + 1),
                    event=bool(is_event),
                    covariates=values,
                )
            )
            if is_event:
                n_events += 1
                break
            if spec.censor_rate > 0.0 and u_censor < spec.censor_rate:
                break

    if n_events == 0:
        raise DataValidationError(
            "simulation produced no events; increase baseline_rate, horizon or cohort size"
        )
    cohort = CohortTable(
        intervals=tuple(intervals),
        covariate_names=tuple(e.covariate for e in spec.effects),
    )
    grid_effects = []
    for e in spec.effects:
        grid = np.linspace(e.low, e.high, 101)
        grid_effects.append(
            {
                "covariate": e.covariate,
                "kind": e.kind,
                "break_at": e.break_at,
                "grid": [float(g) for g in grid],
                "values": [float(v) for v in np.atleast_1d(e.value(grid))],
            }
        )
    truth = SimTruth(
        frailty_sd=spec.frailty_sd,
        frailty={f"loc{j:0{loc_width}d}": float(frailty[j]) for j in range(spec.n_locations)},
        effects=grid_effects,
        baseline_rate=spec.baseline_rate,
        seed=spec.seed,
    )
    return cohort, truth
