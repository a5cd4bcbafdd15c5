"""Pydantic request/response models for the HTTP service.

Cohorts travel as CSV text (the on-disk interchange format), model and
simulation specs as their JSON documents, results as the same payloads the
CLI writes to disk.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class IngestRequest(BaseModel):
    csv_text: str


class IngestResponse(BaseModel):
    n_intervals: int
    n_subjects: int
    n_events: int
    covariates: list[str]
    event_times: list[float]
    risk_set_sizes: list[int]


class KMRequest(BaseModel):
    csv_text: str
    group: str | None = None


class KMCurveModel(BaseModel):
    group: str
    times: list[float]
    survival: list[float]
    n_risk: list[int]
    n_event: list[int]
    censor_marks: list[float]


class KMResponse(BaseModel):
    curves: list[KMCurveModel]
    csv: str


class FitRequest(BaseModel):
    csv_text: str
    model_spec: dict
    k_default: int = Field(default=10, ge=4)


class FitResponse(BaseModel):
    fit: dict
    curves_csv: str


class CompareRequest(BaseModel):
    csv_text: str
    model_specs: list[dict]
    labels: list[str] | None = None
    k_default: int = Field(default=10, ge=4)


class CompareResponse(BaseModel):
    table: list[dict]


class SelectRequest(BaseModel):
    csv_text: str
    model_spec: dict
    seed: int
    k_default: int = Field(default=10, ge=4)
    m_forward: int | None = Field(default=None, ge=1)


class SelectResponse(BaseModel):
    fit: dict
    trace: dict
    curves_csv: str


class ThresholdRequest(BaseModel):
    csv_text: str
    model_spec: dict
    term: str
    seed: int
    b_samples: int = Field(default=1000, ge=1)
    k_default: int = Field(default=10, ge=4)
    restrict_positive_slope: bool = True


class ThresholdResponse(BaseModel):
    fit: dict
    breakpoint: dict
    curve_csv: str


class SimulateRequest(BaseModel):
    sim_spec: dict


class SimulateResponse(BaseModel):
    cohort_csv: str
    truth: dict
    n_intervals: int
    n_events: int


class VersionResponse(BaseModel):
    package: str
    version: str
