"""Glue between pseudo-data and penalized designs for a model spec."""

from __future__ import annotations

import numpy as np

from .coxpois import PseudoData
from .errors import DataValidationError
from .smooths import ModelSpec, PenalizedBlock, PenalizedDesign, TermSpec, assemble_design, make_block

GROUP_COLUMNS = ("location_id", "subject_id")


def term_values(pseudo: PseudoData, term: TermSpec) -> np.ndarray:
    if term.kind == "random_effect" and term.covariate in GROUP_COLUMNS:
        return pseudo.groups[term.covariate]
    if term.covariate not in pseudo.covariates:
        raise DataValidationError(f"term {term.name!r}: covariate {term.covariate!r} not in data")
    return pseudo.covariates[term.covariate]


def blocks_from_pseudo(pseudo: PseudoData, spec: ModelSpec) -> dict[str, PenalizedBlock]:
    return {term.name: make_block(term, term_values(pseudo, term)) for term in spec.terms}


def design_from_blocks(
    pseudo: PseudoData,
    spec: ModelSpec,
    blocks: dict[str, PenalizedBlock],
    term_names: list[str] | None = None,
    select_terms: set[str] | None = None,
) -> PenalizedDesign:
    """Assemble the design for a subset of terms, stratified by event time."""
    if term_names is None:
        term_names = [t.name for t in spec.terms]
    ordered = [t.name for t in spec.terms if t.name in set(term_names)]
    return assemble_design(
        [blocks[name] for name in ordered],
        stratum=pseudo.stratum,
        n_strata=pseudo.n_strata,
        event_levels=pseudo.event_times,
        select_terms=select_terms,
    )


def design_from_pseudo(
    pseudo: PseudoData, spec: ModelSpec, select_terms: set[str] | None = None
) -> PenalizedDesign:
    blocks = blocks_from_pseudo(pseudo, spec)
    return design_from_blocks(pseudo, spec, blocks, select_terms=select_terms)
