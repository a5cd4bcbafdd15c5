"""Model terms: spline bases, penalties, constraints and design assembly.

Smooth terms use cubic regression splines parameterized by their values at
knots placed at quantiles of the unique covariate values.  In that
parameterization the integrated squared second derivative of the spline is
an exact quadratic form beta' S beta, so S doubles as the wiggliness
penalty.  Sum-to-zero identifiability constraints are absorbed into the
basis by an orthogonal reparameterization rather than by dropping a column,
which keeps the penalty well defined.  Random-effect (frailty) blocks are
indicator columns with an identity penalty; the associated smoothing
parameter is the inverse variance of the effect.

Selectable smooth terms additionally carry a shrinkage penalty on the null
space of their wiggliness penalty, so that smoothing-parameter estimation
can remove a term from the model entirely.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataValidationError

TERM_KINDS = ("spline", "linear", "random_effect")

# Eigenvalues below this fraction of the largest count as zero when the
# penalty null space is extracted.
NULL_SPACE_TOL = 1e-10

DEFAULT_K = 10


@dataclass(frozen=True)
class TermSpec:
    name: str
    kind: str
    covariate: str
    k: int = DEFAULT_K
    fixed_in_model: bool = False

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise DataValidationError(f"term {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "spline" and self.k < 4:
            raise DataValidationError(f"term {self.name!r}: spline basis needs k >= 4")


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[TermSpec, ...]

    def __post_init__(self):
        names = [t.name for t in self.terms]
        if len(set(names)) != len(names):
            raise DataValidationError("duplicate term names in model spec")

    @property
    def min_model_terms(self) -> tuple[TermSpec, ...]:
        return tuple(t for t in self.terms if t.fixed_in_model)

    @property
    def selectable_terms(self) -> tuple[TermSpec, ...]:
        return tuple(t for t in self.terms if not t.fixed_in_model)

    def term(self, name: str) -> TermSpec:
        for t in self.terms:
            if t.name == name:
                return t
        raise DataValidationError(f"unknown term {name!r}")

    def subset(self, names) -> "ModelSpec":
        keep = set(names)
        return ModelSpec(terms=tuple(t for t in self.terms if t.name in keep))

    @classmethod
    def from_dict(cls, doc: dict, k_default: int = DEFAULT_K) -> "ModelSpec":
        if "terms" not in doc:
            raise DataValidationError("model spec document needs a 'terms' list")
        min_model = set(doc.get("min_model", []))
        terms = []
        for raw in doc["terms"]:
            name = raw.get("name") or raw.get("covariate")
            if name is None:
                raise DataValidationError("each term needs a 'name' or 'covariate'")
            terms.append(
                TermSpec(
                    name=name,
                    kind=raw.get("kind", "spline"),
                    covariate=raw.get("covariate", name),
                    k=int(raw.get("k", k_default)),
                    fixed_in_model=bool(raw.get("fixed", False)) or name in min_model,
                )
            )
        spec = cls(terms=tuple(terms))
        known = {t.name for t in terms}
        unknown = min_model - known
        if unknown:
            raise DataValidationError(f"min_model names not among terms: {sorted(unknown)}")
        return spec

    @classmethod
    def from_json(cls, text: str, k_default: int = DEFAULT_K) -> "ModelSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"model spec is not valid JSON: {exc}") from None
        return cls.from_dict(doc, k_default=k_default)

    def to_dict(self) -> dict:
        return {
            "terms": [
                {
                    "name": t.name,
                    "kind": t.kind,
                    "covariate": t.covariate,
                    "k": t.k,
                    "fixed": t.fixed_in_model,
                }
                for t in self.terms
            ],
            "min_model": [t.name for t in self.min_model_terms],
        }


# ---------------------------------------------------------------------------
# Cubic regression spline internals (values-at-knots parameterization).
# ---------------------------------------------------------------------------


def _cr_penalty_parts(knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (S_raw, F_full) for a natural cubic spline on the given knots.

    F_full maps values at knots to second derivatives at knots (zero at the
    boundary knots); S_raw is the exact integral of the squared second
    derivative as a quadratic form in the knot values.
    """
    k = knots.size
    h = np.diff(knots)
    D = np.zeros((k - 2, k))
    B = np.zeros((k - 2, k - 2))
    for i in range(k - 2):
        D[i, i] = 1.0 / h[i]
        D[i, i + 1] = -1.0 / h[i] - 1.0 / h[i + 1]
        D[i, i + 2] = 1.0 / h[i + 1]
        B[i, i] = (h[i] + h[i + 1]) / 3.0
        if i + 1 < k - 2:
            B[i, i + 1] = h[i + 1] / 6.0
            B[i + 1, i] = h[i + 1] / 6.0
    F = np.linalg.solve(B, D)
    S_raw = D.T @ F
    S_raw = 0.5 * (S_raw + S_raw.T)
    F_full = np.zeros((k, k))
    F_full[1:-1, :] = F
    return S_raw, F_full


def _cr_basis(x: np.ndarray, knots: np.ndarray, F_full: np.ndarray) -> np.ndarray:
    """Evaluate the values-at-knots basis at x (linear beyond the knot range)."""
    x = np.asarray(x, dtype=float)
    k = knots.size
    h = np.diff(knots)
    a = np.zeros((x.size, k))
    c = np.zeros((x.size, k))

    inside = (x >= knots[0]) & (x <= knots[-1])
    xi = x[inside]
    j = np.clip(np.searchsorted(knots, xi, side="right") - 1, 0, k - 2)
    hj = h[j]
    left = knots[j]
    right = knots[j + 1]
    a_minus = (right - xi) / hj
    a_plus = (xi - left) / hj
    c_minus = ((right - xi) ** 3 / hj - hj * (right - xi)) / 6.0
    c_plus = ((xi - left) ** 3 / hj - hj * (xi - left)) / 6.0
    rows = np.flatnonzero(inside)
    a[rows, j] += a_minus
    a[rows, j + 1] += a_plus
    c[rows, j] += c_minus
    c[rows, j + 1] += c_plus

    below = x < knots[0]
    if np.any(below):
        d = x[below] - knots[0]
        rows = np.flatnonzero(below)
        a[rows, 0] += 1.0 - d / h[0]
        a[rows, 1] += d / h[0]
        c[rows, 1] += -d * h[0] / 6.0
    above = x > knots[-1]
    if np.any(above):
        d = x[above] - knots[-1]
        rows = np.flatnonzero(above)
        a[rows, -1] += 1.0 + d / h[-1]
        a[rows, -2] += -d / h[-1]
        c[rows, -2] += d * h[-1] / 6.0

    return a + c @ F_full


@dataclass(frozen=True)
class PenalizedBlock:
    """One model term: evaluated columns plus its penalties.

    ``columns`` hold the basis evaluated at the build rows after the
    constraint transform.  ``S_wiggle`` is the smoothing penalty in the
    constrained basis (identity for random effects, absent for plain linear
    terms); ``S_null`` is the optional null-space shrinkage penalty used for
    term selection.
    """

    term: TermSpec
    columns: np.ndarray
    S_wiggle: np.ndarray | None
    S_null: np.ndarray | None
    knots: np.ndarray | None
    # evaluation state
    center: float = 0.0
    scale: float = 1.0
    constraint: np.ndarray | None = None  # k x (k-1) orthonormal transform
    F_full: np.ndarray | None = None
    levels: tuple | None = None
    x_min: float = float("nan")
    x_max: float = float("nan")

    @property
    def width(self) -> int:
        return self.columns.shape[1]

    @property
    def null_rank(self) -> int:
        return 0 if self.S_null is None else int(round(np.trace(self.S_null)))

    def evaluate(self, x) -> np.ndarray:
        """Evaluate the constrained basis at new covariate values."""
        if self.term.kind == "spline":
            z = (np.asarray(x, dtype=float) - self.center) / self.scale
            return _cr_basis(z, self.knots, self.F_full) @ self.constraint
        if self.term.kind == "linear":
            z = (np.asarray(x, dtype=float) - self.center) / self.scale
            return z.reshape(-1, 1)
        index = {lev: i for i, lev in enumerate(self.levels)}
        x = np.asarray(x)
        out = np.zeros((x.size, len(self.levels)))
        for row, lev in enumerate(x):
            try:
                out[row, index[lev]] = 1.0
            except KeyError:
                raise DataValidationError(
                    f"term {self.term.name!r}: unseen level {lev!r}"
                ) from None
        return out


def cubic_spline_block(x: np.ndarray, term: TermSpec) -> PenalizedBlock:
    """Build a centred cubic regression spline block for covariate values x.

    Knots sit at quantiles of the unique (standardized) values; the
    sum-to-zero constraint over the build rows is absorbed so the returned
    basis has k-1 columns and a wiggliness penalty whose null space is the
    linear trend only.
    """
    x = np.asarray(x, dtype=float)
    k = term.k
    uniq = np.unique(x)
    if uniq.size < k:
        raise DataValidationError(
            f"term {term.name!r}: needs at least k={k} distinct values, got {uniq.size}"
        )
    center = float(np.mean(x))
    scale = float(np.std(x))
    z = (x - center) / scale
    zu = (uniq - center) / scale
    knots = np.quantile(zu, np.linspace(0.0, 1.0, k))
    S_raw, F_full = _cr_penalty_parts(knots)
    X_raw = _cr_basis(z, knots, F_full)

    # Absorb the sum-to-zero constraint: columns of Z span the null space of
    # the column-mean functional, so X_raw @ Z has zero column sums.
    c = X_raw.mean(axis=0)
    q, _ = np.linalg.qr(c.reshape(-1, 1), mode="complete")
    Z = q[:, 1:]
    columns = X_raw @ Z
    S = Z.T @ S_raw @ Z
    S = 0.5 * (S + S.T)
    return PenalizedBlock(
        term=term,
        columns=columns,
        S_wiggle=S,
        S_null=None,
        knots=knots,
        center=center,
        scale=scale,
        constraint=Z,
        F_full=F_full,
        x_min=float(np.min(x)),
        x_max=float(np.max(x)),
    )


def linear_block(x: np.ndarray, term: TermSpec) -> PenalizedBlock:
    x = np.asarray(x, dtype=float)
    scale = float(np.std(x))
    if scale == 0.0:
        raise DataValidationError(f"term {term.name!r}: covariate is constant")
    center = float(np.mean(x))
    cols = ((x - center) / scale).reshape(-1, 1)
    return PenalizedBlock(
        term=term,
        columns=cols,
        S_wiggle=None,
        S_null=None,
        knots=None,
        center=center,
        scale=scale,
        x_min=float(np.min(x)),
        x_max=float(np.max(x)),
    )


def random_effect_block(group: np.ndarray, term: TermSpec) -> PenalizedBlock:
    """Indicator block per group level with an identity penalty.

    The smoothing parameter attached to this block acts as the inverse
    variance of the Gaussian random effect.
    """
    values = np.asarray(group)
    levels = tuple(sorted(set(values.tolist())))
    if len(levels) < 2:
        raise DataValidationError(f"term {term.name!r}: grouping factor has a single level")
    index = {lev: i for i, lev in enumerate(levels)}
    cols = np.zeros((values.size, len(levels)))
    for row, lev in enumerate(values):
        cols[row, index[lev]] = 1.0
    return PenalizedBlock(
        term=term,
        columns=cols,
        S_wiggle=np.eye(len(levels)),
        S_null=None,
        knots=None,
        levels=levels,
    )


def null_shrinkage_penalty(block: PenalizedBlock) -> PenalizedBlock:
    """Attach the null-space shrinkage penalty S_null = U0 U0' to a block.

    U0 spans the (tolerance-thresholded) zero-eigenvalue space of S_wiggle.
    For a block whose penalty is already full rank the shrinkage penalty is
    zero and a warning is issued; plain linear blocks get an identity
    shrinkage penalty so they too can be penalized out of a model.
    """
    if block.term.kind == "linear":
        return replace(block, S_null=np.eye(block.width))
    if block.S_wiggle is None:
        raise DataValidationError(f"term {block.term.name!r}: no penalty to derive a null space from")
    vals, vecs = np.linalg.eigh(block.S_wiggle)
    null_mask = vals < NULL_SPACE_TOL * float(vals.max())
    U0 = vecs[:, null_mask]
    if U0.shape[1] == 0:
        warnings.warn(
            f"term {block.term.name!r}: penalty has full rank, shrinkage penalty is zero",
            stacklevel=2,
        )
        return replace(block, S_null=np.zeros_like(block.S_wiggle))
    return replace(block, S_null=U0 @ U0.T)


# ---------------------------------------------------------------------------
# Design assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Penalty:
    """One smoothing penalty: a block-local matrix and its column range."""

    name: str
    matrix: np.ndarray
    col_slice: slice
    term_name: str


@dataclass(frozen=True)
class PenalizedDesign:
    X: np.ndarray
    stratum_slice: slice
    blocks: tuple[PenalizedBlock, ...]
    block_slices: tuple[slice, ...]
    penalties: tuple[Penalty, ...]
    event_levels: np.ndarray  # stratum level values (event times)

    @property
    def total_p(self) -> int:
        return self.X.shape[1]

    @property
    def n_strata(self) -> int:
        return self.stratum_slice.stop - self.stratum_slice.start

    def block_for(self, term_name: str) -> tuple[PenalizedBlock, slice]:
        for block, sl in zip(self.blocks, self.block_slices):
            if block.term.name == term_name:
                return block, sl
        raise DataValidationError(f"design has no term {term_name!r}")

    def penalty_full(self, lam: np.ndarray) -> np.ndarray:
        """Assemble sum_j lambda_j S_j embedded in the full coefficient space."""
        S = np.zeros((self.total_p, self.total_p))
        for lam_j, pen in zip(lam, self.penalties):
            S[pen.col_slice, pen.col_slice] += lam_j * pen.matrix
        return S


def make_block(term: TermSpec, values: np.ndarray) -> PenalizedBlock:
    if term.kind == "spline":
        return cubic_spline_block(values, term)
    if term.kind == "linear":
        return linear_block(values, term)
    return random_effect_block(values, term)


def assemble_design(
    blocks: list[PenalizedBlock],
    stratum: np.ndarray,
    n_strata: int,
    event_levels: np.ndarray | None = None,
    select_terms: set[str] | None = None,
) -> PenalizedDesign:
    """Combine blocks and the event-time stratum factor into one design.

    ``select_terms`` names blocks that should carry their null-space
    shrinkage penalty in addition to the wiggliness penalty.
    """
    stratum = np.asarray(stratum, dtype=int)
    n = stratum.size
    strata_cols = np.zeros((n, n_strata))
    strata_cols[np.arange(n), stratum] = 1.0

    select_terms = select_terms or set()
    parts = [strata_cols]
    block_slices = []
    penalties = []
    offset = n_strata
    out_blocks = []
    for block in blocks:
        if block.columns.shape[0] != n:
            raise DataValidationError(
                f"term {block.term.name!r}: block has {block.columns.shape[0]} rows, design has {n}"
            )
        if block.term.name in select_terms and block.S_null is None:
            block = null_shrinkage_penalty(block)
        sl = slice(offset, offset + block.width)
        if block.S_wiggle is not None:
            penalties.append(
                Penalty(name=block.term.name, matrix=block.S_wiggle, col_slice=sl, term_name=block.term.name)
            )
        if block.term.name in select_terms:
            penalties.append(
                Penalty(
                    name=f"{block.term.name}:null",
                    matrix=block.S_null,
                    col_slice=sl,
                    term_name=block.term.name,
                )
            )
        parts.append(block.columns)
        block_slices.append(sl)
        out_blocks.append(block)
        offset += block.width

    X = np.concatenate(parts, axis=1)
    if event_levels is None:
        event_levels = np.arange(n_strata, dtype=float)
    return PenalizedDesign(
        X=X,
        stratum_slice=slice(0, n_strata),
        blocks=tuple(out_blocks),
        block_slices=tuple(block_slices),
        penalties=tuple(penalties),
        event_levels=np.asarray(event_levels, dtype=float),
    )
