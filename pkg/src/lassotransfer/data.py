"""Validated containers shared by the solver and the pipelines.

Conventions:
  * gaussian / binomial responses are 1-d; binomial y is coded 0/1.
  * multinomial responses are integer labels 1..K with every class present.
  * multigaussian responses are real n x K matrices.
  * group labels are integers 1..G with every label occupied.
  * a fixed offset enters the linear predictor with coefficient locked at 1;
    multiclass offsets are n x K.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidFamily, InvalidGrouping, InvalidTreatment

FAMILY_KINDS = ("gaussian", "binomial", "multinomial", "multigaussian")


@dataclass(frozen=True)
class Family:
    """Response family. ``n_outputs`` is the class count for multinomial and
    the response-column count for multigaussian; it is 1 otherwise."""

    kind: str
    n_outputs: int = 1

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise InvalidFamily(f"unknown family kind {self.kind!r}")
        if self.kind in ("gaussian", "binomial"):
            if self.n_outputs != 1:
                raise InvalidFamily(f"{self.kind} family is single-output")
        elif self.n_outputs < 2:
            raise InvalidFamily(f"{self.kind} family needs n_outputs >= 2")

    @property
    def is_multioutput(self) -> bool:
        return self.kind in ("multinomial", "multigaussian")


GAUSSIAN = Family("gaussian")
BINOMIAL = Family("binomial")


def multinomial(n_classes: int) -> Family:
    return Family("multinomial", n_classes)


def multigaussian(n_responses: int) -> Family:
    return Family("multigaussian", n_responses)


def _as_float_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("x must be a 2-d array")
    return x


def validate_group_labels(group: np.ndarray, n: int) -> int:
    """Check labels are integers 1..G, every label occupied; return G."""
    group = np.asarray(group)
    if group.shape != (n,):
        raise InvalidGrouping("group labels must be one per observation")
    if not np.issubdtype(group.dtype, np.integer):
        if not np.all(group == np.floor(group)):
            raise InvalidGrouping("group labels must be integers")
        group = group.astype(np.int64)
    ngroups = int(group.max(initial=0))
    if group.min(initial=1) < 1 or ngroups < 1:
        raise InvalidGrouping("group labels must start at 1")
    present = np.unique(group)
    if present.size != ngroups:
        missing = sorted(set(range(1, ngroups + 1)) - set(present.tolist()))
        raise InvalidGrouping(f"group labels {missing} are unoccupied")
    return ngroups


@dataclass
class Dataset:
    """Design matrix plus response and optional structure columns.

    All invariants are checked at construction: finite x and y, matching
    shapes, response coding consistent with ``family``, occupied group
    labels, binary treatment with both arms.
    """

    x: np.ndarray
    y: np.ndarray
    family: Family
    group: np.ndarray | None = None
    treatment: np.ndarray | None = None
    fixed_offset: np.ndarray | None = None
    feature_names: list[str] | None = None
    n_groups: int = field(init=False, default=0)

    def __post_init__(self):
        self.x = _as_float_matrix(self.x)
        n, p = self.x.shape
        if n == 0 or p == 0:
            raise ValueError("x must have at least one row and one column")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("x contains non-finite values")

        self.y = np.asarray(self.y, dtype=np.float64)
        kind = self.family.kind
        if kind == "multigaussian":
            if self.y.shape != (n, self.family.n_outputs):
                raise ValueError(
                    f"y must be {n} x {self.family.n_outputs} for this family"
                )
        else:
            if self.y.shape != (n,):
                raise ValueError("y must be one value per observation")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("y contains non-finite values")
        if kind == "binomial":
            vals = np.unique(self.y)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError("binomial y must be coded 0/1")
            if vals.size < 2:
                raise ValueError("binomial y must contain both classes")
        elif kind == "multinomial":
            k = self.family.n_outputs
            if not np.all(self.y == np.floor(self.y)):
                raise ValueError("multinomial y must be integer labels")
            labels = np.unique(self.y.astype(np.int64))
            if labels.min() < 1 or labels.max() > k:
                raise ValueError(f"multinomial labels must lie in 1..{k}")
            if labels.size != k:
                raise ValueError(f"all {k} classes must be present")

        if self.group is not None:
            self.n_groups = validate_group_labels(self.group, n)
            self.group = np.asarray(self.group, dtype=np.int64)

        if self.treatment is not None:
            w = np.asarray(self.treatment, dtype=np.float64)
            if w.shape != (n,) or not np.all(np.isin(np.unique(w), (0.0, 1.0))):
                raise InvalidTreatment("treatment must be one 0/1 value per row")
            if np.unique(w).size < 2:
                raise InvalidTreatment("both treatment arms must be present")
            self.treatment = w

        if self.fixed_offset is not None:
            off = np.asarray(self.fixed_offset, dtype=np.float64)
            want = (n, self.family.n_outputs) if self.family.is_multioutput else (n,)
            if off.shape != want:
                raise ValueError(f"fixed_offset must have shape {want}")
            if not np.all(np.isfinite(off)):
                raise ValueError("fixed_offset contains non-finite values")
            self.fixed_offset = off

        if self.feature_names is not None and len(self.feature_names) != p:
            raise ValueError("feature_names length must match feature count")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def rows(self, idx: np.ndarray) -> "Dataset":
        """Row-subset with structure columns carried along; group labels are
        dropped (subsets rarely keep every label occupied)."""
        return Dataset(
            x=self.x[idx],
            y=self.y[idx],
            family=self.family,
            treatment=None if self.treatment is None else self.treatment[idx],
            fixed_offset=None if self.fixed_offset is None else self.fixed_offset[idx],
            feature_names=self.feature_names,
        )


@dataclass
class PenaltySpec:
    """Penalty configuration for one path fit.

    ``penalty_factors`` may contain 0 (never penalized) and +inf (excluded).
    Finite factors are rescaled internally to mean 1. ``lambda_sequence``
    overrides the automatic path (must be positive and strictly decreasing).
    """

    penalty_factors: np.ndarray | None = None
    lambda_sequence: np.ndarray | None = None
    lambda_count: int = 100
    lambda_min_ratio: float | None = None

    def resolve_factors(self, p: int) -> np.ndarray:
        if self.penalty_factors is None:
            return np.ones(p)
        pf = np.asarray(self.penalty_factors, dtype=np.float64).copy()
        if pf.shape != (p,):
            raise ValueError(f"penalty_factors must have length {p}")
        if np.any(np.isnan(pf)) or np.any(pf < 0):
            raise ValueError("penalty_factors must be >= 0 and not NaN")
        return pf

    def resolve_lambdas(self) -> np.ndarray | None:
        if self.lambda_sequence is None:
            if self.lambda_count < 1:
                raise ValueError("lambda_count must be >= 1")
            return None
        lam = np.asarray(self.lambda_sequence, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError("lambda_sequence must be a non-empty 1-d array")
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambda_sequence must be finite and >= 0")
        if lam.size > 1 and not np.all(np.diff(lam) < 0):
            raise ValueError("lambda_sequence must be strictly decreasing")
        return lam


@dataclass
class Controls:
    """Solver tolerances and switches."""

    coef_tol: float = 1e-7
    kkt_tol: float = 1e-7
    max_sweeps: int = 10_000
    max_outer: int = 200
    prob_clamp: float = 1e-5
    standardize: bool = True
    fit_intercept: bool = True


DEFAULT_CONTROLS = Controls()
