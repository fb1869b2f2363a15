"""Two-step pretrained lasso for fixed observation groups.

Stage one fits a single path on all rows and picks a lambda by
cross-validation. Stage two refits each group with two transfer primitives
derived from the stage-one solution at strength ``alpha``:

  * a fixed offset (1 - alpha) * (x beta0 + mu0) added to the linear
    predictor with coefficient locked at 1, and
  * penalty factors of 1 on the stage-one support and 1/alpha off it
    (alpha = 0 excludes off-support features outright; alpha = 1 is an
    ordinary lasso on the group alone).

``alpha`` is chosen per group by a second cross-validation; the final group
fit is the full-group path the selection already computed. Prediction on new
rows rebuilds the offset from the stored stage-one recipe, so models remain
usable without the training data.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Controls, Dataset, Family, PenaltySpec
from .exceptions import (
    DegenerateTransfer,
    GroupTooSmall,
    InvalidFamily,
    InvalidGrouping,
    UnknownGroup,
)
from .selection import RELAXED_FOLD_CONTROLS, CvFit, cv_path, make_folds
from .solver import PathFit, lambda_max

DEFAULT_ALPHA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))

#: grid floor for internal classification fits: CV optima for binomial and
#: multinomial responses sit well above the saturated tail, which dominates
#: path cost
CLASSIFICATION_MIN_RATIO = 0.01


def _support_rows(beta) -> np.ndarray:
    nz = beta != 0.0 if beta.ndim == 1 else np.any(beta != 0.0, axis=1)
    return np.flatnonzero(nz)


@dataclass
class TransferArtifact:
    """Portable stage-one summary: everything a downstream fit needs to
    apply the offset/penalty-factor recipe to its own rows."""

    family: Family
    mu0: float | np.ndarray
    beta0: np.ndarray
    support: np.ndarray
    alpha: float
    source_lambda: float

    def __post_init__(self):
        self.beta0 = np.asarray(self.beta0, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=np.int64)
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not np.array_equal(self.support, _support_rows(self.beta0)):
            raise ValueError("support must be exactly the nonzero rows of beta0")

    @property
    def p(self) -> int:
        return self.beta0.shape[0]

    def link(self, x_rows) -> np.ndarray:
        x_rows = np.asarray(x_rows, dtype=np.float64)
        return x_rows @ self.beta0 + self.mu0

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        idx = self.support.tolist()
        val = self.beta0[self.support].tolist()
        mu0 = self.mu0.tolist() if isinstance(self.mu0, np.ndarray) else float(self.mu0)
        return {
            "schema_version": 1,
            "family": self.family.kind,
            "n_outputs": self.family.n_outputs,
            "n_features": self.p,
            "mu0": mu0,
            "beta0": {"index": idx, "value": val},
            "support": idx,
            "alpha": float(self.alpha),
            "source_lambda": float(self.source_lambda),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "TransferArtifact":
        fam = Family(d["family"], d.get("n_outputs", 1))
        mu0 = d["mu0"]
        mu0 = np.asarray(mu0, dtype=np.float64) if isinstance(mu0, list) else float(mu0)
        shape = (d["n_features"],) if fam.n_outputs == 1 else (d["n_features"], fam.n_outputs)
        beta0 = np.zeros(shape)
        idx = np.asarray(d["beta0"]["index"], dtype=np.int64)
        if idx.size:
            beta0[idx] = np.asarray(d["beta0"]["value"], dtype=np.float64)
        return cls(
            family=fam,
            mu0=mu0,
            beta0=beta0,
            support=idx,
            alpha=float(d["alpha"]),
            source_lambda=float(d["source_lambda"]),
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_json(cls, s: str) -> "TransferArtifact":
        return cls.from_json_dict(json.loads(s))


def extract_artifact(fit: PathFit, lambda_index: int, alpha: float = 1.0) -> TransferArtifact:
    """Freeze one path solution into a TransferArtifact."""
    icpt = fit.intercepts[lambda_index]
    return TransferArtifact(
        family=fit.family,
        mu0=icpt.copy() if isinstance(icpt, np.ndarray) else float(icpt),
        beta0=fit.coefficients[lambda_index].copy(),
        support=fit.support(lambda_index),
        alpha=alpha,
        source_lambda=float(fit.lambdas[lambda_index]),
    )


def _transfer_recipe(mu0, beta0, support, alpha, x_rows):
    x_rows = np.asarray(x_rows, dtype=np.float64)
    p = beta0.shape[0]
    if x_rows.ndim != 2 or x_rows.shape[1] != p:
        raise ValueError(f"x_rows must have {p} columns")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 1.0:
        offset = np.zeros(
            x_rows.shape[0] if beta0.ndim == 1 else (x_rows.shape[0], beta0.shape[1])
        )
        return offset, np.ones(p)
    offset = (1.0 - alpha) * (x_rows @ beta0 + mu0)
    pf = np.ones(p)
    off_s = np.ones(p, dtype=bool)
    off_s[support] = False
    with np.errstate(divide="ignore"):
        pf[off_s] = np.inf if alpha == 0.0 else 1.0 / alpha
    if alpha == 0.0 and len(support) == 0:
        warnings.warn(
            "empty stage-one support with alpha = 0 leaves no usable features;"
            " the second stage will be intercept-only",
            DegenerateTransfer,
        )
    return offset, pf


def build_transfer(first_stage: PathFit, lambda_choice: int, alpha: float, x_rows):
    """Offset and penalty factors for a second-stage fit on ``x_rows``.

    offset = (1 - alpha) * (x beta0 + mu0); factors are 1 on the stage-one
    support and 1/alpha off it (+inf at alpha = 0). At alpha = 1 the offset
    is identically zero and all factors are 1.
    """
    return _transfer_recipe(
        first_stage.intercepts[lambda_choice],
        first_stage.coefficients[lambda_choice],
        first_stage.support(lambda_choice),
        alpha,
        x_rows,
    )


def artifact_transfer(artifact: TransferArtifact, alpha: float, x_rows):
    """Same recipe as :func:`build_transfer`, from a stored artifact."""
    return _transfer_recipe(
        artifact.mu0, artifact.beta0, artifact.support, alpha, x_rows
    )


# ---------------------------------------------------------------------------
# the two-step pipeline
# ---------------------------------------------------------------------------


@dataclass
class PretrainModel:
    """Fitted two-step model: one stage-one artifact plus per-group second
    stages, the chosen transfer strengths, and the full CV trace."""

    artifact: TransferArtifact
    first_stage_cv: CvFit
    first_stage_lambda_index: int
    group_fits: dict[int, PathFit]
    group_lambda_choice: dict[int, int]
    alpha_per_group: dict[int, float]
    cv_trace: dict[tuple[int, float], float]
    family: Family

    @property
    def groups(self) -> list[int]:
        return sorted(self.group_fits)

    def group_support(self, g: int) -> np.ndarray:
        return self.group_fits[g].support(self.group_lambda_choice[g])

    def total_support(self) -> np.ndarray:
        """Union of the stage-one support and every chosen group support."""
        parts = [self.artifact.support] + [self.group_support(g) for g in self.groups]
        return np.unique(np.concatenate(parts)).astype(np.int64)

    @property
    def support_size(self) -> int:
        return int(self.total_support().size)


def _group_fold_count(n_g: int, k: int) -> int:
    return k if n_g >= 2 * k else max(3, n_g // 2)


def _classification(family: Family) -> bool:
    return family.kind in ("binomial", "multinomial")


def _stage_penalty(family: Family, penalty_factors=None) -> PenaltySpec:
    ratio = CLASSIFICATION_MIN_RATIO if _classification(family) else None
    return PenaltySpec(penalty_factors=penalty_factors, lambda_min_ratio=ratio)


def _strata(ds: Dataset):
    return ds.y if _classification(ds.family) else None


def _pick_lambda(cv: CvFit, rule: str) -> int:
    if rule == "min":
        return cv.lambda_min_index
    if rule == "1se":
        return cv.lambda_1se_index
    raise ValueError("lambda_rule must be 'min' or '1se'")


def _combined_offset(base, extra):
    return extra if base is None else base + extra


def _intercept_only_penalty(ds: Dataset) -> PenaltySpec:
    """A one-point lambda grid far above any training subset's lambda_max,
    so every fold fit collapses to the intercept. Used when a transfer
    recipe excludes all features (empty support at alpha = 0)."""
    big = (lambda_max(ds) + 1.0) * 1e6
    return PenaltySpec(lambda_sequence=np.array([big]))


def _resolve_alpha_grid(alpha_grid) -> list[float]:
    if alpha_grid is None:
        alpha_grid = DEFAULT_ALPHA_GRID
    grid = [float(a) for a in alpha_grid]
    if not grid or any(not 0.0 <= a <= 1.0 for a in grid):
        raise ValueError("alpha_grid values must lie in [0, 1]")
    return grid


def _alpha_sweep(
    x,
    y,
    family: Family,
    base_offset,
    recipe,
    alpha_grid,
    plan,
    metric,
    controls,
    lambda_rule,
):
    """Cross-validate one second-stage target over an alpha grid.

    ``recipe(alpha)`` returns the (offset, penalty_factors) pair for the
    candidate strength. All candidates share ``plan`` so they compete on
    identical splits; ties break toward the smaller alpha. Returns
    (alpha, winning CvFit, lambda index, {alpha: cv error}).
    """
    best = None
    trace: dict[float, float] = {}
    for a in alpha_grid:
        offset, pf = recipe(a)
        ds_a = Dataset(
            x=x, y=y, family=family, fixed_offset=_combined_offset(base_offset, offset)
        )
        if np.all(np.isinf(pf)):
            pen = _intercept_only_penalty(ds_a)
        else:
            pen = _stage_penalty(family, pf)
        cv_a = cv_path(
            ds_a,
            penalty=pen,
            folds=plan,
            metric=metric,
            controls=controls,
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        l_a = _pick_lambda(cv_a, lambda_rule)
        err = float(cv_a.mean_error[l_a])
        trace[a] = err
        if best is None or err < best[0]:
            best = (err, a, cv_a, l_a)
    _, a, cv, l = best
    return a, cv, l, trace


def pretrain_fit(
    dataset: Dataset,
    alpha_grid=None,
    fold_seed: int = 0,
    controls: Controls | None = None,
    *,
    folds: int = 10,
    metric: str | None = None,
    lambda_rule: str = "min",
) -> PretrainModel:
    """Fit the two-step pipeline on a grouped dataset.

    Stage one cross-validates one path over all rows; each group then sweeps
    ``alpha_grid``, cross-validating a second-stage path per value, and keeps
    the alpha with the lowest CV error (ties break toward the smaller alpha).
    Group fold counts shrink to n_g // 2 (floor 3) when a group cannot feed
    ``folds`` folds with 2 observations each. Group g's folds are seeded with
    ``fold_seed + g`` and shared across the whole alpha sweep, so candidate
    strengths compete on identical splits.

    Binomial and multinomial second stages use response-stratified folds;
    both need every class present inside every group.
    """
    fam = dataset.family
    if fam.kind == "multigaussian":
        raise InvalidFamily(
            "multigaussian responses use multiresponse_pretrain (multitask module)"
        )
    if dataset.group is None or dataset.n_groups < 2:
        raise InvalidGrouping("pretraining needs >= 2 observation groups")
    sizes = np.bincount(dataset.group, minlength=dataset.n_groups + 1)[1:]
    if sizes.min() < 6:
        small = int(np.argmin(sizes)) + 1
        raise GroupTooSmall(
            f"group {small} has {int(sizes.min())} observations; 6 are required"
        )
    alpha_grid = _resolve_alpha_grid(alpha_grid)

    n = dataset.n
    k1 = _group_fold_count(n, folds)
    plan1 = make_folds(n, k1, strata=_strata(dataset), seed=fold_seed)
    cv1 = cv_path(
        dataset,
        penalty=_stage_penalty(fam),
        folds=plan1,
        metric=metric,
        controls=controls,
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    l1 = _pick_lambda(cv1, lambda_rule)
    artifact = extract_artifact(cv1.full_fit, l1)

    group_fits: dict[int, PathFit] = {}
    group_lambda: dict[int, int] = {}
    alpha_per_group: dict[int, float] = {}
    trace: dict[tuple[int, float], float] = {}

    for g in range(1, dataset.n_groups + 1):
        idx = np.flatnonzero(dataset.group == g)
        ds_g = dataset.rows(idx)
        k_g = _group_fold_count(idx.size, folds)
        plan_g = make_folds(idx.size, k_g, strata=_strata(ds_g), seed=fold_seed + g)
        a_g, cv_g, l_g, tr_g = _alpha_sweep(
            ds_g.x,
            ds_g.y,
            fam,
            ds_g.fixed_offset,
            lambda a: build_transfer(cv1.full_fit, l1, a, ds_g.x),
            alpha_grid,
            plan_g,
            metric,
            controls,
            lambda_rule,
        )
        trace.update({(g, a): e for a, e in tr_g.items()})
        group_fits[g] = cv_g.full_fit
        group_lambda[g] = l_g
        alpha_per_group[g] = a_g

    return PretrainModel(
        artifact=artifact,
        first_stage_cv=cv1,
        first_stage_lambda_index=l1,
        group_fits=group_fits,
        group_lambda_choice=group_lambda,
        alpha_per_group=alpha_per_group,
        cv_trace=trace,
        family=fam,
    )


def pretrain_predict(
    model: PretrainModel,
    x_new,
    group_labels,
    kind: str = "response",
) -> np.ndarray:
    """Predict new rows with their group's second stage; each row's offset is
    rebuilt from the stored stage-one recipe at that group's chosen alpha."""
    x_new = np.asarray(x_new, dtype=np.float64)
    labels = np.asarray(group_labels)
    if x_new.ndim != 2 or labels.shape != (x_new.shape[0],):
        raise ValueError("need one group label per prediction row")
    known = set(model.group_fits)
    seen = set(np.unique(labels).tolist())
    if not seen <= known:
        raise UnknownGroup(f"unseen group labels: {sorted(seen - known)}")

    out = None
    for g in sorted(seen):
        rows = np.flatnonzero(labels == g)
        offset, _ = artifact_transfer(
            model.artifact, model.alpha_per_group[g], x_new[rows]
        )
        pred = model.group_fits[g].predict(
            x_new[rows], model.group_lambda_choice[g], kind, offset
        )
        if out is None:
            shape = (x_new.shape[0],) + pred.shape[1:]
            out = np.zeros(shape, dtype=pred.dtype)
        out[rows] = pred
    return out
