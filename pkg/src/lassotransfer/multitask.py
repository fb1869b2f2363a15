"""Pretraining pipelines for multi-output responses.

Three reductions share the same transfer machinery as the grouped pipeline:

  * one-vs-rest: a row-sparse multinomial path is fit once, then each class
    gets a binomial fit against the pooled rest, seeded with the offset and
    penalty factors taken from its column of the first-stage coefficients;
  * multi-response: a row-sparse multigaussian path feeds per-column Gaussian
    second stages the same way;
  * chains: responses are fit one after another in a caller-supplied order,
    each step receiving the previous step's fitted model as a transfer
    artifact with its own cross-validated strength.

All second stages choose alpha by cross-validation on folds shared across
the alpha grid, with ties broken toward the smaller alpha.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import BINOMIAL, GAUSSIAN, Controls, Dataset, Family
from .exceptions import ClassTooSmall, ColumnDegenerate, InvalidFamily
from .pretrain import (
    TransferArtifact,
    _alpha_sweep,
    _group_fold_count,
    _pick_lambda,
    _resolve_alpha_grid,
    _stage_penalty,
    _support_rows,
    artifact_transfer,
    extract_artifact,
)
from .selection import RELAXED_FOLD_CONTROLS, CvFit, cv_path, make_folds
from .solver import PathFit, _sigmoid

__all__ = [
    "ChainModel",
    "MultiResponseModel",
    "OneVsRestModel",
    "chain_predict",
    "chain_pretrain",
    "multinomial_pretrain",
    "multiresponse_pretrain",
    "multiresponse_predict",
    "one_vs_rest_predict",
]


@dataclass
class OneVsRestModel:
    """A shared multinomial first stage plus one binomial fit per class.

    ``per_class`` maps class labels 1..K to their second-stage fits;
    ``per_class_artifact[k]`` stores the transfer recipe (column k of the
    first-stage coefficients, that class's intercept, and the chosen alpha)
    used to rebuild offsets at prediction time.
    """

    first_stage: PathFit
    first_stage_cv: CvFit
    first_stage_lambda_index: int
    per_class: dict[int, PathFit]
    class_lambda_choice: dict[int, int]
    per_class_artifact: dict[int, TransferArtifact]
    alpha_per_class: dict[int, float]
    cv_trace: dict[tuple[int, float], float]

    @property
    def n_classes(self) -> int:
        return len(self.per_class)

    def class_support(self, label: int) -> np.ndarray:
        return self.per_class[label].support(self.class_lambda_choice[label])


@dataclass
class MultiResponseModel:
    """A shared multigaussian first stage plus one Gaussian fit per column.

    Columns are keyed by position 0..K-1. Second-stage folds are shared
    across columns, so symmetric inputs produce symmetric fits.
    """

    first_stage: PathFit
    first_stage_cv: CvFit
    first_stage_lambda_index: int
    per_column: dict[int, PathFit]
    column_lambda_choice: dict[int, int]
    per_column_artifact: dict[int, TransferArtifact]
    alpha_per_column: dict[int, float]
    cv_trace: dict[tuple[int, float], float]

    @property
    def n_responses(self) -> int:
        return len(self.per_column)

    def column_support(self, column: int) -> np.ndarray:
        return self.per_column[column].support(self.column_lambda_choice[column])


@dataclass
class ChainModel:
    """Sequential fits over response columns in ``ordering``.

    ``stage_artifacts[t]`` is the transfer recipe step t received — built
    from step t-1's fit at its chosen lambda, carrying step t's chosen
    alpha — and is None for the first step, which is fit plainly.
    """

    ordering: tuple[int, ...]
    families: tuple[Family, ...]
    stage_fits: list[PathFit]
    stage_cv: list[CvFit]
    stage_lambda_choice: list[int]
    stage_artifacts: list[TransferArtifact | None]
    alpha_per_step: list[float]
    cv_trace: dict[tuple[int, float], float]

    @property
    def n_steps(self) -> int:
        return len(self.stage_fits)


def _offset_column(fixed_offset, column: int):
    """Column slice of a dataset-level offset matrix (or the vector as-is)."""
    if fixed_offset is None:
        return None
    off = np.asarray(fixed_offset, dtype=np.float64)
    return off[:, column] if off.ndim == 2 else off


def multinomial_pretrain(
    dataset: Dataset,
    alpha_grid=None,
    controls: Controls | None = None,
    *,
    folds: int = 10,
    fold_seed: int = 0,
    lambda_rule: str = "min",
) -> OneVsRestModel:
    """Fit the one-vs-rest pipeline for a class-labelled response.

    Stage one cross-validates a row-sparse multinomial path on all rows
    (folds stratified on the labels, seeded with ``fold_seed``). Each class k
    then gets a binomial fit of "class k vs the pooled rest": its offset is
    (1 - alpha) times column k of the stage-one link, its penalty factors are
    1 on the nonzero rows of coefficient column k and 1/alpha elsewhere, and
    alpha is chosen by a second cross-validation (folds stratified on the
    indicator, seeded with ``fold_seed + k``, shared across the alpha grid).

    Classification picks the class whose one-vs-rest probability is largest.
    """
    fam = dataset.family
    if fam.kind != "multinomial" or fam.n_outputs < 3:
        raise InvalidFamily(
            "one-vs-rest pretraining needs a multinomial response with >= 3 "
            "classes; two-class problems belong in the binomial pipeline"
        )
    n_classes = fam.n_outputs
    y = dataset.y.astype(np.int64)
    counts = np.bincount(y, minlength=n_classes + 1)[1:]
    if counts.min() < 6:
        small = int(np.argmin(counts)) + 1
        raise ClassTooSmall(
            f"class {small} has {int(counts.min())} observations; 6 are required"
        )
    alpha_grid = _resolve_alpha_grid(alpha_grid)

    n = dataset.n
    plan1 = make_folds(n, _group_fold_count(n, folds), strata=y, seed=fold_seed)
    cv1 = cv_path(
        dataset,
        penalty=_stage_penalty(fam),
        folds=plan1,
        controls=controls,
        grouped=True,
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    l1 = _pick_lambda(cv1, lambda_rule)
    coef = cv1.full_fit.coefficients[l1]
    mus = cv1.full_fit.intercepts[l1]
    lam1 = float(cv1.full_fit.lambdas[l1])

    per_class: dict[int, PathFit] = {}
    class_lambda: dict[int, int] = {}
    artifacts: dict[int, TransferArtifact] = {}
    alpha_per_class: dict[int, float] = {}
    trace: dict[tuple[int, float], float] = {}

    for k in range(1, n_classes + 1):
        col = coef[:, k - 1].copy()
        base = TransferArtifact(
            family=BINOMIAL,
            mu0=float(mus[k - 1]),
            beta0=col,
            support=_support_rows(col),
            alpha=1.0,
            source_lambda=lam1,
        )
        y_k = (y == k).astype(np.float64)
        plan_k = make_folds(
            n,
            _group_fold_count(n, folds),
            strata=y_k.astype(np.int64),
            seed=fold_seed + k,
        )
        a_k, cv_k, l_k, tr = _alpha_sweep(
            dataset.x,
            y_k,
            BINOMIAL,
            _offset_column(dataset.fixed_offset, k - 1),
            lambda a: artifact_transfer(base, a, dataset.x),
            alpha_grid,
            plan_k,
            None,
            controls,
            lambda_rule,
        )
        trace.update({(k, a): e for a, e in tr.items()})
        per_class[k] = cv_k.full_fit
        class_lambda[k] = l_k
        artifacts[k] = replace(base, alpha=a_k)
        alpha_per_class[k] = a_k

    return OneVsRestModel(
        first_stage=cv1.full_fit,
        first_stage_cv=cv1,
        first_stage_lambda_index=l1,
        per_class=per_class,
        class_lambda_choice=class_lambda,
        per_class_artifact=artifacts,
        alpha_per_class=alpha_per_class,
        cv_trace=trace,
    )


def one_vs_rest_predict(model: OneVsRestModel, x_new, kind: str = "class"):
    """Predict classes (labels 1..K), per-class probabilities, or links.

    Each class's link rebuilds its offset from the stored artifact at the
    chosen alpha. ``kind='response'`` returns the (m, K) matrix of one-vs-rest
    probabilities (not normalised across classes); ``kind='class'`` returns
    the label with the largest probability, ties going to the lowest label.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2:
        raise ValueError("x_new must be 2-D")
    links = np.empty((x_new.shape[0], model.n_classes))
    for k in sorted(model.per_class):
        art = model.per_class_artifact[k]
        off, _ = artifact_transfer(art, art.alpha, x_new)
        links[:, k - 1] = model.per_class[k].link(
            x_new, model.class_lambda_choice[k], offset=off
        )
    kind_ = kind.lower()
    if kind_ == "link":
        return links
    if kind_ == "response":
        return _sigmoid(links)
    if kind_ == "class":
        # sigmoid is monotone, so the largest probability is the largest link
        return np.argmax(links, axis=1) + 1
    raise ValueError(f"unknown prediction kind {kind!r}")


def multiresponse_pretrain(
    dataset: Dataset,
    alpha_grid=None,
    controls: Controls | None = None,
    *,
    folds: int = 10,
    fold_seed: int = 0,
    metric: str | None = None,
    lambda_rule: str = "min",
) -> MultiResponseModel:
    """Fit per-column Gaussian second stages off one multigaussian first stage.

    Stage one cross-validates a row-sparse path on the response matrix
    (folds seeded with ``fold_seed``). Column k's second stage receives the
    offset (1 - alpha) times column k of the stage-one link and penalty
    factors from the nonzero rows of coefficient column k; alpha is chosen
    by cross-validation on one fold plan seeded with ``fold_seed + 1`` and
    shared by every column and alpha.
    """
    fam = dataset.family
    if fam.kind != "multigaussian":
        raise InvalidFamily(
            "multiresponse pretraining needs a multigaussian response matrix"
        )
    y = dataset.y
    spans = np.ptp(y, axis=0)
    if np.any(spans == 0.0):
        flat = int(np.flatnonzero(spans == 0.0)[0])
        raise ColumnDegenerate(f"response column {flat} is constant")
    alpha_grid = _resolve_alpha_grid(alpha_grid)

    n = dataset.n
    plan1 = make_folds(n, _group_fold_count(n, folds), seed=fold_seed)
    cv1 = cv_path(
        dataset,
        penalty=_stage_penalty(fam),
        folds=plan1,
        metric=metric,
        controls=controls,
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    l1 = _pick_lambda(cv1, lambda_rule)
    coef = cv1.full_fit.coefficients[l1]
    mus = cv1.full_fit.intercepts[l1]
    lam1 = float(cv1.full_fit.lambdas[l1])

    plan2 = make_folds(n, _group_fold_count(n, folds), seed=fold_seed + 1)
    per_column: dict[int, PathFit] = {}
    column_lambda: dict[int, int] = {}
    artifacts: dict[int, TransferArtifact] = {}
    alpha_per_column: dict[int, float] = {}
    trace: dict[tuple[int, float], float] = {}

    for k in range(fam.n_outputs):
        col = coef[:, k].copy()
        base = TransferArtifact(
            family=GAUSSIAN,
            mu0=float(mus[k]),
            beta0=col,
            support=_support_rows(col),
            alpha=1.0,
            source_lambda=lam1,
        )
        a_k, cv_k, l_k, tr = _alpha_sweep(
            dataset.x,
            y[:, k],
            GAUSSIAN,
            _offset_column(dataset.fixed_offset, k),
            lambda a: artifact_transfer(base, a, dataset.x),
            alpha_grid,
            plan2,
            metric,
            controls,
            lambda_rule,
        )
        trace.update({(k, a): e for a, e in tr.items()})
        per_column[k] = cv_k.full_fit
        column_lambda[k] = l_k
        artifacts[k] = replace(base, alpha=a_k)
        alpha_per_column[k] = a_k

    return MultiResponseModel(
        first_stage=cv1.full_fit,
        first_stage_cv=cv1,
        first_stage_lambda_index=l1,
        per_column=per_column,
        column_lambda_choice=column_lambda,
        per_column_artifact=artifacts,
        alpha_per_column=alpha_per_column,
        cv_trace=trace,
    )


def multiresponse_predict(model: MultiResponseModel, x_new) -> np.ndarray:
    """Predict all response columns for new rows; (m, K)."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2:
        raise ValueError("x_new must be 2-D")
    out = np.empty((x_new.shape[0], model.n_responses))
    for k in sorted(model.per_column):
        art = model.per_column_artifact[k]
        off, _ = artifact_transfer(art, art.alpha, x_new)
        out[:, k] = model.per_column[k].link(
            x_new, model.column_lambda_choice[k], offset=off
        )
    return out


def _chain_families(y: np.ndarray, ordering, families) -> list[Family]:
    """Resolve and validate the per-step family declarations."""
    if families is None:
        families = ["gaussian"] * y.shape[1]
    if len(families) != y.shape[1]:
        raise InvalidFamily("need one family per response column")
    out = []
    for step_col in ordering:
        f = families[step_col]
        kind = f.kind if isinstance(f, Family) else str(f).lower()
        if kind == "gaussian":
            out.append(GAUSSIAN)
        elif kind == "binomial":
            col = y[:, step_col]
            if not np.isin(col, (0.0, 1.0)).all() or np.ptp(col) == 0.0:
                raise InvalidFamily(
                    f"column {step_col} is declared binomial but is not "
                    "0/1-coded with both classes present"
                )
            out.append(BINOMIAL)
        else:
            raise InvalidFamily(
                f"chains support gaussian and binomial columns only, got {kind!r}"
            )
    return out


def chain_pretrain(
    dataset: Dataset,
    ordering,
    alpha_grid=None,
    controls: Controls | None = None,
    *,
    families=None,
    folds: int = 10,
    fold_seed: int = 0,
    lambda_rule: str = "min",
) -> ChainModel:
    """Fit response columns sequentially, passing each fit to the next step.

    ``dataset`` holds the response columns in a multigaussian container;
    ``families`` declares each column gaussian or binomial (default all
    gaussian). The first ordered column is fit plainly. Every later step
    builds a transfer artifact from the previous step's fit at its chosen
    lambda, then sweeps ``alpha_grid`` by cross-validation — offsets on the
    link scale, penalty factors from the previous support. Step t's folds
    are seeded with ``fold_seed + t`` (steps numbered from 0) and shared
    across its alpha sweep.
    """
    if dataset.family.kind != "multigaussian":
        raise InvalidFamily(
            "chained pretraining takes response columns in a multigaussian "
            "container dataset"
        )
    ordering = [int(c) for c in ordering]
    n_cols = dataset.y.shape[1]
    if not ordering or len(set(ordering)) != len(ordering):
        raise ValueError("ordering must be non-empty without repeats")
    if any(not 0 <= c < n_cols for c in ordering):
        raise ValueError(f"ordering entries must be response columns 0..{n_cols - 1}")
    fams = _chain_families(dataset.y, ordering, families)
    alpha_grid = _resolve_alpha_grid(alpha_grid)

    n = dataset.n
    fits: list[PathFit] = []
    cvs: list[CvFit] = []
    lams: list[int] = []
    artifacts: list[TransferArtifact | None] = []
    alphas: list[float] = []
    trace: dict[tuple[int, float], float] = {}

    for t, col_idx in enumerate(ordering):
        fam_t = fams[t]
        y_t = dataset.y[:, col_idx]
        strata = y_t.astype(np.int64) if fam_t.kind == "binomial" else None
        plan_t = make_folds(
            n, _group_fold_count(n, folds), strata=strata, seed=fold_seed + t
        )
        base_off = _offset_column(dataset.fixed_offset, col_idx)
        if t == 0:
            ds0 = Dataset(x=dataset.x, y=y_t, family=fam_t, fixed_offset=base_off)
            cv_t = cv_path(
                ds0,
                penalty=_stage_penalty(fam_t),
                folds=plan_t,
                controls=controls,
                fold_controls=RELAXED_FOLD_CONTROLS,
            )
            l_t = _pick_lambda(cv_t, lambda_rule)
            artifacts.append(None)
            alphas.append(1.0)
        else:
            base = extract_artifact(fits[t - 1], lams[t - 1])
            a_t, cv_t, l_t, tr = _alpha_sweep(
                dataset.x,
                y_t,
                fam_t,
                base_off,
                lambda a: artifact_transfer(base, a, dataset.x),
                alpha_grid,
                plan_t,
                None,
                controls,
                lambda_rule,
            )
            trace.update({(t, a): e for a, e in tr.items()})
            artifacts.append(replace(base, alpha=a_t))
            alphas.append(a_t)
        fits.append(cv_t.full_fit)
        cvs.append(cv_t)
        lams.append(l_t)

    return ChainModel(
        ordering=tuple(ordering),
        families=tuple(fams),
        stage_fits=fits,
        stage_cv=cvs,
        stage_lambda_choice=lams,
        stage_artifacts=artifacts,
        alpha_per_step=alphas,
        cv_trace=trace,
    )


def chain_predict(model: ChainModel, x_new, kind: str = "response") -> np.ndarray:
    """Predict every chain step for new rows; (m, n_steps) in chain order.

    Binomial steps return probabilities under ``kind='response'`` and raw
    links under ``kind='link'``; Gaussian steps return the link either way.
    """
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2:
        raise ValueError("x_new must be 2-D")
    kind_ = kind.lower()
    if kind_ not in ("response", "link"):
        raise ValueError(f"unknown prediction kind {kind!r}")
    out = np.empty((x_new.shape[0], model.n_steps))
    for t in range(model.n_steps):
        art = model.stage_artifacts[t]
        off = None if art is None else artifact_transfer(art, art.alpha, x_new)[0]
        eta = model.stage_fits[t].link(x_new, model.stage_lambda_choice[t], offset=off)
        if kind_ == "response" and model.families[t].kind == "binomial":
            eta = _sigmoid(eta)
        out[:, t] = eta
    return out
