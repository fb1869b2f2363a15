"""k-fold cross-validation over lambda paths.

The lambda grid is frozen from a full-data fit; each fold trains on its
complement and is scored on the held-out rows. mse, deviance and misclass are
aggregated fold-level (mean and standard error across folds); AUC is pooled
over all held-out predictions because per-fold AUC is unstable on small
folds, so for the ``auc`` metric ``mean_error`` stores 1 - pooled AUC while
``per_fold_error`` keeps the fold-level values (NaN where a fold lacks a
class) for the standard error.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .data import Controls, Dataset, PenaltySpec
from .exceptions import FoldDegenerate, InvalidFolds, UndefinedMetric
from .solver import (
    PathFit,
    binomial_deviance,
    fit_grouped_path,
    fit_path,
    multinomial_deviance,
    one_hot,
)

METRICS = ("mse", "deviance", "misclass", "auc")

# fold fits are internal evaluations; pipelines relax them to this floor
RELAXED_FOLD_CONTROLS = Controls(coef_tol=1e-5, kkt_tol=1e-5)


@dataclass
class FoldPlan:
    """Assignment of n observations to folds 1..k."""

    n: int
    k: int
    assignment: np.ndarray
    strata: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if self.assignment.shape != (self.n,):
            raise InvalidFolds("assignment must have one entry per observation")
        if self.k < 2 or self.k > self.n:
            raise InvalidFolds(f"fold count must lie in 2..{self.n}")
        counts = np.bincount(self.assignment, minlength=self.k + 1)[1:]
        if self.assignment.min() < 1 or self.assignment.max() > self.k:
            raise InvalidFolds("fold labels must lie in 1..k")
        if np.any(counts == 0):
            raise InvalidFolds("every fold must be non-empty")

    def held_out(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)


def make_folds(n: int, k: int, strata=None, seed: int = 0) -> FoldPlan:
    """Deterministic fold assignment; round-robin within shuffled strata so
    per-stratum proportions are preserved within one observation."""
    if not 2 <= k <= n:
        raise InvalidFolds(f"fold count {k} must lie in 2..{n}")
    rng = np.random.default_rng(seed)
    assignment = np.zeros(n, dtype=np.int64)
    if strata is None:
        perm = rng.permutation(n)
        assignment[perm] = np.arange(n) % k + 1
    else:
        strata = np.asarray(strata)
        if strata.shape != (n,):
            raise InvalidFolds("strata must have one label per observation")
        slot = 0
        for s in np.unique(strata):
            idx = np.flatnonzero(strata == s)
            perm = idx[rng.permutation(idx.size)]
            assignment[perm] = (slot + np.arange(idx.size)) % k + 1
            slot += idx.size
    return FoldPlan(n=n, k=k, assignment=assignment, strata=strata, seed=seed)


@dataclass
class CvFit:
    """Cross-validated error curve over a frozen lambda grid.

    ``mean_error`` is always oriented so that smaller is better (for auc it
    holds 1 - pooled AUC). ``full_fit`` is the all-rows path the grid came
    from, refit candidates are read off it at ``lambda_min_index`` or
    ``lambda_1se_index``.
    """

    lambdas: np.ndarray
    mean_error: np.ndarray
    se_error: np.ndarray
    per_fold_error: np.ndarray
    lambda_min_index: int
    lambda_1se_index: int
    metric: str
    full_fit: PathFit
    fold_plan: FoldPlan

    @property
    def lambda_min(self) -> float:
        return float(self.lambdas[self.lambda_min_index])

    @property
    def lambda_1se(self) -> float:
        return float(self.lambdas[self.lambda_1se_index])

    @property
    def n_lambdas(self) -> int:
        return self.lambdas.shape[0]


_DEFAULT_METRIC = {
    "gaussian": "mse",
    "binomial": "deviance",
    "multinomial": "deviance",
    "multigaussian": "mse",
}

_ALLOWED_METRICS = {
    "gaussian": ("mse", "deviance"),
    "binomial": ("mse", "deviance", "misclass", "auc"),
    "multinomial": ("mse", "deviance", "misclass"),
    "multigaussian": ("mse", "deviance"),
}


def auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic; tied scores
    contribute 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    pos = labels == 1.0
    n1 = int(pos.sum())
    n0 = labels.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetric("AUC needs both classes among the labels")
    ranks = rankdata(scores, method="average")
    u = float(ranks[pos].sum()) - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


def _fold_errors(fit: PathFit, ds: Dataset, held: np.ndarray, metric: str):
    """Per-lambda held-out error vector for one fold.

    Returns (errors, scores) where scores is the (m, L) probability matrix for
    binomial (used for pooled AUC) and None otherwise.
    """
    xf = ds.x[held]
    yf = ds.y[held]
    m = held.shape[0]
    L = fit.n_lambdas
    fam = ds.family.kind

    if fam in ("gaussian", "binomial"):
        eta = xf @ fit.coefficients.reshape(L, -1).T + fit.intercepts[None, :]
        if ds.fixed_offset is not None:
            eta = eta + ds.fixed_offset[held][:, None]
    else:
        # (m, L, K)
        eta = np.einsum("mp,lpk->mlk", xf, fit.coefficients) + fit.intercepts[None, :, :]
        if ds.fixed_offset is not None:
            eta = eta + ds.fixed_offset[held][:, None, :]

    if fam == "gaussian":
        return np.mean((yf[:, None] - eta) ** 2, axis=0), None

    if fam == "multigaussian":
        return np.mean(np.sum((yf[:, None, :] - eta) ** 2, axis=2), axis=0), None

    if fam == "binomial":
        with np.errstate(over="ignore"):
            prob = 1.0 / (1.0 + np.exp(-eta))
        if metric == "mse":
            return np.mean((yf[:, None] - prob) ** 2, axis=0), prob
        if metric == "misclass":
            return np.mean((prob > 0.5) != yf[:, None], axis=0), prob
        if metric == "auc":
            err = np.full(L, np.nan)
            if np.unique(yf).size == 2:
                err = np.array([1.0 - auc(prob[:, l], yf) for l in range(L)])
            return err, prob
        dev = np.array(
            [binomial_deviance(yf, prob[:, l]) for l in range(L)]
        )
        return dev / m, prob

    # multinomial
    mx = eta.max(axis=2, keepdims=True)
    e = np.exp(eta - mx)
    prob = e / e.sum(axis=2, keepdims=True)
    k = ds.family.n_outputs
    if metric == "misclass":
        pred = np.argmax(prob, axis=2) + 1
        return np.mean(pred != yf[:, None], axis=0), None
    if metric == "mse":
        yh = one_hot(yf, k)
        return np.mean(np.sum((yh[:, None, :] - prob) ** 2, axis=2), axis=0), None
    yh = one_hot(yf, k)
    dev = np.array([multinomial_deviance(yh, prob[:, l]) for l in range(L)])
    return dev / m, None


def _check_fold_classes(ds: Dataset, plan: FoldPlan):
    fam = ds.family.kind
    if fam == "binomial":
        classes = np.unique(ds.y)
    elif fam == "multinomial":
        classes = np.arange(1, ds.family.n_outputs + 1)
    else:
        return
    for f in range(1, plan.k + 1):
        train_y = ds.y[plan.complement(f)]
        if not np.all(np.isin(classes, train_y)):
            raise FoldDegenerate(
                f"training complement of fold {f} lacks a response class"
            )


def cv_path(
    dataset: Dataset,
    penalty: PenaltySpec | None = None,
    folds: FoldPlan | int | None = None,
    metric: str | None = None,
    controls: Controls | None = None,
    *,
    grouped: bool = False,
    fold_controls: Controls | None = None,
) -> CvFit:
    """Cross-validate a lasso path.

    The full-data fit (returned as ``full_fit``) fixes the lambda grid; fold
    fits reuse it. ``fold_controls`` override the solver tolerances for the
    internal fold fits only (the full fit always honors ``controls``).
    ``grouped`` selects the row-sparse penalty for multioutput families
    (multigaussian is always grouped).
    """
    penalty = penalty or PenaltySpec()
    fam = dataset.family.kind
    if fam == "multigaussian":
        grouped = True
    metric = metric or _DEFAULT_METRIC[fam]
    if metric not in METRICS:
        raise UndefinedMetric(f"unknown metric {metric!r}")
    if metric not in _ALLOWED_METRICS[fam]:
        raise UndefinedMetric(f"metric {metric!r} undefined for {fam} responses")

    if isinstance(folds, FoldPlan):
        plan = folds
        if plan.n != dataset.n:
            raise InvalidFolds("fold plan size does not match the dataset")
    else:
        plan = make_folds(dataset.n, 10 if folds is None else int(folds))
    _check_fold_classes(dataset, plan)

    fitter = fit_grouped_path if grouped else fit_path
    full_fit = fitter(dataset, penalty, controls)
    fold_penalty = replace(penalty, lambda_sequence=full_fit.lambdas)
    fct = fold_controls or controls

    L = full_fit.n_lambdas
    per_fold = np.zeros((plan.k, L))
    pooled_scores = np.zeros((dataset.n, L)) if metric == "auc" else None
    for f in range(1, plan.k + 1):
        tr = plan.complement(f)
        held = plan.held_out(f)
        fit_f = fitter(dataset.rows(tr), fold_penalty, fct)
        per_fold[f - 1], scores = _fold_errors(fit_f, dataset, held, metric)
        if pooled_scores is not None:
            pooled_scores[held] = scores

    if metric == "auc":
        mean = np.array(
            [1.0 - auc(pooled_scores[:, l], dataset.y) for l in range(L)]
        )
        with np.errstate(invalid="ignore"):
            nf = np.sum(~np.isnan(per_fold), axis=0)
            se = np.nanstd(per_fold, axis=0, ddof=1) / np.sqrt(np.maximum(nf, 1))
    else:
        mean = per_fold.mean(axis=0)
        se = per_fold.std(axis=0, ddof=1) / np.sqrt(plan.k)

    lmin = int(np.argmin(mean))
    thresh = mean[lmin] + se[lmin]
    l1se = int(np.flatnonzero(mean <= thresh)[0])
    return CvFit(
        lambdas=full_fit.lambdas,
        mean_error=mean,
        se_error=se,
        per_fold_error=per_fold,
        lambda_min_index=lmin,
        lambda_1se_index=l1se,
        metric=metric,
        full_fit=full_fit,
        fold_plan=plan,
    )
