"""Derived pipelines built on the penalized engine.

Four tools that feed, wrap, or repurpose the two-step pipeline:

  * ``learn_groups_cart`` grows a small CART tree on designated splitting
    variables; its leaves become observation groups;
  * ``fit_group_generalizer`` handles prediction when new rows carry no
    group label, blending per-group probabilities with a group classifier
    through a stacked combiner;
  * ``rlearner_pretrain`` estimates a heterogeneous treatment effect under
    randomized 50/50 assignment, transferring the outcome model's support
    into the effect model's penalty factors;
  * ``boost_basis`` fits a squared-loss stump booster whose evaluated stumps
    form a basis matrix for a downstream grouped fit.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .data import BINOMIAL, GAUSSIAN, Controls, Dataset, PenaltySpec, multinomial
from .exceptions import (
    DegenerateSplit,
    DegenerateTransfer,
    InvalidFamily,
    InvalidGrouping,
    InvalidTreatment,
)
from .pretrain import (
    PretrainModel,
    _group_fold_count,
    _intercept_only_penalty,
    _pick_lambda,
    _resolve_alpha_grid,
    _stage_penalty,
    pretrain_fit,
    pretrain_predict,
)
from .selection import RELAXED_FOLD_CONTROLS, CvFit, cv_path, make_folds
from .solver import PathFit

__all__ = [
    "BoostBasis",
    "CartNode",
    "CartTree",
    "GroupGeneralizer",
    "RLearnerFit",
    "Stump",
    "boost_basis",
    "fit_group_generalizer",
    "generalize_predict",
    "learn_groups_cart",
    "rlearner_predict",
    "rlearner_pretrain",
]


# ---------------------------------------------------------------------------
# CART-learned groups

@dataclass
class CartNode:
    """One tree node: either a split (feature, threshold, children) or a
    leaf carrying its 1-based id. Rows with x[feature] <= threshold go left."""

    feature: int | None = None
    threshold: float | None = None
    left: "CartNode | None" = None
    right: "CartNode | None" = None
    leaf_id: int | None = None
    n_rows: int = 0
    value: float = 0.0

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"leaf": self.leaf_id, "n_rows": self.n_rows, "value": self.value}
        return {
            "feature": self.feature,
            "threshold": self.threshold,
            "n_rows": self.n_rows,
            "value": self.value,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CartNode":
        if "leaf" in d:
            return cls(leaf_id=d["leaf"], n_rows=d["n_rows"], value=d["value"])
        return cls(
            feature=d["feature"],
            threshold=d["threshold"],
            left=cls.from_dict(d["left"]),
            right=cls.from_dict(d["right"]),
            n_rows=d["n_rows"],
            value=d["value"],
        )


@dataclass
class CartTree:
    """A depth-limited binary partition of the splitting variables.

    ``assign`` maps rows to leaf ids 1..n_leaves (left-to-right order), ready
    to serve as observation-group labels."""

    root: CartNode
    max_depth: int
    min_leaf: int
    n_leaves: int
    split_features: list[int] = field(default_factory=list)

    def assign(self, x_split) -> np.ndarray:
        x = np.asarray(x_split, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("x_split must be 2-D")
        labels = np.empty(x.shape[0], dtype=np.int64)
        stack = [(self.root, np.arange(x.shape[0]))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                labels[idx] = node.leaf_id
            else:
                goes_left = x[idx, node.feature] <= node.threshold
                stack.append((node.left, idx[goes_left]))
                stack.append((node.right, idx[~goes_left]))
        return labels

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "n_leaves": self.n_leaves,
            "split_features": list(self.split_features),
            "root": self.root.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, d: dict) -> "CartTree":
        return cls(
            root=CartNode.from_dict(d["root"]),
            max_depth=d["max_depth"],
            min_leaf=d["min_leaf"],
            n_leaves=d["n_leaves"],
            split_features=list(d["split_features"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "CartTree":
        return cls.from_json_dict(json.loads(text))


def _node_impurity(ys: np.ndarray, kind: str) -> float:
    m = ys.size
    if kind == "gini":
        pos = float(ys.sum())
        return m - (pos * pos + (m - pos) * (m - pos)) / m
    s = float(ys.sum())
    return float(ys @ ys) - s * s / m


def _best_split(x, y, rows, min_leaf, kind, node_impurity):
    """Best (gain, feature, threshold) over all features, or None.

    Candidate thresholds sit midway between consecutive distinct values;
    both children must keep at least ``min_leaf`` rows. Ties go to the
    lowest feature index, then the smallest threshold."""
    m = rows.size
    if m < 2 * min_leaf:
        return None
    best = None
    for f in range(x.shape[1]):
        xv = x[rows, f]
        order = np.argsort(xv, kind="stable")
        xs = xv[order]
        ys = y[rows][order]
        cnt = np.arange(1, m, dtype=np.float64)
        csum = np.cumsum(ys)[:-1]
        total = float(ys.sum())
        rcnt = m - cnt
        if kind == "gini":
            left = cnt - (csum**2 + (cnt - csum) ** 2) / cnt
            rsum = total - csum
            right = rcnt - (rsum**2 + (rcnt - rsum) ** 2) / rcnt
        else:
            csq = np.cumsum(ys * ys)[:-1]
            tsq = float(ys @ ys)
            left = csq - csum**2 / cnt
            rsum = total - csum
            right = (tsq - csq) - rsum**2 / rcnt
        ok = (xs[1:] > xs[:-1]) & (cnt >= min_leaf) & (rcnt >= min_leaf)
        if not ok.any():
            continue
        gains = np.where(ok, node_impurity - left - right, -np.inf)
        j = int(np.argmax(gains))
        if best is None or gains[j] > best[0]:
            best = (float(gains[j]), f, float((xs[j] + xs[j + 1]) / 2.0))
    return best


def learn_groups_cart(x_split, y, max_depth: int = 3, min_leaf: int = 5) -> CartTree:
    """Grow a greedy CART tree whose leaves define input groups.

    Impurity is squared error, or Gini when y is two-valued 0/1. A split is
    kept only if it reduces impurity by at least 1e-6 of the root impurity,
    so pure-noise responses are not chopped up by exact ties. When nothing
    clears that bar the root itself is the single leaf, with a warning.
    """
    x = np.asarray(x_split, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("x_split must be (n, q) with one response per row")
    if max_depth < 1:
        raise ValueError("max_depth must be at least 1")
    if min_leaf < 1:
        raise ValueError("min_leaf must be at least 1")
    uniq = np.unique(y)
    kind = "gini" if uniq.size == 2 and np.isin(uniq, (0.0, 1.0)).all() else "squared"
    root_impurity = _node_impurity(y, kind)
    gain_floor = 1e-6 * root_impurity

    next_leaf = [0]
    used: set[int] = set()

    def grow(rows: np.ndarray, depth: int) -> CartNode:
        ys = y[rows]
        value = float(ys.mean())
        if depth < max_depth:
            imp = _node_impurity(ys, kind)
            got = _best_split(x, y, rows, min_leaf, kind, imp) if imp > 0 else None
            if got is not None and got[0] > 0.0 and got[0] >= gain_floor:
                gain, f, thr = got
                used.add(f)
                goes_left = x[rows, f] <= thr
                left = grow(rows[goes_left], depth + 1)
                right = grow(rows[~goes_left], depth + 1)
                return CartNode(
                    feature=f,
                    threshold=thr,
                    left=left,
                    right=right,
                    n_rows=rows.size,
                    value=value,
                )
        next_leaf[0] += 1
        return CartNode(leaf_id=next_leaf[0], n_rows=rows.size, value=value)

    root = grow(np.arange(y.shape[0]), 0)
    if root.is_leaf:
        warnings.warn(
            "no split improves impurity; all rows form one group",
            DegenerateSplit,
            stacklevel=2,
        )
    return CartTree(
        root=root,
        max_depth=max_depth,
        min_leaf=min_leaf,
        n_leaves=next_leaf[0],
        split_features=sorted(used),
    )


# ---------------------------------------------------------------------------
# Boosted stump basis

@dataclass
class Stump:
    """A depth-1 regression tree: left value where x[feature] <= threshold."""

    feature: int
    threshold: float
    left_value: float
    right_value: float

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.where(
            x[:, self.feature] <= self.threshold, self.left_value, self.right_value
        )


@dataclass
class BoostBasis:
    """Stumps from a squared-loss booster plus their training evaluations.

    ``basis_matrix`` column m is stump m evaluated on the training X,
    unscaled; the booster's own prediction is ``intercept`` plus
    ``learning_rate`` times the row sum of the evaluations. ``degenerate``
    flags an early stop — the residuals admitted no further split."""

    stumps: list[Stump]
    basis_matrix: np.ndarray
    learning_rate: float
    intercept: float
    degenerate: bool = False

    @property
    def n_stumps(self) -> int:
        return len(self.stumps)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if not self.stumps:
            return np.empty((x.shape[0], 0))
        return np.column_stack([s.evaluate(x) for s in self.stumps])

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return self.intercept + self.learning_rate * self.evaluate(x).sum(axis=1)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "learning_rate": self.learning_rate,
            "intercept": self.intercept,
            "degenerate": self.degenerate,
            "stumps": [
                {
                    "feature": s.feature,
                    "threshold": s.threshold,
                    "left_value": s.left_value,
                    "right_value": s.right_value,
                }
                for s in self.stumps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json_dict(cls, d: dict, x_train=None) -> "BoostBasis":
        stumps = [
            Stump(s["feature"], s["threshold"], s["left_value"], s["right_value"])
            for s in d["stumps"]
        ]
        basis = np.empty((0, len(stumps)))
        out = cls(
            stumps=stumps,
            basis_matrix=basis,
            learning_rate=d["learning_rate"],
            intercept=d["intercept"],
            degenerate=d["degenerate"],
        )
        if x_train is not None:
            out.basis_matrix = out.evaluate(x_train)
        return out

    @classmethod
    def from_json(cls, text: str, x_train=None) -> "BoostBasis":
        return cls.from_json_dict(json.loads(text), x_train)


def boost_basis(
    dataset: Dataset,
    n_rounds: int = 50,
    learning_rate: float = 0.1,
    depth: int = 1,
) -> BoostBasis:
    """Run squared-loss gradient boosting with depth-1 stumps.

    Starts from the response mean; each round fits the best single split to
    the current residuals and steps by ``learning_rate``. Stops early when
    no split reduces the residual impurity (constant y stops before the
    first stump), which sets ``degenerate``.
    """
    if dataset.family.kind != "gaussian":
        raise InvalidFamily("the stump booster models a gaussian response")
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    if depth != 1:
        raise ValueError("only depth-1 stumps are supported")
    x, y = dataset.x, dataset.y
    n = x.shape[0]
    rows = np.arange(n)
    intercept = float(y.mean())
    pred = np.full(n, intercept)
    stumps: list[Stump] = []
    columns: list[np.ndarray] = []
    for _ in range(n_rounds):
        resid = y - pred
        imp = _node_impurity(resid, "squared")
        got = _best_split(x, resid, rows, 1, "squared", imp) if imp > 0 else None
        if got is None or got[0] <= 0.0:
            break
        _, f, thr = got
        goes_left = x[:, f] <= thr
        stump = Stump(
            feature=f,
            threshold=thr,
            left_value=float(resid[goes_left].mean()),
            right_value=float(resid[~goes_left].mean()),
        )
        col = stump.evaluate(x)
        pred = pred + learning_rate * col
        stumps.append(stump)
        columns.append(col)
    basis = np.column_stack(columns) if columns else np.empty((n, 0))
    return BoostBasis(
        stumps=stumps,
        basis_matrix=basis,
        learning_rate=learning_rate,
        intercept=intercept,
        degenerate=len(stumps) < n_rounds,
    )


# ---------------------------------------------------------------------------
# Shared-support treatment-effect estimation

@dataclass
class RLearnerFit:
    """Two-stage effect estimate under randomized 50/50 treatment.

    ``m_hat`` holds cross-fitted outcome predictions; ``tau_fit`` is the
    effect path on the transformed design (w - 1/2) * x with no intercept
    and no standardization, so its coefficients solve the stated objective
    directly. ``outcome_support`` is the full-data outcome model's support,
    the source of the effect model's penalty factors."""

    m_hat: np.ndarray
    propensity: float
    tau_fit: PathFit
    tau_lambda_index: int
    tau_cv: CvFit
    outcome_fit: PathFit
    outcome_lambda_index: int
    outcome_support: np.ndarray
    alpha: float
    cv_trace: dict[float, float]
    alpha_fits: dict[float, PathFit] = field(default_factory=dict)
    alpha_lambda_choice: dict[float, int] = field(default_factory=dict)


def rlearner_pretrain(
    dataset: Dataset,
    alpha_grid=None,
    cross_fit_folds: int = 5,
    controls: Controls | None = None,
    *,
    folds: int = 10,
    fold_seed: int = 0,
    lambda_rule: str = "min",
) -> RLearnerFit:
    """Estimate a linear treatment effect with outcome-support transfer.

    The outcome model is a Gaussian lasso of y on x: a full-data fit picks
    the support, and ``cross_fit_folds``-fold cross-fitting produces held-out
    predictions m_hat. The effect model then minimizes

        (1/n) sum_i [ (y_i - m_hat_i) - (w_i - 1/2) x_i' theta ]^2
              + lambda * sum_j pf_j |theta_j|

    with penalty factors 1 on the outcome support and 1/alpha off it, no
    offset and no intercept; lambda and alpha are chosen by cross-validation
    of that same squared loss (ties toward the smaller alpha).
    """
    if dataset.treatment is None:
        raise InvalidTreatment("a binary treatment indicator is required")
    if dataset.family.kind != "gaussian":
        raise InvalidFamily("the effect pipeline models a gaussian outcome")
    alpha_grid = _resolve_alpha_grid(alpha_grid)
    x, y, w = dataset.x, dataset.y, dataset.treatment
    n, p = x.shape

    ds_out = Dataset(x=x, y=y, family=GAUSSIAN, fixed_offset=dataset.fixed_offset)
    cv_out = cv_path(
        ds_out,
        penalty=PenaltySpec(),
        folds=make_folds(n, _group_fold_count(n, folds), seed=fold_seed),
        controls=controls,
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    l_out = _pick_lambda(cv_out, lambda_rule)
    support = cv_out.full_fit.support(l_out)

    plan_cf = make_folds(n, cross_fit_folds, seed=fold_seed + 1)
    m_hat = np.empty(n)
    for f in range(1, plan_cf.k + 1):
        hold = plan_cf.assignment == f
        keep = ~hold
        ds_f = Dataset(x=x[keep], y=y[keep], family=GAUSSIAN)
        cv_f = cv_path(
            ds_f,
            penalty=PenaltySpec(),
            folds=make_folds(int(keep.sum()), _group_fold_count(int(keep.sum()), folds),
                             seed=fold_seed + 10 + f),
            controls=controls,
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        m_hat[hold] = cv_f.full_fit.predict(x[hold], _pick_lambda(cv_f, lambda_rule))

    x_eff = (w - 0.5)[:, None] * x
    y_eff = y - m_hat
    ct = controls if controls is not None else Controls()
    ct_tau = replace(ct, standardize=False, fit_intercept=False)
    fold_ct = replace(
        RELAXED_FOLD_CONTROLS, standardize=False, fit_intercept=False
    )
    plan_tau = make_folds(n, _group_fold_count(n, folds), seed=fold_seed + 2)
    off_support = np.setdiff1d(np.arange(p), support)

    best = None
    trace: dict[float, float] = {}
    alpha_fits: dict[float, PathFit] = {}
    alpha_choice: dict[float, int] = {}
    for a in alpha_grid:
        pf = np.ones(p)
        pf[off_support] = np.inf if a == 0.0 else 1.0 / a
        ds_a = Dataset(x=x_eff, y=y_eff, family=GAUSSIAN)
        if np.all(np.isinf(pf)):
            warnings.warn(
                "outcome model kept no features; the effect fit is all-zero "
                "at alpha = 0",
                DegenerateTransfer,
                stacklevel=2,
            )
            pen = _intercept_only_penalty(ds_a)
        else:
            pen = PenaltySpec(penalty_factors=pf)
        cv_a = cv_path(
            ds_a,
            penalty=pen,
            folds=plan_tau,
            metric="mse",
            controls=ct_tau,
            fold_controls=fold_ct,
        )
        l_a = _pick_lambda(cv_a, lambda_rule)
        err = float(cv_a.mean_error[l_a])
        trace[a] = err
        alpha_fits[a] = cv_a.full_fit
        alpha_choice[a] = l_a
        if best is None or err < best[0]:
            best = (err, a, cv_a, l_a)
    _, a_best, cv_tau, l_tau = best

    return RLearnerFit(
        m_hat=m_hat,
        propensity=0.5,
        tau_fit=cv_tau.full_fit,
        tau_lambda_index=l_tau,
        tau_cv=cv_tau,
        outcome_fit=cv_out.full_fit,
        outcome_lambda_index=l_out,
        outcome_support=support,
        alpha=a_best,
        cv_trace=trace,
        alpha_fits=alpha_fits,
        alpha_lambda_choice=alpha_choice,
    )


def rlearner_predict(fit: RLearnerFit, x_new) -> np.ndarray:
    """Evaluate the estimated effect x' theta on new rows."""
    x_new = np.asarray(x_new, dtype=np.float64)
    return fit.tau_fit.link(x_new, fit.tau_lambda_index)


# ---------------------------------------------------------------------------
# Generalizing across unknown test groups

@dataclass
class GroupGeneralizer:
    """Per-group models, a group classifier, and a stacked combiner.

    The combiner is a binomial lasso over 3K features per row: each group's
    predicted probability of y=1, the classifier's group-membership
    probabilities, and their elementwise products."""

    pretrain: PretrainModel
    group_classifier: PathFit
    classifier_lambda_index: int
    combiner: PathFit
    combiner_lambda_index: int
    n_groups: int


def _stacked_features(p_hat: np.ndarray, q_hat: np.ndarray) -> np.ndarray:
    return np.hstack([p_hat, q_hat, p_hat * q_hat])


def _fit_group_classifier(x, group, n_groups, folds, seed, controls):
    # Default lambda grid, not the floored classification grid: when groups
    # are well separated the optimum sits at the small end of the path.
    fam = multinomial(n_groups)
    ds = Dataset(x=x, y=group.astype(np.float64), family=fam)
    n = x.shape[0]
    plan = make_folds(
        n, _group_fold_count(n, folds), strata=group, seed=seed
    )
    cv = cv_path(
        ds,
        penalty=PenaltySpec(),
        folds=plan,
        controls=controls,
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    return cv.full_fit, cv.lambda_min_index


def _per_group_probabilities(model: PretrainModel, x) -> np.ndarray:
    """Each training group's second-stage probability of y=1, per row."""
    m = x.shape[0]
    cols = []
    for g in model.groups:
        cols.append(pretrain_predict(model, x, np.full(m, g, dtype=np.int64)))
    return np.column_stack(cols)


def fit_group_generalizer(
    dataset: Dataset,
    alpha_grid=None,
    controls: Controls | None = None,
    *,
    folds: int = 10,
    fold_seed: int = 0,
    cross_fit_folds: int = 5,
) -> GroupGeneralizer:
    """Fit the full stack for group-less test rows.

    Trains the two-step pipeline and a multinomial group classifier on all
    rows, then a combiner on cross-fitted features: rows are split into
    ``cross_fit_folds`` folds (stratified on group-and-class cells), both
    models are refit without each held-out fold, and the held-out rows'
    predicted probabilities feed a binomial lasso predicting y.
    """
    if dataset.family.kind != "binomial":
        raise InvalidFamily("the group generalizer models a binomial response")
    if dataset.group is None or dataset.n_groups < 2:
        raise InvalidGrouping("nothing to generalize with a single training group")
    n = dataset.n
    n_groups = dataset.n_groups
    y = dataset.y
    group = dataset.group

    cells = (group - 1) * 2 + y.astype(np.int64)
    plan_cf = make_folds(n, cross_fit_folds, strata=cells, seed=fold_seed + 17)
    feats = np.empty((n, 3 * n_groups))
    for f in range(1, plan_cf.k + 1):
        hold = plan_cf.assignment == f
        keep = ~hold
        ds_f = Dataset(
            x=dataset.x[keep],
            y=y[keep],
            family=BINOMIAL,
            group=group[keep],
        )
        pm_f = pretrain_fit(
            ds_f, alpha_grid, fold_seed=fold_seed, controls=controls, folds=folds
        )
        clf_f, l_f = _fit_group_classifier(
            dataset.x[keep], group[keep], n_groups, folds, fold_seed + f, controls
        )
        x_hold = dataset.x[hold]
        p_hat = _per_group_probabilities(pm_f, x_hold)
        q_hat = clf_f.predict(x_hold, l_f, kind="response")
        feats[hold] = _stacked_features(p_hat, q_hat)

    pm = pretrain_fit(
        dataset, alpha_grid, fold_seed=fold_seed, controls=controls, folds=folds
    )
    clf, l_clf = _fit_group_classifier(
        dataset.x, group, n_groups, folds, fold_seed + 23, controls
    )
    ds_comb = Dataset(x=feats, y=y, family=BINOMIAL)
    cv_comb = cv_path(
        ds_comb,
        penalty=_stage_penalty(BINOMIAL),
        folds=make_folds(
            n,
            _group_fold_count(n, folds),
            strata=y.astype(np.int64),
            seed=fold_seed + 29,
        ),
        controls=controls,
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    return GroupGeneralizer(
        pretrain=pm,
        group_classifier=clf,
        classifier_lambda_index=l_clf,
        combiner=cv_comb.full_fit,
        combiner_lambda_index=cv_comb.lambda_min_index,
        n_groups=n_groups,
    )


def generalize_predict(
    gg: GroupGeneralizer, x_new, kind: str = "response"
) -> np.ndarray:
    """Predict y for rows of unknown group via the stacked combiner."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim != 2:
        raise ValueError("x_new must be 2-D")
    p_hat = _per_group_probabilities(gg.pretrain, x_new)
    q_hat = gg.group_classifier.predict(
        x_new, gg.classifier_lambda_index, kind="response"
    )
    feats = _stacked_features(p_hat, q_hat)
    return gg.combiner.predict(feats, gg.combiner_lambda_index, kind=kind)
