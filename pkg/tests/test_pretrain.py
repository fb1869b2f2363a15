"""Two-step pipeline: transfer recipes, per-group alpha selection, endpoint
equivalences, and prediction with rebuilt offsets."""

import numpy as np
import pytest

from lassotransfer import (
    BINOMIAL,
    GAUSSIAN,
    Dataset,
    PenaltySpec,
    TransferArtifact,
    artifact_transfer,
    build_transfer,
    cv_path,
    extract_artifact,
    fit_path,
    make_folds,
    multinomial,
    pretrain_fit,
    pretrain_predict,
)
from lassotransfer.exceptions import (
    DegenerateTransfer,
    GroupTooSmall,
    InvalidFamily,
    InvalidGrouping,
    UnknownGroup,
)
from lassotransfer.pretrain import CLASSIFICATION_MIN_RATIO
from lassotransfer.selection import RELAXED_FOLD_CONTROLS


def grouped_gaussian(seed=0, n_per=60, k_groups=3, p=15, shared=4, shift=1.0):
    """Groups share a few strong features; each group adds one of its own."""
    rng = np.random.default_rng(seed)
    n = n_per * k_groups
    x = rng.standard_normal((n, p))
    group = np.repeat(np.arange(1, k_groups + 1), n_per)
    beta_shared = np.zeros(p)
    beta_shared[:shared] = 2.0
    y = np.empty(n)
    for g in range(1, k_groups + 1):
        beta = beta_shared.copy()
        beta[shared + g - 1] += shift
        rows = group == g
        y[rows] = x[rows] @ beta + rng.standard_normal(int(rows.sum()))
    return Dataset(x=x, y=y, family=GAUSSIAN, group=group)


def stage_one_fit(ds):
    return fit_path(ds, PenaltySpec(lambda_min_ratio=0.01))


# ---------------------------------------------------------------------------
# transfer recipe
# ---------------------------------------------------------------------------


def test_alpha_one_is_a_clean_slate():
    ds = grouped_gaussian()
    fit = stage_one_fit(ds)
    offset, pf = build_transfer(fit, 60, 1.0, ds.x[:7])
    assert np.array_equal(offset, np.zeros(7))
    assert np.array_equal(pf, np.ones(ds.p))


def test_alpha_zero_freezes_the_first_stage():
    ds = grouped_gaussian()
    fit = stage_one_fit(ds)
    l = 60
    offset, pf = build_transfer(fit, l, 0.0, ds.x[:9])
    s = fit.support(l)
    assert s.size > 0
    assert np.all(pf[s] == 1.0)
    mask = np.ones(ds.p, dtype=bool)
    mask[s] = False
    assert np.all(np.isinf(pf[mask]))
    want = ds.x[:9] @ fit.coefficients[l] + fit.intercepts[l]
    assert np.allclose(offset, want, atol=1e-12)


def test_intermediate_alpha_scales_offset_and_factors():
    ds = grouped_gaussian()
    fit = stage_one_fit(ds)
    l = 60
    offset, pf = build_transfer(fit, l, 0.5, ds.x)
    s = fit.support(l)
    off_s = np.setdiff1d(np.arange(ds.p), s)
    assert np.all(pf[s] == 1.0)
    assert np.all(pf[off_s] == 2.0)  # 1/alpha before the solver's rescaling
    full = ds.x @ fit.coefficients[l] + fit.intercepts[l]
    assert np.allclose(offset, 0.5 * full)


def test_empty_support_with_alpha_zero_warns():
    ds = grouped_gaussian()
    fit = stage_one_fit(ds)
    assert fit.support(0).size == 0  # top of the path
    with pytest.warns(DegenerateTransfer):
        offset, pf = build_transfer(fit, 0, 0.0, ds.x)
    assert np.all(np.isinf(pf))
    assert np.allclose(offset, fit.intercepts[0])


def test_transfer_rejects_bad_inputs():
    ds = grouped_gaussian()
    fit = stage_one_fit(ds)
    with pytest.raises(ValueError):
        build_transfer(fit, 60, 1.5, ds.x)
    with pytest.raises(ValueError):
        build_transfer(fit, 60, 0.5, ds.x[:, :3])


# ---------------------------------------------------------------------------
# artifact container
# ---------------------------------------------------------------------------


def test_artifact_checks_support_exactly():
    beta = np.array([0.0, 1.2, 0.0, -0.4])
    TransferArtifact(GAUSSIAN, 0.3, beta, np.array([1, 3]), 0.5, 0.1)
    with pytest.raises(ValueError):
        TransferArtifact(GAUSSIAN, 0.3, beta, np.array([1]), 0.5, 0.1)
    with pytest.raises(ValueError):
        TransferArtifact(GAUSSIAN, 0.3, beta, np.array([1, 3]), 1.2, 0.1)


def test_artifact_json_round_trip():
    ds = grouped_gaussian()
    fit = stage_one_fit(ds)
    art = extract_artifact(fit, 55, alpha=0.3)
    back = TransferArtifact.from_json(art.to_json())
    assert back.family == art.family
    assert back.alpha == art.alpha
    assert back.source_lambda == art.source_lambda
    assert np.array_equal(back.support, art.support)
    assert np.array_equal(back.beta0, art.beta0)
    assert back.mu0 == art.mu0

    # the recipe from the artifact matches the recipe from the fit
    o1, p1 = build_transfer(fit, 55, 0.4, ds.x[:5])
    o2, p2 = artifact_transfer(back, 0.4, ds.x[:5])
    assert np.allclose(o1, o2, atol=1e-15)
    assert np.array_equal(p1, p2)


def test_multioutput_artifact_round_trip():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((50, 8))
    y = rng.integers(1, 4, 50).astype(float)
    y[:3] = [1, 2, 3]
    fit = fit_path(Dataset(x=x, y=y, family=multinomial(3)),
                   PenaltySpec(lambda_min_ratio=0.01))
    art = extract_artifact(fit, 30)
    back = TransferArtifact.from_json(art.to_json())
    assert np.array_equal(back.beta0, art.beta0)
    assert np.allclose(back.mu0, art.mu0)
    off, pf = artifact_transfer(back, 0.5, x[:4])
    assert off.shape == (4, 3)
    assert pf.shape == (8,)


# ---------------------------------------------------------------------------
# pipeline endpoints
# ---------------------------------------------------------------------------


def test_alpha_one_grid_reproduces_independent_fits():
    ds = grouped_gaussian(seed=5)
    model = pretrain_fit(ds, alpha_grid=(1.0,), fold_seed=11, folds=5)
    for g in model.groups:
        idx = np.flatnonzero(ds.group == g)
        ds_g = ds.rows(idx)
        solo = cv_path(
            ds_g,
            folds=make_folds(idx.size, 5, seed=11 + g),
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        l = model.group_lambda_choice[g]
        assert l == solo.lambda_min_index
        diff = model.group_fits[g].coefficients[l] - solo.full_fit.coefficients[l]
        assert np.max(np.abs(diff)) <= 1e-8
        assert model.alpha_per_group[g] == 1.0


def test_alpha_zero_grid_restricts_support():
    ds = grouped_gaussian(seed=6)
    model = pretrain_fit(ds, alpha_grid=(0.0,), fold_seed=2, folds=5)
    s = set(model.artifact.support.tolist())
    for g in model.groups:
        assert set(model.group_support(g).tolist()) <= s


def test_cv_trace_covers_every_pair():
    ds = grouped_gaussian(seed=7, n_per=40)
    grid = (0.0, 0.4, 1.0)
    model = pretrain_fit(ds, alpha_grid=grid, folds=5)
    assert set(model.cv_trace) == {(g, a) for g in (1, 2, 3) for a in grid}
    assert all(np.isfinite(v) for v in model.cv_trace.values())
    for g in model.groups:
        best = min(grid, key=lambda a: model.cv_trace[(g, a)])
        assert model.alpha_per_group[g] == best


def test_total_support_is_the_union():
    ds = grouped_gaussian(seed=8)
    model = pretrain_fit(ds, alpha_grid=(0.0, 0.5, 1.0), folds=5)
    union = set(model.artifact.support.tolist())
    for g in model.groups:
        union |= set(model.group_support(g).tolist())
    assert set(model.total_support().tolist()) == union
    assert model.support_size == len(union)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


def test_pretrain_requires_groups():
    ds = grouped_gaussian()
    flat = Dataset(x=ds.x, y=ds.y, family=GAUSSIAN)
    with pytest.raises(InvalidGrouping):
        pretrain_fit(flat)
    one = Dataset(x=ds.x, y=ds.y, family=GAUSSIAN, group=np.ones(ds.n, dtype=int))
    with pytest.raises(InvalidGrouping):
        pretrain_fit(one)


def test_tiny_group_is_rejected():
    rng = np.random.default_rng(9)
    n = 45
    x = rng.standard_normal((n, 4))
    y = rng.standard_normal(n)
    group = np.r_[np.ones(5, dtype=int), np.full(n - 5, 2, dtype=int)]
    with pytest.raises(GroupTooSmall):
        pretrain_fit(Dataset(x=x, y=y, family=GAUSSIAN, group=group))


def test_multigaussian_routed_elsewhere():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((30, 4))
    y = rng.standard_normal((30, 2))
    from lassotransfer import multigaussian

    ds = Dataset(x=x, y=y, family=multigaussian(2),
                 group=np.repeat([1, 2], 15))
    with pytest.raises(InvalidFamily):
        pretrain_fit(ds)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def test_predict_alpha_one_group_ignores_stage_one():
    ds = grouped_gaussian(seed=12)
    model = pretrain_fit(ds, alpha_grid=(1.0,), folds=5)
    rng = np.random.default_rng(13)
    xt = rng.standard_normal((8, ds.p))
    for g in model.groups:
        pred = pretrain_predict(model, xt, np.full(8, g))
        own = model.group_fits[g].predict(xt, model.group_lambda_choice[g])
        assert np.allclose(pred, own, atol=1e-12)


def test_predict_rejects_unknown_groups():
    ds = grouped_gaussian(seed=14, n_per=40)
    model = pretrain_fit(ds, alpha_grid=(0.5,), folds=5)
    xt = np.zeros((3, ds.p))
    with pytest.raises(UnknownGroup):
        pretrain_predict(model, xt, np.array([1, 2, 9]))
    with pytest.raises(ValueError):
        pretrain_predict(model, xt, np.array([1, 2]))


def test_predict_mixes_groups_row_by_row():
    ds = grouped_gaussian(seed=15, n_per=40)
    model = pretrain_fit(ds, alpha_grid=(0.0, 1.0), folds=5)
    rng = np.random.default_rng(16)
    xt = rng.standard_normal((9, ds.p))
    labels = np.array([1, 2, 3, 1, 2, 3, 1, 2, 3])
    mixed = pretrain_predict(model, xt, labels)
    for g in (1, 2, 3):
        rows = labels == g
        alone = pretrain_predict(model, xt[rows], np.full(int(rows.sum()), g))
        assert np.array_equal(mixed[rows], alone)


def test_degenerate_stage_one_still_yields_a_model():
    # constant response: stage one has an empty support, so alpha = 0 leaves
    # no usable features and the groups fall back to intercept-only fits
    rng = np.random.default_rng(17)
    n = 60
    x = rng.standard_normal((n, 5))
    y = np.full(n, 2.5)
    ds = Dataset(x=x, y=y, family=GAUSSIAN, group=np.repeat([1, 2], 30))
    with pytest.warns(DegenerateTransfer):
        model = pretrain_fit(ds, alpha_grid=(0.0,), folds=5)
    assert model.artifact.support.size == 0
    xt = rng.standard_normal((6, 5))
    pred = pretrain_predict(model, xt, np.array([1, 1, 1, 2, 2, 2]))
    # offset recipe returns mu0, the group intercepts adjust on top
    assert np.allclose(pred, 2.5, atol=1e-8)


def test_binomial_pipeline_end_to_end():
    rng = np.random.default_rng(18)
    n_per, p = 70, 10
    x = rng.standard_normal((2 * n_per, p))
    group = np.repeat([1, 2], n_per)
    beta = np.zeros(p)
    beta[:3] = 1.5
    eta = x @ beta + np.where(group == 1, 0.5, -0.5)
    y = (rng.uniform(size=2 * n_per) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    ds = Dataset(x=x, y=y, family=BINOMIAL, group=group)
    model = pretrain_fit(ds, alpha_grid=(0.0, 0.5, 1.0), folds=5, fold_seed=4)
    assert set(model.alpha_per_group) == {1, 2}
    prob = pretrain_predict(model, x, group, kind="response")
    assert prob.shape == (2 * n_per,)
    assert np.all((prob >= 0) & (prob <= 1))
    # the fitted probabilities separate the classes better than chance
    from lassotransfer import auc

    assert auc(prob, y) > 0.7


def test_stage_two_offset_matches_residual_fitting():
    # applying the transfer offset is the same as fitting y minus the offset
    ds = grouped_gaussian(seed=19)
    fit = stage_one_fit(ds)
    idx = np.flatnonzero(ds.group == 2)
    offset, pf = build_transfer(fit, 60, 0.3, ds.x[idx])
    with_off = fit_path(
        Dataset(x=ds.x[idx], y=ds.y[idx], family=GAUSSIAN, fixed_offset=offset),
        PenaltySpec(penalty_factors=pf),
    )
    shifted = fit_path(
        Dataset(x=ds.x[idx], y=ds.y[idx] - offset, family=GAUSSIAN),
        PenaltySpec(penalty_factors=pf, lambda_sequence=with_off.lambdas),
    )
    assert np.max(np.abs(with_off.coefficients - shifted.coefficients)) < 1e-8
