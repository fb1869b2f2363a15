"""Multi-output pipelines: one-vs-rest classes, per-column responses, and
sequential chains — endpoint equivalences, degeneracy errors, and the
Monte Carlo behaviors of each reduction."""

import numpy as np
import pytest

from lassotransfer import (
    BINOMIAL,
    GAUSSIAN,
    Dataset,
    PenaltySpec,
    TransferArtifact,
    artifact_transfer,
    chain_predict,
    chain_pretrain,
    cv_path,
    make_folds,
    multigaussian,
    multinomial,
    multinomial_pretrain,
    multiresponse_predict,
    multiresponse_pretrain,
    one_vs_rest_predict,
)
from lassotransfer.exceptions import ClassTooSmall, ColumnDegenerate, InvalidFamily
from lassotransfer.selection import RELAXED_FOLD_CONTROLS


def class_data(seed=0, n=180, p=10, n_classes=3, signal=1.6):
    """Labels drawn from a softmax over a few shared-row coefficients."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    coef = np.zeros((p, n_classes))
    coef[:4] = rng.normal(scale=signal, size=(4, n_classes))
    eta = x @ coef
    prob = np.exp(eta - eta.max(axis=1, keepdims=True))
    prob /= prob.sum(axis=1, keepdims=True)
    y = np.array([rng.choice(n_classes, p=row) for row in prob]) + 1.0
    return x, y


def column_data(seed=0, n=120, p=12, n_cols=3, noise=0.5):
    """Response columns sharing four nonzero coefficient rows."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    coef = np.zeros((p, n_cols))
    coef[:4] = rng.normal(scale=1.2, size=(4, n_cols)) + 0.8
    y = x @ coef + rng.normal(scale=noise, size=(n, n_cols))
    return x, y


def test_one_vs_rest_alpha_one_matches_independent_fits():
    x, y = class_data(seed=11)
    ds = Dataset(x=x, y=y, family=multinomial(3))
    model = multinomial_pretrain(ds, alpha_grid=(1.0,), fold_seed=5)
    n = x.shape[0]
    for k in (1, 2, 3):
        y_k = (y == k).astype(np.float64)
        plan = make_folds(n, 10, strata=y_k.astype(np.int64), seed=5 + k)
        solo = cv_path(
            Dataset(x=x, y=y_k, family=BINOMIAL),
            penalty=PenaltySpec(lambda_min_ratio=0.01),
            folds=plan,
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        fit = model.per_class[k]
        assert model.class_lambda_choice[k] == solo.lambda_min_index
        assert np.allclose(
            fit.coefficients, solo.full_fit.coefficients, atol=1e-8, rtol=0.0
        )
        assert np.allclose(
            fit.intercepts, solo.full_fit.intercepts, atol=1e-8, rtol=0.0
        )


def test_one_vs_rest_alpha_zero_keeps_supports_inside_stage_one():
    x, y = class_data(seed=21)
    ds = Dataset(x=x, y=y, family=multinomial(3))
    model = multinomial_pretrain(ds, alpha_grid=(0.0,), fold_seed=1)
    stage1 = model.first_stage.coefficients[model.first_stage_lambda_index]
    for k in (1, 2, 3):
        col_support = set(np.flatnonzero(stage1[:, k - 1] != 0.0).tolist())
        art = model.per_class_artifact[k]
        assert set(art.support.tolist()) == col_support
        assert set(model.class_support(k).tolist()) <= col_support


def test_one_vs_rest_classification_is_argmax_and_shift_invariant():
    x, y = class_data(seed=31)
    ds = Dataset(x=x, y=y, family=multinomial(3))
    model = multinomial_pretrain(ds, alpha_grid=(0.0, 1.0), folds=5)
    links = one_vs_rest_predict(model, x, kind="link")
    probs = one_vs_rest_predict(model, x, kind="response")
    cls = one_vs_rest_predict(model, x, kind="class")
    assert np.array_equal(cls, np.argmax(links, axis=1) + 1)
    assert np.array_equal(cls, np.argmax(probs, axis=1) + 1)
    # a common shift in every class's link cannot change the winner
    assert np.array_equal(np.argmax(links + 3.7, axis=1) + 1, cls)
    assert np.mean(cls == y) > 0.6


def test_one_vs_rest_rejects_bad_inputs():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((40, 5))
    y2 = np.tile([1.0, 2.0], 20)
    with pytest.raises(InvalidFamily):
        multinomial_pretrain(Dataset(x=x, y=y2, family=multinomial(2)))
    with pytest.raises(InvalidFamily):
        multinomial_pretrain(Dataset(x=x, y=rng.standard_normal(40), family=GAUSSIAN))
    y3 = np.repeat([1.0, 2.0, 3.0], [20, 15, 5])
    with pytest.raises(ClassTooSmall):
        multinomial_pretrain(Dataset(x=x, y=y3, family=multinomial(3)))


def test_stage_one_supports_are_row_consistent():
    x, y = class_data(seed=41, n=200)
    ds = Dataset(x=x, y=y, family=multinomial(3))
    model = multinomial_pretrain(ds, alpha_grid=(0.5,), folds=5)
    rows = set(
        model.first_stage.support(model.first_stage_lambda_index).tolist()
    )
    for k in (1, 2, 3):
        assert set(model.per_class_artifact[k].support.tolist()) == rows


def test_multiresponse_identical_columns_give_identical_fits():
    rng = np.random.default_rng(7)
    n, p = 90, 10
    x = rng.standard_normal((n, p))
    col = x[:, 0] * 1.4 - x[:, 2] * 0.8 + rng.normal(scale=0.5, size=n)
    y = np.column_stack([col, col, col])
    ds = Dataset(x=x, y=y, family=multigaussian(3))
    model = multiresponse_pretrain(ds, alpha_grid=(0.5,), fold_seed=3)
    ref = model.per_column[0]
    l_ref = model.column_lambda_choice[0]
    for k in (1, 2):
        assert model.column_lambda_choice[k] == l_ref
        assert np.allclose(
            model.per_column[k].coefficients, ref.coefficients, atol=1e-8, rtol=0.0
        )
        assert np.allclose(
            model.per_column[k].intercepts, ref.intercepts, atol=1e-8, rtol=0.0
        )


def test_multiresponse_constant_column_raises():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((50, 6))
    y = rng.standard_normal((50, 3))
    y[:, 1] = 4.2
    with pytest.raises(ColumnDegenerate):
        multiresponse_pretrain(Dataset(x=x, y=y, family=multigaussian(3)))
    with pytest.raises(InvalidFamily):
        multiresponse_pretrain(Dataset(x=x, y=y[:, 0], family=GAUSSIAN))


def test_multiresponse_predict_rebuilds_column_offsets():
    x, y = column_data(seed=13)
    ds = Dataset(x=x, y=y, family=multigaussian(3))
    model = multiresponse_pretrain(ds, alpha_grid=(0.0, 0.5, 1.0), folds=5)
    rng = np.random.default_rng(99)
    x_new = rng.standard_normal((25, x.shape[1]))
    pred = multiresponse_predict(model, x_new)
    assert pred.shape == (25, 3)
    for k in range(3):
        art = model.per_column_artifact[k]
        off, _ = artifact_transfer(art, art.alpha, x_new)
        manual = model.per_column[k].link(
            x_new, model.column_lambda_choice[k], offset=off
        )
        assert np.array_equal(pred[:, k], manual)


def test_multiresponse_noise_keeps_stage_one_empty():
    # pooling twenty noise columns concentrates the CV minimum at the top of
    # the grid; the chosen model should carry no features at all
    n, p, n_cols = 100, 6, 20
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(7000 + seed)
        x = rng.normal(size=(n, p))
        y = rng.normal(size=(n, n_cols))
        ds = Dataset(x=x, y=y, family=multigaussian(n_cols))
        plan = make_folds(n, 3, seed=seed)
        cv = cv_path(
            ds,
            penalty=PenaltySpec(),
            folds=plan,
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        if cv.full_fit.support(cv.lambda_min_index).size == 0:
            hits += 1
        if seed == 0:
            # the loop replicates the pipeline's first stage exactly
            model = multiresponse_pretrain(
                ds, alpha_grid=(1.0,), folds=3, fold_seed=seed
            )
            assert model.first_stage_lambda_index == cv.lambda_min_index
            assert np.array_equal(
                model.first_stage.coefficients, cv.full_fit.coefficients
            )
    assert hits >= 80, f"stage-1 support empty in only {hits}/100 runs"


def _curve_is_valley_or_monotone(errs):
    signs = [np.sign(d) for d in np.diff(errs) if d != 0.0]
    rose = False
    for s in signs:
        if s > 0:
            rose = True
        elif rose:
            return False
    return True


def test_multiresponse_shared_rows_alpha_sweep_by_loocv():
    # six responses share four coefficient rows up to small perturbations;
    # each column's alpha sweep under leave-one-out CV should trace a valley
    # or monotone curve, with the chosen alpha no worse than fitting alone
    n, p, n_cols = 30, 12, 6
    grid = (0.0, 0.5, 1.0)
    rep_pass = 0
    for rep in range(20):
        rng = np.random.default_rng(8100 + rep)
        x = rng.normal(size=(n, p))
        coef = np.zeros((p, n_cols))
        base = rng.choice([-1.0, 1.0], size=4) * 2.0
        coef[:4] = base[:, None] + rng.normal(scale=0.2, size=(4, n_cols))
        y = x @ coef + rng.normal(scale=1.0, size=(n, n_cols))
        ds = Dataset(x=x, y=y, family=multigaussian(n_cols))
        cv1 = cv_path(
            ds,
            penalty=PenaltySpec(lambda_count=50),
            folds=make_folds(n, 10, seed=rep),
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        l1 = cv1.lambda_min_index
        stage1 = cv1.full_fit.coefficients[l1]
        mus = cv1.full_fit.intercepts[l1]
        loo = make_folds(n, n, seed=101 + rep)
        ok = True
        for k in range(n_cols):
            art = TransferArtifact(
                family=GAUSSIAN,
                mu0=float(mus[k]),
                beta0=stage1[:, k].copy(),
                support=np.flatnonzero(stage1[:, k] != 0.0),
                alpha=1.0,
                source_lambda=float(cv1.lambdas[l1]),
            )
            errs = []
            for a in grid:
                off, pf = artifact_transfer(art, a, x)
                cv_k = cv_path(
                    Dataset(x=x, y=y[:, k], family=GAUSSIAN, fixed_offset=off),
                    penalty=PenaltySpec(penalty_factors=pf, lambda_count=20),
                    folds=loo,
                    fold_controls=RELAXED_FOLD_CONTROLS,
                )
                errs.append(float(cv_k.mean_error[cv_k.lambda_min_index]))
            solo_err = errs[-1]
            if not (_curve_is_valley_or_monotone(errs) and min(errs) <= solo_err):
                ok = False
        rep_pass += ok
    assert rep_pass >= 14, f"only {rep_pass}/20 reps had clean alpha sweeps"


def test_chain_identical_columns_transfer_within_one_se():
    # a step-2 fit seeded by an identical column should never do meaningfully
    # worse than fitting that column alone, even without alpha = 1 available
    for seed in range(50):
        rng = np.random.default_rng(8800 + seed)
        n, p = 60, 10
        x = rng.normal(size=(n, p))
        signal = x[:, 0] * 1.2 - x[:, 1] * 0.9 + x[:, 2] * 0.7
        col = signal + rng.normal(scale=0.6, size=n)
        ds = Dataset(x=x, y=np.column_stack([col, col]), family=multigaussian(2))
        chain = chain_pretrain(
            ds, [0, 1], alpha_grid=(0.0, 0.5), fold_seed=seed, folds=5
        )
        chosen = chain.stage_cv[1].mean_error[chain.stage_lambda_choice[1]]
        plain = cv_path(
            Dataset(x=x, y=col, family=GAUSSIAN),
            penalty=PenaltySpec(),
            folds=make_folds(n, 5, seed=seed + 1),
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        bar = (
            plain.mean_error[plain.lambda_min_index]
            + plain.se_error[plain.lambda_min_index]
        )
        assert chosen <= bar, f"seed {seed}: {chosen} > {bar}"


def test_chain_independent_columns_prefer_alpha_one():
    chose_one = 0
    for seed in range(50):
        rng = np.random.default_rng(9300 + seed)
        n, p = 80, 10
        x = rng.normal(size=(n, p))
        y0 = x[:, 0] * 1.5 - x[:, 1] * 1.0 + rng.normal(scale=0.7, size=n)
        y1 = x[:, 5] * 1.5 + x[:, 6] * 1.0 + rng.normal(scale=0.7, size=n)
        ds = Dataset(x=x, y=np.column_stack([y0, y1]), family=multigaussian(2))
        chain = chain_pretrain(
            ds, [0, 1], alpha_grid=(0.0, 0.5, 1.0), fold_seed=seed, folds=5
        )
        chose_one += chain.alpha_per_step[1] == 1.0
    assert chose_one >= 30, f"alpha=1 chosen in only {chose_one}/50 runs"


def test_chain_single_step_equals_plain_cv():
    rng = np.random.default_rng(17)
    n, p = 80, 8
    x = rng.standard_normal((n, p))
    y = np.column_stack(
        [rng.standard_normal(n), x[:, 1] * 1.3 + rng.normal(scale=0.5, size=n)]
    )
    ds = Dataset(x=x, y=y, family=multigaussian(2))
    chain = chain_pretrain(ds, [1], fold_seed=4)
    plain = cv_path(
        Dataset(x=x, y=y[:, 1], family=GAUSSIAN),
        penalty=PenaltySpec(),
        folds=make_folds(n, 10, seed=4),
        fold_controls=RELAXED_FOLD_CONTROLS,
    )
    assert chain.n_steps == 1
    assert chain.stage_artifacts == [None]
    assert chain.stage_lambda_choice[0] == plain.lambda_min_index
    assert np.array_equal(chain.stage_fits[0].lambdas, plain.full_fit.lambdas)
    assert np.array_equal(
        chain.stage_fits[0].coefficients, plain.full_fit.coefficients
    )


def test_chain_all_alpha_one_equals_independent_fits():
    x, y = column_data(seed=23, n_cols=3)
    ds = Dataset(x=x, y=y, family=multigaussian(3))
    chain = chain_pretrain(ds, [0, 1, 2], alpha_grid=(1.0,), fold_seed=9, folds=5)
    n = x.shape[0]
    for t in range(3):
        plain = cv_path(
            Dataset(x=x, y=y[:, t], family=GAUSSIAN),
            penalty=PenaltySpec(),
            folds=make_folds(n, 5, seed=9 + t),
            fold_controls=RELAXED_FOLD_CONTROLS,
        )
        assert np.allclose(
            chain.stage_fits[t].coefficients,
            plain.full_fit.coefficients,
            atol=1e-8,
            rtol=0.0,
        )
        assert chain.stage_lambda_choice[t] == plain.lambda_min_index


def test_chain_validation_errors():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((60, 6))
    y = np.column_stack([rng.standard_normal(60), rng.standard_normal(60)])
    ds = Dataset(x=x, y=y, family=multigaussian(2))
    with pytest.raises(InvalidFamily):
        chain_pretrain(ds, [0, 1], families=["gaussian", "binomial"])
    with pytest.raises(InvalidFamily):
        chain_pretrain(ds, [0, 1], families=["gaussian", "poisson"])
    with pytest.raises(InvalidFamily):
        chain_pretrain(Dataset(x=x, y=y[:, 0], family=GAUSSIAN), [0])
    with pytest.raises(ValueError):
        chain_pretrain(ds, [0, 0])
    with pytest.raises(ValueError):
        chain_pretrain(ds, [0, 2])
    with pytest.raises(InvalidFamily):
        chain_pretrain(ds, [0], families=["gaussian"])


def test_chain_binomial_step_end_to_end():
    rng = np.random.default_rng(77)
    n, p = 150, 10
    x = rng.standard_normal((n, p))
    signal = x[:, 0] * 1.5 - x[:, 2] * 1.1
    y0 = signal + rng.normal(scale=0.5, size=n)
    y1 = (signal + rng.normal(scale=0.8, size=n) > 0).astype(np.float64)
    ds = Dataset(x=x, y=np.column_stack([y0, y1]), family=multigaussian(2))
    chain = chain_pretrain(
        ds,
        [0, 1],
        alpha_grid=(0.0, 0.5, 1.0),
        families=["gaussian", "binomial"],
        folds=5,
    )
    assert chain.families[1].kind == "binomial"
    probs = chain_predict(chain, x)
    assert probs.shape == (n, 2)
    assert np.all((probs[:, 1] > 0.0) & (probs[:, 1] < 1.0))
    assert np.mean((probs[:, 1] > 0.5) == y1) > 0.75
    links = chain_predict(chain, x, kind="link")
    art = chain.stage_artifacts[1]
    off, _ = artifact_transfer(art, art.alpha, x)
    manual = chain.stage_fits[1].link(x, chain.stage_lambda_choice[1], offset=off)
    assert np.array_equal(links[:, 1], manual)
