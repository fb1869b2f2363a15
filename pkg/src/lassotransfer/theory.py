"""Support-recovery diagnostics and experiments for the pooled lasso.

When one model is fit to rows pooled from several groups whose coefficient
vectors share a support, three computable quantities decide whether the
pooled fit discards every off-support feature: the classical incoherence of
off-support columns with the support block, the heterogeneity of the
per-group signals after projecting out the support, and the projected
noise.  This module evaluates those quantities on a given design, fits the
pooled estimator to verify the implication empirically, measures how close
the pooled fit lands to the average of the group coefficients, and runs the
sample-size sweeps behind the recovery-rate and two-stage prediction-error
tables.

Conventions used throughout:

- ``x`` is the row-stacked design already scaled by 1/sqrt(n) so column
  norms are O(1).
- ``lam`` refers to the stationarity convention
  ``X_S^T (X_S b - y) + lam * sign(b_S) = 0``.  The pooled estimator at
  this ``lam`` equals the solver's gaussian objective (which carries a
  1/(2m) factor) at ``lam / n`` on the scaled rows.
- ``groups`` is an integer vector of labels 1..K, one per row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import GAUSSIAN, Controls, Dataset, PenaltySpec
from .exceptions import InvalidSpec, SingularSupport
from .solver import fit_path

__all__ = [
    "RecoverySpec",
    "TheoryReport",
    "TwoStageSpec",
    "averaging_distance",
    "check_irrepresentability",
    "recovery_experiment",
    "subgroup_isometry_delta",
    "two_stage_error_experiment",
    "verify_implication",
]

# fits here are raw lasso solves: no intercept, no standardization
_RAW_CONTROLS = Controls(standardize=False, fit_intercept=False,
                         coef_tol=1e-10, kkt_tol=1e-9)
_SUPPORT_EPS = 1e-12

RECOVERY_COLUMNS = ("n", "rep", "screening", "exact", "individual_exact",
                    "delta", "cond1", "cond2", "cond3")
TWO_STAGE_COLUMNS = ("n", "rep", "error", "bound", "stage1_error",
                     "second_stage_l1", "individual_error")


@dataclass
class TheoryReport:
    """Evaluated support-screening quantities for one design draw."""

    cond1: float
    cond2: float
    cond3: float
    lambda_used: float
    delta_isometry: float
    avg_distance: float
    pass_flags: dict[str, bool] = field(default_factory=dict)


def _as_groups(groups, n: int) -> tuple[np.ndarray, int]:
    g = np.asarray(groups, dtype=np.int64)
    if g.shape != (n,):
        raise ValueError("groups must give one integer label per row")
    k = int(g.max()) if g.size else 0
    if g.min() < 1:
        raise ValueError("group labels start at 1")
    return g, k

def _as_betas(beta_stars, p: int) -> np.ndarray:
    b = np.atleast_2d(np.asarray(beta_stars, dtype=np.float64))
    if b.shape[1] != p:
        raise ValueError("each coefficient vector must have one entry per column")
    return b


def _support_gram(x: np.ndarray, support: np.ndarray) -> np.ndarray:
    xs = x[:, support]
    gram = xs.T @ xs
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        raise SingularSupport(
            "the support columns are rank deficient") from None
    return gram


def _project_out(x: np.ndarray, support: np.ndarray, gram: np.ndarray,
                 v: np.ndarray) -> np.ndarray:
    """Residual of v after projecting onto span of the support columns."""
    xs = x[:, support]
    return v - xs @ np.linalg.solve(gram, xs.T @ v)


def _mix_vector(x: np.ndarray, groups: np.ndarray, betas: np.ndarray) -> np.ndarray:
    """Row i maps through its own group's coefficient vector."""
    out = np.empty(x.shape[0])
    for k in range(1, betas.shape[0] + 1):
        rows = groups == k
        out[rows] = x[rows] @ betas[k - 1]
    return out


def _common_sign(betas: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Shared sign pattern on the support; rejects inconsistent inputs."""
    on = betas[:, support]
    if np.any(on == 0.0):
        raise ValueError("every coefficient vector must be nonzero on the support")
    signs = np.sign(on)
    if not np.all(signs == signs[0]):
        raise ValueError("coefficient vectors must share one sign pattern")
    off = np.delete(betas, support, axis=1)
    if np.any(off != 0.0):
        raise ValueError("coefficient vectors must vanish off the support")
    return signs[0]


def _spectral_norm(m: np.ndarray, tol: float = 1e-9,
                   max_iter: int = 10000) -> float:
    """Largest singular value by power iteration on m^T m."""
    d = m.shape[1]
    if d == 0 or not np.any(m):
        return 0.0
    v = np.linspace(1.0, 2.0, d)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        u = m @ v
        new = np.linalg.norm(u)
        if new == 0.0:
            return 0.0
        w = m.T @ u
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return float(new)
        v = w / nw
        if abs(new - sigma) <= tol * max(new, 1e-30):
            return float(new)
        sigma = new
    return float(sigma)


def subgroup_isometry_delta(x, support, groups) -> float:
    """Worst-group spectral gap between the group and pooled support Grams.

    Returns max_k || (X_S^T X_S)^{-1} (X_S^T D_k X_S) - I/K ||_2.  Exactly
    zero when every group holds an identical copy of the support block.
    """
    x = np.asarray(x, dtype=np.float64)
    support = np.asarray(support, dtype=np.int64)
    groups, k = _as_groups(groups, x.shape[0])
    gram = _support_gram(x, support)
    xs = x[:, support]
    blocks = [xs[groups == g] for g in range(1, k + 1)]
    if all(b.shape == blocks[0].shape and np.array_equal(b, blocks[0])
           for b in blocks[1:]):
        return 0.0
    eye = np.eye(support.size) / k
    worst = 0.0
    for b in blocks:
        m = np.linalg.solve(gram, b.T @ b)
        worst = max(worst, _spectral_norm(m - eye))
    return worst


def _pooled_fit(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    n = x.shape[0]
    ds = Dataset(x=x, y=y, family=GAUSSIAN)
    pen = PenaltySpec(lambda_sequence=np.array([max(lam, 1e-300) / n]))
    return fit_path(ds, pen, _RAW_CONTROLS).coefficients[0]


def averaging_distance(beta_pre, beta_stars, x, support, lam) -> float:
    """How far the pooled fit sits from the shrunken group average.

    Returns || (beta_pre)_S - avg_S + lam * (X_S^T X_S)^{-1} sign ||_2,
    the quantity bounded by delta * sum_k ||beta_k||_2 plus the projected
    noise norm.
    """
    x = np.asarray(x, dtype=np.float64)
    support = np.asarray(support, dtype=np.int64)
    beta_pre = np.asarray(beta_pre, dtype=np.float64)
    betas = _as_betas(beta_stars, x.shape[1])
    gram = _support_gram(x, support)
    sign = _common_sign(betas, support)
    avg = betas.mean(axis=0)[support]
    shrink = lam * np.linalg.solve(gram, sign)
    return float(np.linalg.norm(beta_pre[support] - avg + shrink))


def _conditions(x, groups, support, sign, mix, noise):
    """The three screening statistics for given sign/mix/noise vectors."""
    p = x.shape[1]
    off = np.setdiff1d(np.arange(p), support)
    gram = _support_gram(x, support)
    xs = x[:, support]
    xoff = x[:, off]
    if off.size == 0:
        return 0.0, 0.0, 0.0
    cond1 = float(np.max(np.abs(xoff.T @ (xs @ np.linalg.solve(gram, sign)))))
    k = int(groups.max())
    if k == 1:
        cond2 = 0.0       # the projection annihilates a single group's signal
    else:
        cond2 = float(np.max(np.abs(xoff.T @ _project_out(x, support, gram, mix))))
    if noise is None or not np.any(noise):
        cond3 = 0.0
    else:
        cond3 = float(np.max(np.abs(xoff.T @ _project_out(x, support, gram, noise))))
    return cond1, cond2, cond3


def check_irrepresentability(x, groups, beta_stars, support, lam,
                             noise=None) -> TheoryReport:
    """Evaluate the screening conditions and the pooled fit's distance.

    The coefficient vectors must vanish off ``support`` and share one sign
    pattern on it.  Thresholds: cond1 < 1/2, cond2 <= lam/4, cond3 <= lam/4.
    cond3 is also comparable against lam itself (the weaker reading); both
    the strict flags and the raw values are reported.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    support = np.asarray(support, dtype=np.int64)
    groups, _ = _as_groups(groups, n)
    betas = _as_betas(beta_stars, p)
    sign = _common_sign(betas, support)
    mix = _mix_vector(x, groups, betas)
    noise_vec = None if noise is None else np.asarray(noise, dtype=np.float64)
    cond1, cond2, cond3 = _conditions(x, groups, support, sign, mix, noise_vec)

    y = mix if noise_vec is None else mix + noise_vec
    beta_pre = _pooled_fit(x, y, lam)
    return TheoryReport(
        cond1=cond1,
        cond2=cond2,
        cond3=cond3,
        lambda_used=float(lam),
        delta_isometry=subgroup_isometry_delta(x, support, groups),
        avg_distance=averaging_distance(beta_pre, betas, x, support, lam),
        pass_flags={
            "cond1": cond1 < 0.5,
            "cond2": cond2 <= lam / 4.0,
            "cond3": cond3 <= lam / 4.0,
        },
    )


def verify_implication(x, groups, beta_stars, support, lam,
                       noise=None) -> bool:
    """Fit the pooled estimator and report whether its support stays inside.

    The response is assembled from the per-group coefficient vectors plus
    the optional noise; True means every off-support coefficient is zero.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    support = np.asarray(support, dtype=np.int64)
    groups, _ = _as_groups(groups, n)
    betas = _as_betas(beta_stars, p)
    y = _mix_vector(x, groups, betas)
    if noise is not None:
        y = y + np.asarray(noise, dtype=np.float64)
    beta = _pooled_fit(x, y, lam)
    off = np.setdiff1d(np.arange(p), support)
    return bool(np.all(np.abs(beta[off]) <= _SUPPORT_EPS))


# ---------------------------------------------------------------------------
# Recovery-rate experiment


@dataclass
class RecoverySpec:
    """Layout for the support-recovery sweep.

    ``model`` is "shared" (every group uses the same support) or
    "common_individual" (a common support plus small disjoint per-group
    supports that the pooled fit should discard).  ``lambda_scale`` is the
    empirical constant c in lam = c * sigma * sqrt(log(p - s) / n).
    """

    n_grid: tuple
    p: int
    s: int
    k_groups: int
    gamma: float = 1.0
    sigma: float = 1.0
    model: str = "shared"
    reps: int = 20
    seed: int = 0
    lambda_scale: float = 2.0
    s_indiv: int = 2
    opposing: bool = False     # K=2 with the second group's signs flipped


def _validate_recovery(spec: RecoverySpec) -> None:
    if spec.model not in ("shared", "common_individual"):
        raise InvalidSpec(f"unknown model {spec.model!r}")
    if spec.s < 1 or spec.p <= spec.s:
        raise InvalidSpec("need 1 <= s < p")
    if spec.k_groups < 1 or spec.reps < 1:
        raise InvalidSpec("need at least one group and one rep")
    for n in spec.n_grid:
        if n % spec.k_groups != 0:
            raise InvalidSpec("each n must split evenly across the groups")
        if n // spec.k_groups < spec.s:
            raise InvalidSpec("each group needs at least s rows")
    if spec.model == "common_individual":
        if spec.s + spec.k_groups * spec.s_indiv > spec.p:
            raise InvalidSpec("common plus individual supports exceed p")
    if spec.opposing and (spec.k_groups != 2 or spec.model != "shared"):
        raise InvalidSpec("opposing signs need the shared model with K=2")


def _draw_recovery_instance(spec: RecoverySpec, n: int, rep: int, lam: float):
    """One seeded draw: scaled design, group labels, truths, noise."""
    rng = np.random.default_rng([spec.seed, n, rep])
    p, s, k = spec.p, spec.s, spec.k_groups
    x = rng.normal(size=(n, p)) / math.sqrt(n)
    groups = np.repeat(np.arange(1, k + 1), n // k)
    sign = rng.choice([-1.0, 1.0], size=s)
    betas = np.zeros((k, p))
    if spec.model == "shared":
        mags = spec.gamma * rng.uniform(0.6, 1.0, size=(k, s))
        betas[:, :s] = sign * mags
        if spec.opposing:
            betas[1] = -betas[0]
    else:
        common = sign * spec.gamma * rng.uniform(0.6, 1.0, size=s)
        betas[:, :s] = common
        gamma2 = lam / 8.0              # keep individual parts under lam/4
        for g in range(k):
            lo = s + g * spec.s_indiv
            idx = np.arange(lo, lo + spec.s_indiv)
            betas[g, idx] = rng.choice([-1.0, 1.0], size=spec.s_indiv) * gamma2
    noise = rng.normal(scale=spec.sigma, size=n) / math.sqrt(n)
    return x, groups, betas, noise


def _support_of(beta: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.abs(beta) > _SUPPORT_EPS)


def recovery_experiment(spec: RecoverySpec) -> list[dict]:
    """Recovery rates of the pooled fit across the sample-size grid.

    Per (n, rep) row: screening (pooled support inside the common support),
    exact (equal to it), the fraction of groups whose own lasso at n/K rows
    recovers its own true support, the isometry gap, and the three
    screening statistics.  Same spec and seed give an identical table.
    """
    _validate_recovery(spec)
    s = spec.s
    common = np.arange(s)
    rows = []
    for n in spec.n_grid:
        lam = spec.lambda_scale * spec.sigma * math.sqrt(
            math.log(spec.p - s) / n)
        m = n // spec.k_groups
        lam_ind = spec.lambda_scale * spec.sigma * math.sqrt(
            math.log(spec.p - s) / m)
        for rep in range(spec.reps):
            x, groups, betas, noise = _draw_recovery_instance(spec, n, rep, lam)
            mix = _mix_vector(x, groups, betas)
            beta_hat = _pooled_fit(x, mix + noise, lam)
            got = _support_of(beta_hat)
            screening = bool(np.all(np.isin(got, common)))
            exact = bool(got.size == s and screening)

            n_exact = 0
            for g in range(1, spec.k_groups + 1):
                rows_g = groups == g
                xg = x[rows_g] * math.sqrt(n / m)   # rescale to 1/sqrt(m)
                yg = (mix + noise)[rows_g] * math.sqrt(n / m)
                bg = _pooled_fit(xg, yg, lam_ind)
                truth_g = _support_of(betas[g - 1])
                n_exact += np.array_equal(_support_of(bg), truth_g)

            sign = np.sign(betas[0, :s])
            cond1, cond2, cond3 = _conditions(
                x, groups, common, sign, mix, noise)
            rows.append({
                "n": int(n),
                "rep": int(rep),
                "screening": int(screening),
                "exact": int(exact),
                "individual_exact": n_exact / spec.k_groups,
                "delta": subgroup_isometry_delta(x, common, groups),
                "cond1": cond1,
                "cond2": cond2,
                "cond3": cond3,
            })
    return rows


# ---------------------------------------------------------------------------
# Two-stage prediction-error experiment


@dataclass
class TwoStageSpec:
    """Layout for the pooled-then-refit prediction-error table.

    The response is y_k = X_k (b0 + b_k) + eps_k with a common s-sparse b0
    (entries +-gamma_common) and disjoint per-group supports of size
    s_indiv (entries +-gamma_indiv).  ``lambda2_scale`` multiplies the
    second-stage penalty's minimal value (set it huge to freeze stage two).
    """

    n: int
    p: int
    s: int
    k_groups: int
    gamma_common: float = 1.0
    gamma_indiv: float = 0.1
    sigma: float = 1.0
    s_indiv: int = 2
    reps: int = 50
    seed: int = 0
    lambda2_scale: float = 1.0


def _validate_two_stage(spec: TwoStageSpec) -> None:
    if spec.s < 1 or spec.p <= spec.s:
        raise InvalidSpec("need 1 <= s < p")
    if spec.k_groups < 1 or spec.reps < 1:
        raise InvalidSpec("need at least one group and one rep")
    if spec.n % spec.k_groups != 0:
        raise InvalidSpec("n must split evenly across the groups")
    if spec.n // spec.k_groups < spec.s:
        raise InvalidSpec("each group needs at least s rows")
    if spec.s + spec.k_groups * spec.s_indiv > spec.p:
        raise InvalidSpec("common plus individual supports exceed p")


def _lasso_plain(x, y, lam_obj, offset=None):
    """argmin ||offset + x b - y||^2 + lam_obj * ||b||_1 via the solver."""
    m = x.shape[0]
    ds = Dataset(x=x, y=y, family=GAUSSIAN, fixed_offset=offset)
    pen = PenaltySpec(lambda_sequence=np.array([max(lam_obj, 1e-300) / (2 * m)]))
    return fit_path(ds, pen, _RAW_CONTROLS).coefficients[0]


def two_stage_error_experiment(spec: TwoStageSpec) -> list[dict]:
    """In-sample error of pooled-fit-then-per-group-refit, with its bound.

    Records the realized (1/n) sum_k ||X_k(b0_hat - b0 + bk_hat - bk)||^2,
    the deterministic bound evaluated at the minimal penalty levels, the
    error with stage two frozen at zero, the second stage's total l1 mass,
    and the error of per-group-only lasso fits.
    """
    _validate_two_stage(spec)
    n, p, k = spec.n, spec.p, spec.k_groups
    m = n // k
    rows = []
    for rep in range(spec.reps):
        rng = np.random.default_rng([spec.seed, rep])
        x = rng.normal(size=(n, p))
        b0 = np.zeros(p)
        b0[:spec.s] = rng.choice([-1.0, 1.0], size=spec.s) * spec.gamma_common
        b_ind = np.zeros((k, p))
        for g in range(k):
            lo = spec.s + g * spec.s_indiv
            b_ind[g, lo:lo + spec.s_indiv] = (
                rng.choice([-1.0, 1.0], size=spec.s_indiv) * spec.gamma_indiv)
        groups = np.repeat(np.arange(1, k + 1), m)
        eps = rng.normal(scale=spec.sigma, size=n)
        y = x @ b0 + _mix_vector(x, groups, b_ind) + eps

        c_mag = float(np.max(np.mean(x ** 2, axis=0)))
        c_corr = 0.0
        for g in range(1, k + 1):
            xg = x[groups == g]
            c_corr = max(c_corr, float(np.max(np.abs(xg.T @ xg))) / m)
        r0 = float(np.sum(np.abs(b0)))
        r_ind = float(np.sum(np.abs(b_ind)))

        lam1 = 4.0 * spec.sigma * math.sqrt(c_mag * n * math.log(p)) \
            + 2.0 * c_corr * (n / k) * r_ind
        lam2 = 4.0 * spec.sigma * math.sqrt(n / k) * math.sqrt(
            math.log(p * k)) * spec.lambda2_scale

        b0_hat = _lasso_plain(x, y, lam1)
        err1 = 0.0
        err = 0.0
        l1_second = 0.0
        err_ind = 0.0
        for g in range(1, k + 1):
            sel = groups == g
            xg, yg = x[sel], y[sel]
            offset = xg @ b0_hat
            bg_hat = _lasso_plain(xg, yg, lam2, offset=offset)
            l1_second += float(np.sum(np.abs(bg_hat)))
            truth = b0 + b_ind[g - 1]
            err += float(np.sum((xg @ (b0_hat + bg_hat - truth)) ** 2))
            err1 += float(np.sum((xg @ (b0_hat - truth)) ** 2))
            bg_solo = _lasso_plain(xg, yg, lam2)
            err_ind += float(np.sum((xg @ (bg_solo - truth)) ** 2))

        bound = (lam1 * r0 + lam2 * r_ind) / n \
            + spec.sigma * (c_mag * r0 * math.sqrt(math.log(p))
                            + r_ind * math.sqrt(math.log(p * k) / k)) \
            / math.sqrt(n) \
            + c_corr * r_ind / k
        rows.append({
            "n": int(n),
            "rep": int(rep),
            "error": err / n,
            "bound": bound,
            "stage1_error": err1 / n,
            "second_stage_l1": l1_second,
            "individual_error": err_ind / n,
        })
    return rows
