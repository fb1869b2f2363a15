"""Penalized GLM path solver.

Fits the objective

    (1/2n) * deviance(y, eta) + lambda * sum_j pf_j * |beta_j|

over a decreasing lambda sequence by cyclic coordinate descent with working
sets, warm starts, and (for binomial/multinomial) an outer quadratic
approximation loop. ``fit_grouped_path`` swaps the elementwise L1 penalty for
a row-wise L2 norm across the K outputs (multi-response Gaussian and grouped
multinomial).

Design notes, fixed for the whole package:
  * features are standardized internally to mean 0 / population variance 1;
    constant columns get scale 1 and are forced inactive; results are
    reported on the original scale;
  * finite penalty factors are rescaled to mean exactly 1 (infinite factors
    excluded first, their features dropped from every computation);
  * the automatic path is 100 log-spaced values from lambda_max down to
    lambda_max * r with r = 0.01 when p > n else 1e-4;
  * fitted probabilities are clamped to [clamp, 1 - clamp] (default 1e-5);
  * every returned solution satisfies the KKT conditions to ``kkt_tol``
    unless its convergence flag says otherwise;
  * fits are deterministic: same inputs, bit-identical outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._cd import solve_grouped, solve_grouped_weighted, solve_weighted
from .data import Controls, Dataset, Family, PenaltySpec, DEFAULT_CONTROLS
from .exceptions import InvalidFamily, NoPenalizableFeatures

_GROW_EPS = 0.3  # working set admits violations above this fraction of kkt_tol


def soft_threshold(z, t):
    """Elementwise soft threshold sign(z) * max(|z| - t, 0); t = 0 is identity."""
    z = np.asarray(z, dtype=np.float64)
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


# ---------------------------------------------------------------------------
# fitted-path container
# ---------------------------------------------------------------------------


@dataclass
class PathFit:
    """Solution path on the original feature scale.

    ``coefficients`` is (L, p) for single-output families and (L, p, K) for
    multinomial/multigaussian; ``intercepts`` is (L,) or (L, K) to match.
    ``effective_penalty_factors`` are the rescaled factors actually used
    (+inf marks excluded or constant features).
    """

    family: Family
    lambdas: np.ndarray
    intercepts: np.ndarray
    coefficients: np.ndarray
    dev_ratio: np.ndarray
    null_deviance: float
    converged: np.ndarray
    effective_penalty_factors: np.ndarray
    feature_means: np.ndarray
    feature_scales: np.ndarray
    grouped: bool = False
    feature_names: list[str] | None = None

    @property
    def n_lambdas(self) -> int:
        return self.lambdas.shape[0]

    @property
    def n_features(self) -> int:
        return self.coefficients.shape[1]

    def support(self, lambda_index: int) -> np.ndarray:
        """Indices with any nonzero coefficient (across outputs) at one lambda."""
        b = self.coefficients[lambda_index]
        nz = b != 0.0 if b.ndim == 1 else np.any(b != 0.0, axis=1)
        return np.flatnonzero(nz)

    @property
    def support_sets(self) -> list[np.ndarray]:
        return [self.support(l) for l in range(self.n_lambdas)]

    def link(self, x, lambda_index: int, offset=None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        eta = x @ self.coefficients[lambda_index] + self.intercepts[lambda_index]
        if offset is not None:
            eta = eta + np.asarray(offset, dtype=np.float64)
        return eta

    def predict(self, x, lambda_index: int, kind: str = "response", offset=None):
        """Predict at one lambda. ``kind``: 'link', 'response' (probabilities
        for binomial/multinomial), or 'class' (argmax; ties -> lowest index;
        binomial classes are 0/1, multinomial labels are 1..K)."""
        eta = self.link(x, lambda_index, offset)
        kind_ = kind.lower()
        fam = self.family.kind
        if kind_ == "link":
            return eta
        if kind_ == "response":
            if fam == "binomial":
                return _sigmoid(eta)
            if fam == "multinomial":
                return _softmax(eta)
            return eta
        if kind_ == "class":
            if fam == "binomial":
                return (_sigmoid(eta) > 0.5).astype(np.int64)
            if fam == "multinomial":
                return np.argmax(eta, axis=1).astype(np.int64) + 1
            raise InvalidFamily(f"class prediction undefined for {fam}")
        raise ValueError(f"unknown prediction kind {kind!r}")

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        pf = [None if np.isinf(v) else float(v) for v in self.effective_penalty_factors]
        return {
            "schema_version": 1,
            "family": self.family.kind,
            "n_outputs": self.family.n_outputs,
            "grouped": self.grouped,
            "lambda": self.lambdas.tolist(),
            "intercept": self.intercepts.tolist(),
            "beta": self.coefficients.tolist(),
            "support": [s.tolist() for s in self.support_sets],
            "dev_ratio": self.dev_ratio.tolist(),
            "null_deviance": float(self.null_deviance),
            "converged": [bool(c) for c in self.converged],
            "penalty_factors": pf,
            "feature_means": self.feature_means.tolist(),
            "feature_scales": self.feature_scales.tolist(),
            "feature_names": self.feature_names,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PathFit":
        fam = Family(d["family"], d.get("n_outputs", 1))
        pf = np.array(
            [np.inf if v is None else float(v) for v in d["penalty_factors"]]
        )
        return cls(
            family=fam,
            lambdas=np.asarray(d["lambda"], dtype=np.float64),
            intercepts=np.asarray(d["intercept"], dtype=np.float64),
            coefficients=np.asarray(d["beta"], dtype=np.float64),
            dev_ratio=np.asarray(d["dev_ratio"], dtype=np.float64),
            null_deviance=float(d["null_deviance"]),
            converged=np.asarray(d["converged"], dtype=bool),
            effective_penalty_factors=pf,
            feature_means=np.asarray(d["feature_means"], dtype=np.float64),
            feature_scales=np.asarray(d["feature_scales"], dtype=np.float64),
            grouped=bool(d.get("grouped", False)),
            feature_names=d.get("feature_names"),
        )

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_json(cls, s: str) -> "PathFit":
        return cls.from_json_dict(json.loads(s))


# ---------------------------------------------------------------------------
# link helpers
# ---------------------------------------------------------------------------


def _sigmoid(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softmax(eta):
    m = eta.max(axis=1, keepdims=True)
    e = np.exp(eta - m)
    return e / e.sum(axis=1, keepdims=True)


def _clamp(p, c):
    return np.clip(p, c, 1.0 - c)


def binomial_deviance(y, prob, clamp=1e-5):
    p = _clamp(prob, clamp)
    return -2.0 * float(np.sum(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def multinomial_deviance(y_onehot, prob, clamp=1e-5):
    p = _clamp(prob, clamp)
    return -2.0 * float(np.sum(y_onehot * np.log(p)))


def one_hot(labels, k):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels - 1] = 1.0
    return out


# ---------------------------------------------------------------------------
# shared preparation
# ---------------------------------------------------------------------------


@dataclass
class _Prepared:
    xs: np.ndarray            # standardized design, Fortran order
    x2: np.ndarray            # elementwise squares of xs
    means: np.ndarray
    scales: np.ndarray
    eff_pf: np.ndarray        # rescaled factors, inf = excluded
    penalizable: np.ndarray   # 0 < pf < inf
    zero_pf: np.ndarray       # pf == 0 (always unpenalized)
    offset: np.ndarray        # (n,) or (n,K) of zeros when absent
    controls: Controls
    degenerate: bool = False  # no usable feature at all: intercept-only fit
    xv: np.ndarray = field(init=False)

    def __post_init__(self):
        self.xv = self.x2.mean(axis=0)

    def lpf(self, lam: float) -> np.ndarray:
        out = np.full(self.eff_pf.shape[0], np.inf)
        fin = ~np.isinf(self.eff_pf)
        with np.errstate(over="ignore"):
            out[fin] = lam * self.eff_pf[fin]
        return out


def _prepare(dataset: Dataset, penalty: PenaltySpec, controls: Controls) -> _Prepared:
    x = dataset.x
    n, p = x.shape
    pf = penalty.resolve_factors(p)
    if np.all(np.isinf(pf)):
        raise NoPenalizableFeatures("every penalty factor is infinite")

    if controls.standardize:
        means = x.mean(axis=0) if controls.fit_intercept else np.zeros(p)
        var = ((x - means) ** 2).mean(axis=0)
        sd = np.sqrt(var)
        const = sd <= 1e-12 * (1.0 + np.abs(means))
        scales = np.where(const, 1.0, sd)
    else:
        means = np.zeros(p)
        var = (x * x).mean(axis=0)
        const = ((x - x.mean(axis=0)) ** 2).mean(axis=0) <= 1e-24 * (1.0 + var)
        scales = np.ones(p)

    xs = np.asfortranarray((x - means) / scales)
    eff_pf = pf.copy()
    eff_pf[const] = np.inf
    fin = ~np.isinf(eff_pf)
    degenerate = not fin.any()
    if fin.any():
        m = eff_pf[fin].mean()
        if m > 0:
            eff_pf[fin] = eff_pf[fin] / m

    if dataset.fixed_offset is not None:
        offset = dataset.fixed_offset
    elif dataset.family.is_multioutput:
        offset = np.zeros((n, dataset.family.n_outputs))
    else:
        offset = np.zeros(n)

    return _Prepared(
        xs=xs,
        x2=np.asfortranarray(xs * xs),
        means=means,
        scales=scales,
        eff_pf=eff_pf,
        penalizable=fin & (eff_pf > 0),
        zero_pf=fin & (eff_pf == 0),
        offset=offset,
        controls=controls,
        degenerate=degenerate,
    )


def _to_original(pp: _Prepared, beta_std: np.ndarray, mu_std) -> tuple:
    """Map standardized-scale solution back to the original scale."""
    if beta_std.ndim == 1:
        b = beta_std / pp.scales
        return b, float(mu_std) - float(b @ pp.means)
    b = beta_std / pp.scales[:, None]
    return b, np.asarray(mu_std, dtype=np.float64) - pp.means @ b


def _auto_lambdas(lmax: float, n: int, p: int, penalty: PenaltySpec) -> np.ndarray:
    if lmax <= 0.0:
        return np.array([0.0])
    ratio = penalty.lambda_min_ratio
    if ratio is None:
        ratio = 0.01 if p > n else 1e-4
    count = penalty.lambda_count
    if count == 1:
        return np.array([lmax])
    return np.geomspace(lmax, lmax * ratio, count)


# ---------------------------------------------------------------------------
# null fits (intercept + fixed offset only)
# ---------------------------------------------------------------------------


def _null_gaussian(y, off, fit_intercept):
    mu = float(np.mean(y - off)) if fit_intercept else 0.0
    dev = float(np.sum((y - off - mu) ** 2))
    return mu, dev


def _null_binomial(y, off, fit_intercept, clamp):
    mu = 0.0
    if fit_intercept:
        for _ in range(100):
            p = _sigmoid(mu + off)
            g = float(np.sum(p - y))
            pc = _clamp(p, clamp)
            h = float(np.sum(pc * (1.0 - pc)))
            step = g / h
            mu -= step
            if abs(step) < 1e-12:
                break
    prob = _sigmoid(mu + off)
    return mu, binomial_deviance(y, prob, clamp)


def _null_multinomial(yh, off, fit_intercept, clamp):
    k = yh.shape[1]
    mu = np.zeros(k)
    if fit_intercept:
        for _ in range(200):
            p = _softmax(mu + off)
            g = (p - yh).sum(axis=0)
            h = (p * (1.0 - p)).sum(axis=0)
            step = g / np.maximum(h, 1e-12)
            mu -= step
            mu -= mu.mean()
            if np.max(np.abs(step)) < 1e-12:
                break
    prob = _softmax(mu + off)
    return mu, multinomial_deviance(yh, prob, clamp)


def _null_multigaussian(y, off, fit_intercept):
    mu = (y - off).mean(axis=0) if fit_intercept else np.zeros(y.shape[1])
    dev = float(np.sum((y - off - mu) ** 2))
    return mu, dev


# ---------------------------------------------------------------------------
# KKT measurement (standardized scale)
# ---------------------------------------------------------------------------


def _kkt_single(gt, beta, lpf, penalizable, zero_pf):
    """gt = (1/n) Xs^T dLoss/deta. Returns max violation over usable features."""
    usable = penalizable | zero_pf
    if not usable.any():
        return 0.0
    viol = np.zeros(gt.shape[0])
    active = usable & (beta != 0.0)
    inactive = usable & ~active
    viol[active] = np.abs(gt[active] + lpf[active] * np.sign(beta[active]))
    viol[inactive] = np.maximum(np.abs(gt[inactive]) - lpf[inactive], 0.0)
    return float(viol.max())


def _kkt_grouped(gt, b, lpf, penalizable, zero_pf):
    """Row-norm KKT: gt and b are (p, K)."""
    usable = penalizable | zero_pf
    if not usable.any():
        return 0.0
    rn = np.linalg.norm(b, axis=1)
    viol = np.zeros(gt.shape[0])
    active = usable & (rn > 0.0)
    inactive = usable & ~active
    if active.any():
        unit = b[active] / rn[active, None]
        viol[active] = np.linalg.norm(gt[active] + lpf[active, None] * unit, axis=1)
    if inactive.any():
        viol[inactive] = np.maximum(
            np.linalg.norm(gt[inactive], axis=1) - lpf[inactive], 0.0
        )
    return float(viol.max())


# ---------------------------------------------------------------------------
# per-family path drivers
# ---------------------------------------------------------------------------

_AA_CHUNK = 8  # sweeps between extrapolation attempts
_AA_KEEP = 6  # iterates retained for extrapolation
_POLISH_AFTER = 4  # stalled outer iterations before Newton polish kicks in
_POLISH_MAX_DIM = 600  # largest reduced system the polish will factor


def _extrapolate(hist):
    """Anderson-style combination of a saturated iterate history.

    Returns the candidate state, or None when the small least-squares system
    is degenerate. Callers must gate acceptance on an objective decrease.
    """
    A = np.stack(hist, axis=1)
    U = A[:, 1:] - A[:, :-1]
    G = U.T @ U
    G.flat[:: G.shape[0] + 1] += 1e-12 * max(float(np.trace(G)), 1e-30)
    try:
        cvec = np.linalg.solve(G, np.ones(G.shape[0]))
    except np.linalg.LinAlgError:
        return None
    tot = cvec.sum()
    if tot == 0.0 or not np.isfinite(tot):
        return None
    return A[:, 1:] @ (cvec / tot)


def _accel_solve(xs, w, r, xv, beta, lpf, ws, mu, fit_intercept, tol, left):
    """Penalized weighted least squares with extrapolation.

    Runs the coordinate kernel in short chunks and, between chunks, tries an
    Anderson-style combination of recent iterates. The candidate is accepted
    only when it lowers the penalized objective, so plain coordinate descent
    behaviour is the worst case. ``beta``, ``mu`` and ``r`` are updated in
    place; returns the number of sweeps consumed.
    """
    n = xs.shape[0]
    used = 0
    if ws.size == 0 or left <= _AA_CHUNK:
        return solve_weighted(xs, w, r, xv, beta, lpf, ws, mu, fit_intercept, tol, left)
    lws = lpf[ws]
    finite = np.isfinite(lws)
    hist: list[np.ndarray] = []
    while left - used > 0:
        chunk = min(_AA_CHUNK, left - used)
        took = solve_weighted(xs, w, r, xv, beta, lpf, ws, mu, fit_intercept, tol, chunk)
        used += took
        if took < chunk:
            break
        hist.append(np.concatenate((beta[ws], mu)))
        if len(hist) < _AA_KEEP:
            continue
        cand = _extrapolate(hist)
        hist.clear()
        if cand is None:
            continue
        cb = cand[: ws.size]
        cb[~finite] = 0.0
        cmu = cand[ws.size :]
        rc = r - xs[:, ws] @ (cb - beta[ws]) - (cmu[0] - mu[0])
        obj_cur = 0.5 / n * float(w @ (r * r)) + float(lws[finite] @ np.abs(beta[ws][finite]))
        obj_cand = 0.5 / n * float(w @ (rc * rc)) + float(lws[finite] @ np.abs(cb[finite]))
        if np.isfinite(obj_cand) and obj_cand < obj_cur:
            beta[ws] = cb
            mu[0] = cmu[0]
            r[:] = rc
    return used


def _newton_accept(obj0, g0, obj1, g1):
    """Accept a polish candidate on strict objective decrease, or on gradient
    decrease when the objective change is below evaluation rounding."""
    tiny = 1e-12 * (1.0 + abs(obj0))
    return obj1 < obj0 - tiny or (obj1 < obj0 + tiny and g1 < g0)


def _polish_binomial(pp: _Prepared, y, beta, mu, lpf):
    """One damped Newton step on the active set with the exact (unclamped)
    curvature. Saturated fits make the IRLS majorizer arbitrarily loose, so
    the tail of the path can crawl; the reduced second-order step restores
    fast local convergence. Returns True when the state was improved."""
    ct = pp.controls
    n = pp.xs.shape[0]
    act = ((beta != 0.0) | pp.zero_pf) & np.isfinite(lpf)
    idx = np.flatnonzero(act)
    ic = 1 if ct.fit_intercept else 0
    m = idx.size + ic
    if m == 0 or m > _POLISH_MAX_DIM:
        return False
    xa = pp.xs[:, idx]
    A = np.hstack((xa, np.ones((n, 1)))) if ic else xa
    la = lpf[idx]

    def evaluate(b, m0):
        eta = m0 + xa @ b + pp.offset
        prob = _sigmoid(eta)
        obj = binomial_deviance(y, prob, ct.prob_clamp) / (2.0 * n) + float(la @ np.abs(b))
        g = A.T @ (prob - y) / n
        g[: idx.size] += la * np.sign(b)
        return obj, g, prob

    b0, m0 = beta[idx].copy(), float(mu[0])
    obj0, g0, prob = evaluate(b0, m0)
    w = prob * (1.0 - prob)
    H = (A * w[:, None]).T @ A / n
    H.flat[:: m + 1] += 1e-10 * (np.trace(H) / m + 1.0)
    try:
        step = np.linalg.solve(H, g0)
    except np.linalg.LinAlgError:
        return False
    g0n = float(np.max(np.abs(g0)))
    s = 1.0
    for _ in range(12):
        b1 = b0 - s * step[: idx.size]
        m1 = m0 - s * step[idx.size] if ic else m0
        obj1, g1, _ = evaluate(b1, m1)
        if np.isfinite(obj1) and _newton_accept(obj0, g0n, obj1, float(np.max(np.abs(g1)))):
            beta[idx] = b1
            mu[0] = m1
            return True
        s *= 0.5
    return False


def _polish_multinomial(pp: _Prepared, yh, beta_t, mu, lpf, fin):
    """Reduced Newton step for the elementwise-L1 multinomial tail; variables
    are the nonzero (class, feature) entries plus intercepts."""
    ct = pp.controls
    n, p = pp.xs.shape
    k = yh.shape[1]
    mask = ((beta_t != 0.0) | pp.zero_pf[None, :]) & fin[None, :]
    cls, feat = np.nonzero(mask)
    ic = k if ct.fit_intercept else 0
    m = cls.size + ic
    if cls.size == 0 or m > _POLISH_MAX_DIM:
        return False
    A = np.empty((n, m))
    A[:, : cls.size] = pp.xs[:, feat]
    cls_all = np.concatenate((cls, np.arange(k))) if ic else cls
    if ic:
        A[:, cls.size :] = 1.0
    la = lpf[feat]

    def evaluate(bt, m0):
        eta = m0 + pp.xs @ bt.T + pp.offset
        prob = _softmax(eta)
        obj = multinomial_deviance(yh, prob, ct.prob_clamp) / (2.0 * n) + float(
            lpf[fin] @ np.abs(bt[:, fin]).sum(axis=0)
        )
        r = (prob - yh) / n
        g = np.einsum("ij,ij->j", A, r[:, cls_all])
        g[: cls.size] += la * np.sign(bt[cls, feat])
        return obj, g, prob

    obj0, g0, prob = evaluate(beta_t, mu)
    H = -(A * prob[:, cls_all]).T @ (A * prob[:, cls_all]) / n
    for c in range(k):
        id_c = np.flatnonzero(cls_all == c)
        Xc = A[:, id_c]
        H[np.ix_(id_c, id_c)] += (Xc * prob[:, c : c + 1]).T @ Xc / n
    H.flat[:: m + 1] += 1e-10 * (np.trace(H) / m + 1.0)
    try:
        step = np.linalg.solve(H, g0)
    except np.linalg.LinAlgError:
        return False
    g0n = float(np.max(np.abs(g0)))
    s = 1.0
    for _ in range(12):
        b1 = beta_t.copy()
        b1[cls, feat] -= s * step[: cls.size]
        m1 = mu - s * step[cls.size :] if ic else mu
        obj1, g1, _ = evaluate(b1, m1)
        if np.isfinite(obj1) and _newton_accept(obj0, g0n, obj1, float(np.max(np.abs(g1)))):
            beta_t[:] = b1
            mu[:] = m1
            return True
        s *= 0.5
    return False


def _polish_grouped_multinomial(pp: _Prepared, yh, beta, mu, lpf, fin):
    """Reduced Newton step for the row-sparse multinomial tail; variables are
    the active coefficient rows (all K entries) plus intercepts, with the
    row-norm penalty's curvature included."""
    ct = pp.controls
    n, p = pp.xs.shape
    k = yh.shape[1]
    rn = np.linalg.norm(beta, axis=1)
    act = ((rn > 0.0) | pp.zero_pf) & fin
    ridx = np.flatnonzero(act)
    ic = 1 if ct.fit_intercept else 0
    q1 = ridx.size + ic
    m = q1 * k
    if ridx.size == 0 or m > _POLISH_MAX_DIM:
        return False
    A = np.hstack((pp.xs[:, ridx], np.ones((n, 1)))) if ic else pp.xs[:, ridx]
    la = lpf[ridx]

    def evaluate(rows, m0):
        eta = m0 + A[:, : ridx.size] @ rows + pp.offset
        prob = _softmax(eta)
        pen = float(lpf[fin] @ _rownorm_with(beta, ridx, rows, fin))
        obj = multinomial_deviance(yh, prob, ct.prob_clamp) / (2.0 * n) + pen
        g = A.T @ (prob - yh) / n
        nr = np.linalg.norm(rows, axis=1)
        pos = nr > 0.0
        g[: ridx.size][pos] += la[pos, None] * rows[pos] / nr[pos, None]
        return obj, g, prob, nr

    rows0 = beta[ridx].copy()
    obj0, g0, prob, nr0 = evaluate(rows0, mu)
    T = (A[:, :, None] * prob[:, None, :]).reshape(n, m)
    H = -(T.T @ T) / n
    H4 = H.reshape(q1, k, q1, k)
    for c in range(k):
        H4[:, c, :, c] += (A * prob[:, c : c + 1]).T @ A / n
    for a in range(ridx.size):
        if nr0[a] > 0.0 and la[a] > 0.0:
            u = rows0[a] / nr0[a]
            H4[a, :, a, :] += la[a] / nr0[a] * (np.eye(k) - np.outer(u, u))
    H.flat[:: m + 1] += 1e-10 * (np.trace(H) / m + 1.0)
    try:
        step = np.linalg.solve(H, g0.ravel()).reshape(q1, k)
    except np.linalg.LinAlgError:
        return False
    g0n = float(np.max(np.abs(g0)))
    s = 1.0
    for _ in range(12):
        rows1 = rows0 - s * step[: ridx.size]
        m1 = mu - s * step[ridx.size] if ic else mu
        obj1, g1, _, _ = evaluate(rows1, m1)
        if np.isfinite(obj1) and _newton_accept(obj0, g0n, obj1, float(np.max(np.abs(g1)))):
            beta[ridx] = rows1
            mu[:] = m1
            return True
        s *= 0.5
    return False


def _rownorm_with(beta, ridx, rows, fin):
    """Row norms of beta with rows at ridx replaced by the candidate block."""
    b = beta.copy()
    b[ridx] = rows
    return np.linalg.norm(b[fin], axis=1)


def _drive_gaussian(pp: _Prepared, y, lams, L, hint=None):
    ct = pp.controls
    n, p = pp.xs.shape
    yoff = y - pp.offset
    w = np.ones(n)
    beta = np.zeros(p)
    mu0, nulldev = _null_gaussian(y, pp.offset, ct.fit_intercept)
    mu = np.array([mu0])
    in_ws = pp.zero_pf.copy()
    if hint is not None:
        in_ws |= hint & pp.penalizable

    coefs = np.zeros((L, p))
    icepts = np.zeros(L)
    devr = np.zeros(L)
    conv = np.zeros(L, dtype=bool)

    for l, lam in enumerate(lams):
        lpf = pp.lpf(lam)
        left = ct.max_sweeps
        tol = ct.coef_tol
        ok = False
        while left > 0:
            ws = np.flatnonzero(in_ws)
            r = yoff - mu[0] - pp.xs @ beta
            used = _accel_solve(
                pp.xs, w, r, pp.xv, beta, lpf, ws, mu,
                ct.fit_intercept, tol, left,
            )
            left -= used
            r = yoff - mu[0] - pp.xs @ beta
            gt = -(pp.xs.T @ r) / n
            grow = (
                pp.penalizable
                & ~in_ws
                & (np.abs(gt) - lpf > _GROW_EPS * ct.kkt_tol)
            )
            if grow.any():
                in_ws |= grow
                continue
            if _kkt_single(gt, beta, lpf, pp.penalizable, pp.zero_pf) <= ct.kkt_tol:
                ok = True
                break
            tol *= 0.25
        conv[l] = ok
        coefs[l], icepts[l] = _to_original(pp, beta, mu[0])
        dev = float(np.sum((yoff - mu[0] - pp.xs @ beta) ** 2))
        devr[l] = 0.0 if nulldev <= 0 else 1.0 - dev / nulldev
    return coefs, icepts, devr, nulldev, conv


def _drive_binomial(pp: _Prepared, y, lams, L, hint=None):
    ct = pp.controls
    n, p = pp.xs.shape
    beta = np.zeros(p)
    mu0, nulldev = _null_binomial(y, pp.offset, ct.fit_intercept, ct.prob_clamp)
    mu = np.array([mu0])
    in_ws = pp.zero_pf.copy()
    if hint is not None:
        in_ws |= hint & pp.penalizable

    coefs = np.zeros((L, p))
    icepts = np.zeros(L)
    devr = np.zeros(L)
    conv = np.zeros(L, dtype=bool)

    for l, lam in enumerate(lams):
        lpf = pp.lpf(lam)
        left = ct.max_sweeps
        ok = False
        prev = None
        for outer_i in range(ct.max_outer):
            if left <= 0:
                break
            eta = mu[0] + pp.xs @ beta + pp.offset
            prob = _sigmoid(eta)
            pc = _clamp(prob, ct.prob_clamp)
            wirls = pc * (1.0 - pc)
            r = (y - prob) / wirls
            xv = (pp.x2.T @ wirls) / n
            ws = np.flatnonzero(in_ws)
            used = _accel_solve(
                pp.xs, wirls, r, xv, beta, lpf, ws, mu,
                ct.fit_intercept, ct.coef_tol, left,
            )
            left -= used
            eta = mu[0] + pp.xs @ beta + pp.offset
            prob = _sigmoid(eta)
            gt = (pp.xs.T @ (prob - y)) / n
            grow = (
                pp.penalizable
                & ~in_ws
                & (np.abs(gt) - lpf > _GROW_EPS * ct.kkt_tol)
            )
            if grow.any():
                in_ws |= grow
                continue
            kkt = _kkt_single(gt, beta, lpf, pp.penalizable, pp.zero_pf)
            state = np.concatenate((beta, mu))
            if kkt <= ct.kkt_tol and prev is not None:
                if np.max(np.abs(state - prev)) < ct.coef_tol * 10:
                    ok = True
                    break
            if (
                kkt > ct.kkt_tol
                and outer_i >= _POLISH_AFTER
                and _polish_binomial(pp, y, beta, mu, lpf)
            ):
                prev = None
                continue
            prev = state
        conv[l] = ok
        coefs[l], icepts[l] = _to_original(pp, beta, mu[0])
        eta = mu[0] + pp.xs @ beta + pp.offset
        dev = binomial_deviance(y, _sigmoid(eta), ct.prob_clamp)
        devr[l] = 0.0 if nulldev <= 0 else 1.0 - dev / nulldev
    return coefs, icepts, devr, nulldev, conv


def _drive_multinomial(pp: _Prepared, yh, lams, L, hint=None):
    """Elementwise-L1 multinomial: partial Newton cycling over classes, each
    class solved as a weighted least squares block. Coefficients are held
    class-major (k, p) so each class row is contiguous for the kernel."""
    ct = pp.controls
    n, p = pp.xs.shape
    k = yh.shape[1]
    beta_t = np.zeros((k, p))
    mu, nulldev = _null_multinomial(yh, pp.offset, ct.fit_intercept, ct.prob_clamp)
    mu = mu.copy()
    in_ws = np.repeat(pp.zero_pf[None, :], k, axis=0)
    if hint is not None:
        in_ws |= (hint & pp.penalizable)[None, :]

    coefs = np.zeros((L, p, k))
    icepts = np.zeros((L, k))
    devr = np.zeros(L)
    conv = np.zeros(L, dtype=bool)
    eta = np.asarray(mu + pp.xs @ beta_t.T + pp.offset)

    def objective(b_t, m, lpf, fin):
        et = m + pp.xs @ b_t.T + pp.offset
        dev = multinomial_deviance(yh, _softmax(et), ct.prob_clamp)
        return dev / (2.0 * n) + float(lpf[fin] @ np.abs(b_t[:, fin]).sum(axis=0))

    for l, lam in enumerate(lams):
        lpf = pp.lpf(lam)
        fin = np.isfinite(lpf)
        left = ct.max_sweeps
        ok = False
        prev = None
        hist: list[np.ndarray] = []
        for outer_i in range(ct.max_outer):
            if left <= 0:
                break
            for kk in range(k):
                prob = _softmax(eta)
                pk = prob[:, kk]
                pc = _clamp(pk, ct.prob_clamp)
                wirls = pc * (1.0 - pc)
                r = (yh[:, kk] - pk) / wirls
                xv = (pp.x2.T @ wirls) / n
                mk = mu[kk : kk + 1]
                used = _accel_solve(
                    pp.xs, wirls, r, xv, beta_t[kk], lpf,
                    np.flatnonzero(in_ws[kk]), mk,
                    ct.fit_intercept, ct.coef_tol, min(left, _AA_CHUNK),
                )
                left -= used
                mu[kk] = mk[0]
                eta[:, kk] = mu[kk] + pp.xs @ beta_t[kk] + pp.offset[:, kk]
                if left <= 0:
                    break
            if ct.fit_intercept:
                shift = mu.mean()
                mu -= shift
                eta -= shift
            # class probabilities ignore a common per-feature shift across
            # classes; re-centre eligible rows at their median, which can only
            # shrink the penalty and pins the otherwise-flat direction
            shiftable = pp.zero_pf | (pp.penalizable & np.all(beta_t != 0.0, axis=0))
            if shiftable.any():
                med = np.median(beta_t[:, shiftable], axis=0)
                if np.any(med != 0.0):
                    beta_t[:, shiftable] -= med[None, :]
                    eta -= (pp.xs[:, shiftable] @ med)[:, None]
            prob = _softmax(eta)
            gt = (pp.xs.T @ (prob - yh)) / n
            grow = (
                pp.penalizable[None, :]
                & ~in_ws
                & (np.abs(gt.T) - lpf[None, :] > _GROW_EPS * ct.kkt_tol)
            )
            if grow.any():
                in_ws |= grow
                hist.clear()
                continue
            kkt = max(
                _kkt_single(gt[:, kk], beta_t[kk], lpf, pp.penalizable, pp.zero_pf)
                for kk in range(k)
            )
            state = np.concatenate((beta_t.ravel(), mu))
            if kkt <= ct.kkt_tol and prev is not None:
                if np.max(np.abs(state - prev)) < ct.coef_tol * 10:
                    ok = True
                    break
            if (
                kkt > ct.kkt_tol
                and outer_i >= _POLISH_AFTER
                and _polish_multinomial(pp, yh, beta_t, mu, lpf, fin)
            ):
                eta = np.asarray(mu + pp.xs @ beta_t.T + pp.offset)
                prev = None
                hist.clear()
                continue
            prev = state
            hist.append(state)
            if len(hist) >= _AA_KEEP:
                cand = _extrapolate(hist)
                hist.clear()
                if cand is None:
                    continue
                cb = np.ascontiguousarray(cand[: k * p].reshape(k, p))
                cb[:, ~fin] = 0.0
                cmu = cand[k * p :]
                if objective(cb, cmu, lpf, fin) < objective(beta_t, mu, lpf, fin):
                    beta_t, mu = cb, cmu
                    eta = np.asarray(mu + pp.xs @ beta_t.T + pp.offset)
                    prev = None
        conv[l] = ok
        coefs[l], icepts[l] = _to_original(pp, beta_t.T.copy(), mu)
        prob = _softmax(eta)
        dev = multinomial_deviance(yh, prob, ct.prob_clamp)
        devr[l] = 0.0 if nulldev <= 0 else 1.0 - dev / nulldev
    return coefs, icepts, devr, nulldev, conv


def _drive_grouped(pp: _Prepared, y, lams, L, kind, hint=None):
    """Row-sparse driver: 'multigaussian' (exact coordinate descent) or
    'multinomial' (outer loop re-weighting with per-class curvatures
    2 p (1 - p), checked against the true gradient).

    Inner solves run in short bursts; the sequence of burst endpoints is
    extrapolated with the same objective-gated combination used for the
    single-response kernel, which collapses the linear tail convergence."""
    ct = pp.controls
    n, p = pp.xs.shape
    k = y.shape[1]
    beta = np.zeros((p, k))
    if kind == "multigaussian":
        mu, nulldev = _null_multigaussian(y, pp.offset, ct.fit_intercept)
        cap = _AA_CHUNK
    else:
        mu, nulldev = _null_multinomial(y, pp.offset, ct.fit_intercept, ct.prob_clamp)
        cap = 3  # refresh weights often: curvatures drift with the fit
    mu = mu.copy()
    in_ws = pp.zero_pf.copy()
    if hint is not None:
        in_ws |= hint & pp.penalizable

    coefs = np.zeros((L, p, k))
    icepts = np.zeros((L, k))
    devr = np.zeros(L)
    conv = np.zeros(L, dtype=bool)

    def objective(b, m, lpf, fin):
        eta = m + pp.xs @ b + pp.offset
        if kind == "multigaussian":
            dev = float(np.sum((y - eta) ** 2))
        else:
            dev = multinomial_deviance(y, _softmax(eta), ct.prob_clamp)
        return dev / (2.0 * n) + float(lpf[fin] @ np.linalg.norm(b[fin], axis=1))

    outer_cap = max(ct.max_outer, -(-ct.max_sweeps // cap))
    for l, lam in enumerate(lams):
        lpf = pp.lpf(lam)
        fin = np.isfinite(lpf)
        left = ct.max_sweeps
        ok = False
        prev = None
        hist: list[np.ndarray] = []
        for outer_i in range(outer_cap):
            if left <= 0:
                break
            eta = mu + pp.xs @ beta + pp.offset
            ws = np.flatnonzero(in_ws)
            if kind == "multigaussian":
                # working residual z - mu - XB collapses to y - eta exactly
                r = np.asfortranarray(y - eta)
                used = solve_grouped(
                    pp.xs, r, beta, pp.xv, lpf, ws, mu,
                    ct.fit_intercept, 1.0, ct.coef_tol, min(left, cap),
                )
            else:
                prob = _softmax(eta)
                pc = _clamp(prob, ct.prob_clamp)
                wcls = np.ascontiguousarray(2.0 * pc * (1.0 - pc))
                r = np.ascontiguousarray((y - prob) / wcls)
                dcurv = (pp.x2.T @ wcls) / n
                used = solve_grouped_weighted(
                    pp.xs, wcls, r, beta, dcurv, lpf, ws, mu,
                    wcls.sum(axis=0), ct.fit_intercept, ct.coef_tol, min(left, cap),
                )
            left -= used
            if kind == "multinomial":
                # probabilities ignore a common per-feature shift across
                # classes; zero-mean rows minimise the row norms and pin the
                # flat directions
                rowm = beta.mean(axis=1)
                if np.any(rowm != 0.0):
                    beta -= rowm[:, None]
                if ct.fit_intercept:
                    mu = mu - mu.mean()
            eta = mu + pp.xs @ beta + pp.offset
            if kind == "multigaussian":
                gt = (pp.xs.T @ (eta - y)) / n
            else:
                gt = (pp.xs.T @ (_softmax(eta) - y)) / n
            rowg = np.linalg.norm(gt, axis=1)
            grow = pp.penalizable & ~in_ws & (rowg - lpf > _GROW_EPS * ct.kkt_tol)
            if grow.any():
                in_ws |= grow
                hist.clear()
                continue
            kkt = _kkt_grouped(gt, beta, lpf, pp.penalizable, pp.zero_pf)
            state = np.concatenate((beta.ravel(), mu))
            if kkt <= ct.kkt_tol:
                if kind == "multigaussian":
                    ok = True
                    break
                if prev is not None and np.max(np.abs(state - prev)) < ct.coef_tol * 10:
                    ok = True
                    break
            if (
                kind == "multinomial"
                and kkt > ct.kkt_tol
                and outer_i >= _POLISH_AFTER
                and _polish_grouped_multinomial(pp, y, beta, mu, lpf, fin)
            ):
                prev = None
                hist.clear()
                continue
            prev = state
            hist.append(state)
            if len(hist) >= _AA_KEEP:
                cand = _extrapolate(hist)
                hist.clear()
                if cand is None:
                    continue
                cb = np.ascontiguousarray(cand[: p * k].reshape(p, k))
                cb[~fin & ~pp.zero_pf] = 0.0
                cmu = cand[p * k :]
                if objective(cb, cmu, lpf, fin) < objective(beta, mu, lpf, fin):
                    beta, mu = cb, cmu
                    prev = None
        conv[l] = ok
        coefs[l], icepts[l] = _to_original(pp, beta, mu)
        eta = mu + pp.xs @ beta + pp.offset
        if kind == "multigaussian":
            dev = float(np.sum((y - eta) ** 2))
        else:
            dev = multinomial_deviance(y, _softmax(eta), ct.prob_clamp)
        devr[l] = 0.0 if nulldev <= 0 else 1.0 - dev / nulldev
    return coefs, icepts, devr, nulldev, conv


# ---------------------------------------------------------------------------
# null-state gradients -> lambda_max
# ---------------------------------------------------------------------------


def _null_state_gradient(pp: _Prepared, dataset: Dataset, grouped: bool):
    """Gradient of the smooth loss at the null state (intercept + offset +
    unpenalized features fit, all penalized coefficients zero)."""
    ct = pp.controls
    fam = dataset.family.kind
    n = dataset.n
    huge = np.where(pp.zero_pf, 0.0, np.inf)

    if fam == "gaussian":
        y = dataset.y
        mu0, _ = _null_gaussian(y, pp.offset, ct.fit_intercept)
        beta = np.zeros(pp.xs.shape[1])
        mu = np.array([mu0])
        if pp.zero_pf.any():
            w = np.ones(n)
            r = y - pp.offset - mu[0] - pp.xs @ beta
            solve_weighted(
                pp.xs, w, r, pp.xv, beta, huge, np.flatnonzero(pp.zero_pf),
                mu, ct.fit_intercept, ct.coef_tol, ct.max_sweeps,
            )
        r = y - pp.offset - mu[0] - pp.xs @ beta
        return -(pp.xs.T @ r) / n

    if fam == "binomial":
        y = dataset.y
        mu0, _ = _null_binomial(y, pp.offset, ct.fit_intercept, ct.prob_clamp)
        beta = np.zeros(pp.xs.shape[1])
        mu = np.array([mu0])
        if pp.zero_pf.any():
            for _ in range(ct.max_outer):
                eta = mu[0] + pp.xs @ beta + pp.offset
                prob = _sigmoid(eta)
                pc = _clamp(prob, ct.prob_clamp)
                wirls = pc * (1.0 - pc)
                r = (y - prob) / wirls
                xv = (pp.x2.T @ wirls) / n
                before = np.concatenate((beta, mu))
                solve_weighted(
                    pp.xs, wirls, r, xv, beta, huge, np.flatnonzero(pp.zero_pf),
                    mu, ct.fit_intercept, ct.coef_tol, ct.max_sweeps,
                )
                if np.max(np.abs(np.concatenate((beta, mu)) - before)) < ct.coef_tol * 10:
                    break
        eta = mu[0] + pp.xs @ beta + pp.offset
        return (pp.xs.T @ (_sigmoid(eta) - y)) / n

    # multioutput families: the unpenalized-feature refinement reuses the
    # full drivers with a single huge lambda (zero-factor rows stay free)
    if fam == "multinomial":
        yh = one_hot(dataset.y, dataset.family.n_outputs)
        if pp.zero_pf.any():
            big = np.array([1e300])
            if grouped:
                c, i, _, _, _ = _drive_grouped(pp, yh, big, 1, "multinomial")
            else:
                c, i, _, _, _ = _drive_multinomial(pp, yh, big, 1)
            beta_std = c[0] * pp.scales[:, None]
            mu_std = i[0] + pp.means @ c[0]
        else:
            mu_std, _ = _null_multinomial(yh, pp.offset, ct.fit_intercept, ct.prob_clamp)
            beta_std = np.zeros((pp.xs.shape[1], yh.shape[1]))
        eta = mu_std + pp.xs @ beta_std + pp.offset
        return (pp.xs.T @ (_softmax(eta) - yh)) / n

    y = dataset.y
    if pp.zero_pf.any():
        c, i, _, _, _ = _drive_grouped(pp, y, np.array([1e300]), 1, "multigaussian")
        beta_std = c[0] * pp.scales[:, None]
        mu_std = i[0] + pp.means @ c[0]
    else:
        mu_std, _ = _null_multigaussian(y, pp.offset, ct.fit_intercept)
        beta_std = np.zeros((pp.xs.shape[1], y.shape[1]))
    eta = mu_std + pp.xs @ beta_std + pp.offset
    return (pp.xs.T @ (eta - y)) / n


def _lambda_max_from_gradient(gt, pp: _Prepared, grouped: bool) -> float:
    if not pp.penalizable.any():
        raise NoPenalizableFeatures(
            "no feature has a finite, strictly positive penalty factor"
        )
    j = pp.penalizable
    if gt.ndim == 2:
        score = np.linalg.norm(gt[j], axis=1) if grouped else np.abs(gt[j]).max(axis=1)
    else:
        score = np.abs(gt[j])
    return float(np.max(score / pp.eff_pf[j]))


def lambda_max(
    dataset: Dataset,
    penalty: PenaltySpec | None = None,
    controls: Controls | None = None,
    grouped: bool = False,
) -> float:
    """Smallest lambda at which every penalized coefficient is zero.

    Computed from the gradient of the null model (intercept + fixed offset +
    zero-factor features), with factors as used by the solver, i.e. after
    mean-1 rescaling. For grouped (row-sparse) fits the per-feature score is
    the row 2-norm of the gradient.
    """
    penalty = penalty or PenaltySpec()
    controls = controls or DEFAULT_CONTROLS
    pp = _prepare(dataset, penalty, controls)
    gt = _null_state_gradient(pp, dataset, grouped)
    return _lambda_max_from_gradient(gt, pp, grouped)


# ---------------------------------------------------------------------------
# public fitting entry points
# ---------------------------------------------------------------------------


def _intercept_only_fit(dataset, pp, lams, grouped):
    fam = dataset.family
    ct = pp.controls
    L = lams.shape[0]
    p = dataset.p
    if fam.kind == "gaussian":
        mu, nulldev = _null_gaussian(dataset.y, pp.offset, ct.fit_intercept)
        icepts = np.full(L, mu)
        coefs = np.zeros((L, p))
    elif fam.kind == "binomial":
        mu, nulldev = _null_binomial(dataset.y, pp.offset, ct.fit_intercept, ct.prob_clamp)
        icepts = np.full(L, mu)
        coefs = np.zeros((L, p))
    elif fam.kind == "multinomial":
        yh = one_hot(dataset.y, fam.n_outputs)
        mu, nulldev = _null_multinomial(yh, pp.offset, ct.fit_intercept, ct.prob_clamp)
        icepts = np.tile(mu, (L, 1))
        coefs = np.zeros((L, p, fam.n_outputs))
    else:
        mu, nulldev = _null_multigaussian(dataset.y, pp.offset, ct.fit_intercept)
        icepts = np.tile(mu, (L, 1))
        coefs = np.zeros((L, p, fam.n_outputs))
    return PathFit(
        family=fam,
        lambdas=lams,
        intercepts=icepts,
        coefficients=coefs,
        dev_ratio=np.zeros(L),
        null_deviance=nulldev,
        converged=np.ones(L, dtype=bool),
        effective_penalty_factors=pp.eff_pf,
        feature_means=pp.means,
        feature_scales=pp.scales,
        grouped=grouped,
        feature_names=dataset.feature_names,
    )


def _fit(dataset, penalty, controls, grouped, support_hint=None):
    penalty = penalty or PenaltySpec()
    controls = controls or DEFAULT_CONTROLS
    fam = dataset.family
    pp = _prepare(dataset, penalty, controls)

    lams = penalty.resolve_lambdas()
    if pp.degenerate:
        lams = np.array([0.0]) if lams is None else lams
        return _intercept_only_fit(dataset, pp, lams, grouped)
    if lams is None:
        gt = _null_state_gradient(pp, dataset, grouped)
        lmax = _lambda_max_from_gradient(gt, pp, grouped)
        lams = _auto_lambdas(lmax, dataset.n, dataset.p, penalty)
    L = lams.shape[0]

    hint = None
    if support_hint is not None:
        hint = np.asarray(support_hint, dtype=bool)
        if hint.shape != (dataset.p,):
            raise ValueError("support_hint must be a boolean mask of length p")

    if fam.kind == "gaussian":
        out = _drive_gaussian(pp, dataset.y, lams, L, hint)
    elif fam.kind == "binomial":
        out = _drive_binomial(pp, dataset.y, lams, L, hint)
    elif fam.kind == "multinomial":
        yh = one_hot(dataset.y, fam.n_outputs)
        if grouped:
            out = _drive_grouped(pp, yh, lams, L, "multinomial", hint)
        else:
            out = _drive_multinomial(pp, yh, lams, L, hint)
    else:
        out = _drive_grouped(pp, dataset.y, lams, L, "multigaussian", hint)

    coefs, icepts, devr, nulldev, conv = out
    return PathFit(
        family=fam,
        lambdas=np.asarray(lams, dtype=np.float64),
        intercepts=icepts,
        coefficients=coefs,
        dev_ratio=devr,
        null_deviance=nulldev,
        converged=conv,
        effective_penalty_factors=pp.eff_pf,
        feature_means=pp.means,
        feature_scales=pp.scales,
        grouped=grouped,
        feature_names=dataset.feature_names,
    )


def fit_path(
    dataset: Dataset,
    penalty: PenaltySpec | None = None,
    controls: Controls | None = None,
    *,
    support_hint: np.ndarray | None = None,
) -> PathFit:
    """Fit the elementwise-L1 path for gaussian, binomial, or multinomial
    responses. Multigaussian responses use :func:`fit_grouped_path`.

    ``support_hint`` (optional boolean p-mask) pre-loads the working set; it
    is purely a speed hint — violations still grow the set, so the solution
    is unchanged.
    """
    if dataset.family.kind == "multigaussian":
        raise InvalidFamily("multigaussian responses require fit_grouped_path")
    return _fit(dataset, penalty, controls, grouped=False, support_hint=support_hint)


def fit_grouped_path(
    dataset: Dataset,
    penalty: PenaltySpec | None = None,
    controls: Controls | None = None,
    *,
    support_hint: np.ndarray | None = None,
) -> PathFit:
    """Fit the row-sparse path (penalty sum_j pf_j ||B_j.||_2) for
    multigaussian or multinomial responses."""
    if not dataset.family.is_multioutput:
        raise InvalidFamily("grouped paths require a multioutput family")
    return _fit(dataset, penalty, controls, grouped=True, support_hint=support_hint)


def predict(
    fit: PathFit,
    x_new,
    lambda_index: int,
    kind: str = "response",
    offset=None,
):
    """Predict from a stored path solution at one lambda.

    ``kind`` is 'link', 'response', or 'class'; any offset for the new rows
    must be supplied by the caller (fits do not remember training offsets).
    """
    return fit.predict(x_new, lambda_index, kind, offset)


# ---------------------------------------------------------------------------
# KKT residual of a stored fit
# ---------------------------------------------------------------------------


def kkt_residual(fit: PathFit, dataset: Dataset, lambda_index: int) -> float:
    """Max subgradient violation of a stored solution, evaluated in the
    solver's internal coordinates (standardized features, rescaled factors).

    Active feature j contributes |(1/n) x_j^T grad + lambda pf_j sign(b_j)|,
    inactive j contributes max(0, |(1/n) x_j^T grad| - lambda pf_j); for
    grouped fits the same with row 2-norms. Excluded features are skipped.
    """
    n = dataset.n
    xs = (dataset.x - fit.feature_means) / fit.feature_scales
    lam = float(fit.lambdas[lambda_index])
    eff = fit.effective_penalty_factors
    fin = ~np.isinf(eff)
    lpf = np.full(eff.shape[0], np.inf)
    lpf[fin] = lam * eff[fin]
    penalizable = fin & (eff > 0)
    zero_pf = fin & (eff == 0)

    coef = fit.coefficients[lambda_index]
    if coef.ndim == 1:
        b = coef * fit.feature_scales
        off = dataset.fixed_offset if dataset.fixed_offset is not None else 0.0
        eta = fit.intercepts[lambda_index] + dataset.x @ coef + off
        if fit.family.kind == "gaussian":
            grad = eta - dataset.y
        else:
            grad = _sigmoid(eta) - dataset.y
        gt = (xs.T @ grad) / n
        return _kkt_single(gt, b, lpf, penalizable, zero_pf)

    b = coef * fit.feature_scales[:, None]
    off = (
        dataset.fixed_offset
        if dataset.fixed_offset is not None
        else np.zeros((n, fit.family.n_outputs))
    )
    eta = fit.intercepts[lambda_index] + dataset.x @ coef + off
    if fit.family.kind == "multigaussian":
        grad = eta - dataset.y
    else:
        yh = one_hot(dataset.y, fit.family.n_outputs)
        grad = _softmax(eta) - yh
    gt = (xs.T @ grad) / n
    if fit.grouped:
        return _kkt_grouped(gt, b, lpf, penalizable, zero_pf)
    return max(
        _kkt_single(gt[:, k], b[:, k], lpf, penalizable, zero_pf)
        for k in range(gt.shape[1])
    )
