"""Compiled coordinate-descent kernels.

Both kernels sweep a caller-supplied working set until the largest
coefficient move in a sweep drops below ``tol``. All state (residuals,
coefficients, intercepts) is updated in place; callers own convergence
bookkeeping, working-set growth, and KKT verification.

Conventions:
  * the design is already standardized (or deliberately raw) by the caller;
  * ``lpf[j]`` is lambda times the effective penalty factor, +inf meaning the
    feature is excluded from updates entirely;
  * fits are deterministic: fixed sweep order, no fastmath reassociation.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def solve_weighted(X, w, r, xv, beta, lpf, idx, mu, fit_intercept, tol, max_iter):
    """Penalized weighted least squares by cyclic CD over ``idx``.

    X : (n, p) design (Fortran order preferred for column access).
    w : (n,) observation weights.
    r : (n,) working residual z - mu - X beta, updated in place.
    xv : (p,) curvature terms (1/n) sum_i w_i x_ij^2.
    beta : (p,) coefficients, updated in place.
    lpf : (p,) lambda * penalty factor.
    mu : length-1 array holding the intercept, updated in place.
    Returns the number of sweeps performed.
    """
    n = X.shape[0]
    wsum = 0.0
    for i in range(n):
        wsum += w[i]
    it = 0
    while it < max_iter:
        it += 1
        dmax = 0.0
        for t in range(idx.shape[0]):
            j = idx[t]
            xvj = xv[j]
            lj = lpf[j]
            if xvj <= 0.0 or np.isinf(lj):
                continue
            s = 0.0
            for i in range(n):
                s += X[i, j] * w[i] * r[i]
            u = s / n + xvj * beta[j]
            au = abs(u) - lj
            if au <= 0.0:
                bnew = 0.0
            else:
                bnew = au / xvj if u > 0.0 else -au / xvj
            d = bnew - beta[j]
            if d != 0.0:
                beta[j] = bnew
                for i in range(n):
                    r[i] -= X[i, j] * d
                ad = abs(d)
                if ad > dmax:
                    dmax = ad
        if fit_intercept and wsum > 0.0:
            s = 0.0
            for i in range(n):
                s += w[i] * r[i]
            d = s / wsum
            if d != 0.0:
                mu[0] += d
                for i in range(n):
                    r[i] -= d
                ad = abs(d)
                if ad > dmax:
                    dmax = ad
        if dmax < tol:
            break
    return it


@njit(cache=True)
def _row_prox(c, d, lj, bnew):
    """Minimize sum_k d_k/2 b_k^2 - c_k b_k + lj ||b||_2.

    Solution b_k = c_k / (d_k + s) with s = lj / ||b|| found by safeguarded
    Newton on h(s) = sum_k (s c_k / (d_k + s))^2 - lj^2, which is increasing
    with h(0) < 0 <= h(inf) whenever ||c|| > lj.
    """
    K = c.shape[0]
    cn2 = 0.0
    dbar = 0.0
    for k in range(K):
        cn2 += c[k] * c[k]
        dbar += d[k]
    cn = np.sqrt(cn2)
    if cn <= lj:
        for k in range(K):
            bnew[k] = 0.0
        return
    if lj == 0.0:
        for k in range(K):
            bnew[k] = c[k] / d[k] if d[k] > 0.0 else 0.0
        return
    dbar /= K
    s = lj * dbar / (cn - lj)  # exact when all curvatures equal
    if s <= 0.0:
        s = lj
    lo = 0.0
    hi = -1.0  # unknown upper bracket
    for _ in range(100):
        h = 0.0
        hp = 0.0
        for k in range(K):
            dk = d[k] + s
            t = s * c[k] / dk
            h += t * t
            hp += 2.0 * t * c[k] * d[k] / (dk * dk)
        h -= lj * lj
        if h < 0.0:
            lo = s
        else:
            hi = s
        if abs(h) <= 1e-13 * lj * lj:
            break
        if hp > 0.0:
            step = h / hp
            snew = s - step
        else:
            snew = -1.0
        if snew <= lo or (hi > 0.0 and snew >= hi):
            snew = (lo + hi) / 2.0 if hi > 0.0 else s * 4.0
        if abs(snew - s) <= 1e-14 * s:
            s = snew
            break
        s = snew
    for k in range(K):
        bnew[k] = c[k] / (d[k] + s)


@njit(cache=True)
def solve_grouped_weighted(X, W, R, B, D, lpf, idx, mu, wsum, fit_intercept, tol, max_iter):
    """Row-sparse penalized weighted least squares by cyclic block CD.

    Minimizes (1/2n) sum_ik W_ik R_ik^2 + sum_j lpf_j ||B_j.||_2 over the
    rows in ``idx``. Per-class observation weights make this the inner step
    of a diagonal-curvature multinomial approximation.

    W : (n, K) C-order weights; R : (n, K) C-order residuals, updated in place.
    D : (p, K) curvatures (1/n) sum_i W_ik x_ij^2.
    wsum : (K,) column sums of W.
    Returns the number of sweeps performed.
    """
    n = X.shape[0]
    K = R.shape[1]
    c = np.empty(K)
    bnew = np.empty(K)
    dlt = np.empty(K)
    it = 0
    while it < max_iter:
        it += 1
        dmax = 0.0
        for tt in range(idx.shape[0]):
            j = idx[tt]
            lj = lpf[j]
            if np.isinf(lj):
                continue
            for k in range(K):
                c[k] = 0.0
            for i in range(n):
                xij = X[i, j]
                for k in range(K):
                    c[k] += xij * W[i, k] * R[i, k]
            for k in range(K):
                c[k] = c[k] / n + D[j, k] * B[j, k]
            _row_prox(c, D[j], lj, bnew)
            changed = False
            for k in range(K):
                dk = bnew[k] - B[j, k]
                dlt[k] = dk
                if dk != 0.0:
                    changed = True
                    B[j, k] = bnew[k]
                    ad = abs(dk)
                    if ad > dmax:
                        dmax = ad
            if changed:
                for i in range(n):
                    xij = X[i, j]
                    for k in range(K):
                        R[i, k] -= xij * dlt[k]
        if fit_intercept:
            for k in range(K):
                c[k] = 0.0
            for i in range(n):
                for k in range(K):
                    c[k] += W[i, k] * R[i, k]
            changed = False
            for k in range(K):
                dk = c[k] / wsum[k] if wsum[k] > 0.0 else 0.0
                dlt[k] = dk
                if dk != 0.0:
                    changed = True
                    mu[k] += dk
                    ad = abs(dk)
                    if ad > dmax:
                        dmax = ad
            if changed:
                for i in range(n):
                    for k in range(K):
                        R[i, k] -= dlt[k]
        if dmax < tol:
            break
    return it


@njit(cache=True)
def solve_grouped(X, R, B, xnorm, lpf, idx, mu, fit_intercept, t_weight, tol, max_iter):
    """Row-sparse penalized least squares by cyclic block CD over ``idx``.

    Minimizes (t/2n) ||R||_F^2 + sum_j lpf_j ||B_j.||_2 in the rows listed in
    ``idx``, where t is a uniform curvature weight (1 for squared error, the
    multinomial upper bound 1/2 for the majorized multinomial step).

    R : (n, K) working residuals, updated in place (Fortran order preferred).
    B : (p, K) coefficient rows, updated in place.
    xnorm : (p,) = (1/n) sum_i x_ij^2.
    mu : (K,) intercepts, updated in place.
    Returns the number of sweeps performed.
    """
    n = X.shape[0]
    K = R.shape[1]
    c = np.empty(K)
    it = 0
    while it < max_iter:
        it += 1
        dmax = 0.0
        for t in range(idx.shape[0]):
            j = idx[t]
            lj = lpf[j]
            xvj = xnorm[j] * t_weight
            if xvj <= 0.0 or np.isinf(lj):
                continue
            cn2 = 0.0
            for k in range(K):
                s = 0.0
                for i in range(n):
                    s += X[i, j] * R[i, k]
                ck = t_weight * (s / n) + xvj * B[j, k]
                c[k] = ck
                cn2 += ck * ck
            cn = np.sqrt(cn2)
            if cn <= lj:
                scale = 0.0
            else:
                scale = (1.0 - lj / cn) / xvj
            for k in range(K):
                bnew = c[k] * scale
                d = bnew - B[j, k]
                if d != 0.0:
                    B[j, k] = bnew
                    for i in range(n):
                        R[i, k] -= X[i, j] * d
                    ad = abs(d)
                    if ad > dmax:
                        dmax = ad
        if fit_intercept:
            for k in range(K):
                s = 0.0
                for i in range(n):
                    s += R[i, k]
                d = s / n
                if d != 0.0:
                    mu[k] += d
                    for i in range(n):
                        R[i, k] -= d
                    ad = abs(d)
                    if ad > dmax:
                        dmax = ad
        if dmax < tol:
            break
    return it
