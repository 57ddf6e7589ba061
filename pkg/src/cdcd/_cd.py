"""Compiled inner loops for the sparse-group-lasso Cholesky solver.

Array conventions (all C-contiguous float64):

    Yt    (p, n)          responses, transposed
    Xt    (q+1, n)        covariates with a leading row of ones
    coef  (q+1, p-1, p-1) coef[k, j, c] = phi[t=c+2, j=j+1, k], zero below diag
    R     (p-1, n)        R[c] = residual of response c+2
    norms (p-1, q+1)      ||Yt[j] * Xt[k]||^2 / n
    gnorm2 (q+1,)         squared Frobenius norm of each slice
"""
import numpy as np
from numba import njit


RTOL = 1e-13


@njit(cache=True)
def soft(a, lam):
    # a few ulps of slack so a gradient equal to lam (up to summation
    # order) thresholds to an exact zero
    cut = lam * (1.0 + RTOL)
    if a > cut:
        return a - lam
    if a < -cut:
        return a + lam
    return 0.0


@njit(cache=True)
def coord_min(a, b, lam, lam_g, c2):
    """argmin_u a/2 u^2 - b u + lam |u| + lam_g sqrt(u^2 + c2).

    Solves the self-consistent form u = S_lam(b) / (a + lam_g / ||group||)
    where the group norm includes u itself.
    """
    if lam_g == 0.0:
        return soft(b, lam) / a
    if c2 <= 0.0:
        return soft(b, lam + lam_g) / a
    if abs(b) <= lam * (1.0 + RTOL):
        return 0.0
    m = abs(b) - lam
    c = np.sqrt(c2)
    # f(u) = a u + lam_g u / sqrt(u^2 + c2) - m is concave increasing; Newton
    # from a point with f <= 0 increases monotonically to the root.
    u = m / (a + lam_g / c)
    for _ in range(100):
        s = np.sqrt(u * u + c2)
        f = a * u + lam_g * u / s - m
        fp = a + lam_g * c2 / (s * s * s)
        step = f / fp
        u -= step
        if abs(step) <= 1e-15 * u:
            break
    if b < 0.0:
        return -u
    return u


@njit(cache=True)
def _dot_zr(Yt, Xt, R, j, k, c):
    n = Yt.shape[1]
    acc = 0.0
    for i in range(n):
        acc += Yt[j, i] * Xt[k, i] * R[c, i]
    return acc


@njit(cache=True)
def _axpy_z(Yt, Xt, R, j, k, c, delta):
    n = Yt.shape[1]
    for i in range(n):
        R[c, i] -= delta * Yt[j, i] * Xt[k, i]


@njit(cache=True)
def slice_norm2(coef, k):
    m = coef.shape[1]
    acc = 0.0
    for j in range(m):
        for c in range(j, m):
            acc += coef[k, j, c] * coef[k, j, c]
    return acc


@njit(cache=True)
def group_gradient(Yt, Xt, R, coef, norms, k):
    """B[j, c] = (Y_j o X_k)^T R_k[c] / n with slice k's own fit added back."""
    m = coef.shape[1]
    n = Yt.shape[1]
    Z = np.empty((m, n))
    for j in range(m):
        for i in range(n):
            Z[j, i] = Yt[j, i] * Xt[k, i]
    B = np.dot(Z, R.T) / n
    for j in range(m):
        for c in range(m):
            if c < j:
                B[j, c] = 0.0
            else:
                B[j, c] += norms[j, k] * coef[k, j, c]
    return B


@njit(cache=True)
def thresholded_norm(B, lam):
    m = B.shape[0]
    acc = 0.0
    for j in range(m):
        for c in range(j, m):
            s = soft(B[j, c], lam)
            acc += s * s
    return np.sqrt(acc)


@njit(cache=True)
def _set_slice(Yt, Xt, R, coef, k, new):
    m = coef.shape[1]
    for j in range(m):
        for c in range(j, m):
            delta = new[j, c] - coef[k, j, c]
            if delta != 0.0:
                _axpy_z(Yt, Xt, R, j, k, c, delta)
                coef[k, j, c] = new[j, c]


@njit(cache=True)
def sweep(Yt, Xt, coef, R, norms, lipschitz, lam, lam_g, active_only):
    """One cycle over k = 0..q; returns the number of group-zeroing events."""
    q1 = coef.shape[0]
    m = coef.shape[1]
    n = Yt.shape[1]
    zeroed = 0
    for k in range(q1):
        lg = lam_g if k > 0 else 0.0
        g2 = slice_norm2(coef, k)
        if k > 0 and g2 == 0.0 and active_only:
            continue
        if k > 0 and not active_only:
            B = group_gradient(Yt, Xt, R, coef, norms, k)
            tn = thresholded_norm(B, lam)
            if tn <= lam_g:
                if g2 > 0.0:
                    _set_slice(Yt, Xt, R, coef, k, np.zeros((m, m)))
                    zeroed += 1
                continue
            if g2 == 0.0:
                # seed a zero slice with one proximal-gradient step; coordinate
                # moves alone cannot leave the non-smooth point of the group norm
                if lipschitz[k] <= 0.0:
                    continue
                scale = (1.0 - lam_g / tn) / lipschitz[k]
                new = np.zeros((m, m))
                for j in range(m):
                    for c in range(j, m):
                        if norms[j, k] > 0.0:
                            new[j, c] = scale * soft(B[j, c], lam)
                _set_slice(Yt, Xt, R, coef, k, new)
                g2 = slice_norm2(coef, k)
        for c in range(m):
            for j in range(c + 1):
                old = coef[k, j, c]
                if active_only and old == 0.0:
                    continue
                a = norms[j, k]
                if a <= 0.0:
                    new_val = 0.0
                else:
                    b = _dot_zr(Yt, Xt, R, j, k, c) / n + a * old
                    c2 = g2 - old * old
                    if c2 < 0.0:
                        c2 = 0.0
                    new_val = coord_min(a, b, lam, lg, c2)
                if new_val != old:
                    _axpy_z(Yt, Xt, R, j, k, c, new_val - old)
                    coef[k, j, c] = new_val
                    g2 = g2 - old * old + new_val * new_val
                    if g2 < 0.0:
                        g2 = 0.0
    return zeroed


@njit(cache=True)
def penalized_objective(coef, R, lam, lam_g):
    n = R.shape[1]
    loss = 0.0
    for c in range(R.shape[0]):
        for i in range(n):
            loss += R[c, i] * R[c, i]
    loss /= 2.0 * n
    l1 = 0.0
    grp = 0.0
    for k in range(coef.shape[0]):
        s2 = 0.0
        for j in range(coef.shape[1]):
            for c in range(j, coef.shape[2]):
                v = coef[k, j, c]
                l1 += abs(v)
                s2 += v * v
        if k > 0:
            grp += np.sqrt(s2)
    return loss + lam * l1 + lam_g * grp


@njit(cache=True)
def residuals(Yt, Xt, coef):
    q1 = coef.shape[0]
    m = coef.shape[1]
    n = Yt.shape[1]
    R = np.empty((m, n))
    for c in range(m):
        for i in range(n):
            R[c, i] = Yt[c + 1, i]
    for k in range(q1):
        for j in range(m):
            for c in range(j, m):
                v = coef[k, j, c]
                if v != 0.0:
                    for i in range(n):
                        R[c, i] -= v * Yt[j, i] * Xt[k, i]
    return R


@njit(cache=True)
def run(Yt, Xt, coef, R, norms, lipschitz, lam, lam_g, max_sweeps, tol, refresh, trace):
    """Full sweeps interleaved with active-set passes.

    Returns (full sweeps run, converged flag, number of trace entries).
    """
    obj = penalized_objective(coef, R, lam, lam_g)
    trace[0] = obj
    nt = 1
    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        sweep(Yt, Xt, coef, R, norms, lipschitz, lam, lam_g, False)
        sweeps += 1
        new = penalized_objective(coef, R, lam, lam_g)
        if nt < trace.shape[0]:
            trace[nt] = new
            nt += 1
        rel = (obj - new) / max(abs(obj), 1e-300)
        obj = new
        if rel < tol:
            converged = True
            break
        for _ in range(refresh):
            sweep(Yt, Xt, coef, R, norms, lipschitz, lam, lam_g, True)
            new = penalized_objective(coef, R, lam, lam_g)
            rel = (obj - new) / max(abs(obj), 1e-300)
            obj = new
            if rel < tol:
                break
    return sweeps, converged, nt
