"""Compiled blockwise MM cycle for the log-variance fit.

Arrays: e2 (n, p) squared residuals, Xc (n, q+1) centered covariates with a
leading ones column, b (p, q+1) coefficients, eta (n, p) = Xc b^T, mu = exp(eta).
"""
import numpy as np
from numba import njit

CLAMP = 30.0


@njit(cache=True)
def _exp_clamped(v):
    if v > CLAMP:
        v = CLAMP
    elif v < -CLAMP:
        v = -CLAMP
    return np.exp(v)


@njit(cache=True)
def group_shrink(z, h, live, lam_d, out):
    """Exact argmin of sum_t h_t/2 (b_t - z_t)^2 + lam_d ||b|| over live t."""
    p = z.shape[0]
    s2 = 0.0
    hmax = 0.0
    for t in range(p):
        if live[t]:
            v = h[t] * z[t]
            s2 += v * v
            if h[t] > hmax:
                hmax = h[t]
    if np.sqrt(s2) <= lam_d:
        for t in range(p):
            if live[t]:
                out[t] = 0.0
        return
    if lam_d == 0.0:
        for t in range(p):
            if live[t]:
                out[t] = z[t]
        return
    # F(s) = sum (h z s / (h + s))^2 - lam_d^2 is increasing in s, F(0) < 0
    lo = 0.0
    hi = hmax
    while True:
        f = -lam_d * lam_d
        for t in range(p):
            if live[t]:
                v = h[t] * z[t] * hi / (h[t] + hi)
                f += v * v
        if f > 0.0:
            break
        lo = hi
        hi *= 2.0
    s = 0.5 * (lo + hi)
    for _ in range(200):
        f = -lam_d * lam_d
        fp = 0.0
        for t in range(p):
            if live[t]:
                d = h[t] + s
                v = h[t] * z[t] * s / d
                f += v * v
                fp += 2.0 * v * h[t] * z[t] * h[t] / (d * d)
        if f > 0.0:
            hi = s
        else:
            lo = s
        nxt = s - f / fp if fp > 0.0 else 0.5 * (lo + hi)
        if not (lo < nxt < hi):
            nxt = 0.5 * (lo + hi)
        if abs(nxt - s) <= 1e-15 * s or hi - lo <= 1e-15 * hi:
            s = nxt
            break
        s = nxt
    for t in range(p):
        if live[t]:
            out[t] = h[t] * z[t] / (h[t] + s)


@njit(cache=True)
def objective(e2, mu, b, lam_d):
    n, p = e2.shape
    acc = 0.0
    for i in range(n):
        for t in range(p):
            r = e2[i, t] - mu[i, t]
            acc += r * r
    acc /= 2.0 * n
    pen = 0.0
    for k in range(1, b.shape[1]):
        s = 0.0
        for t in range(p):
            s += b[t, k] * b[t, k]
        pen += np.sqrt(s)
    return acc + lam_d * pen


@njit(cache=True)
def cycle(e2, Xc, b, eta, mu, lam_d, halving, cur):
    """One pass over k = 0..q with step halving; returns the new objective."""
    n, p = e2.shape
    q1 = Xc.shape[1]
    g = np.empty(p)
    h = np.empty(p)
    z = np.empty(p)
    prop = np.empty(p)
    step = np.empty(p)
    live = np.empty(p, dtype=np.bool_)
    cand_eta = np.empty((n, p))
    cand_mu = np.empty((n, p))
    for k in range(q1):
        for t in range(p):
            g[t] = 0.0
            h[t] = 0.0
        for i in range(n):
            x = Xc[i, k]
            if x == 0.0:
                continue
            for t in range(p):
                m = mu[i, t]
                g[t] += (m - e2[i, t]) * m * x
                h[t] += 2.0 * m * m * x * x
        anylive = False
        for t in range(p):
            g[t] /= n
            h[t] /= n
            live[t] = h[t] > 0.0
            if live[t]:
                anylive = True
                z[t] = b[t, k] - g[t] / h[t]
            else:
                z[t] = b[t, k]
            prop[t] = z[t]
        if not anylive:
            continue
        if k > 0:
            group_shrink(z, h, live, lam_d, prop)
        moved = False
        for t in range(p):
            step[t] = prop[t] - b[t, k]
            if step[t] != 0.0:
                moved = True
        if not moved:
            continue
        old_k = b[:, k].copy()
        for _ in range(halving + 1):
            for i in range(n):
                x = Xc[i, k]
                for t in range(p):
                    v = eta[i, t] + x * step[t]
                    cand_eta[i, t] = v
                    cand_mu[i, t] = _exp_clamped(v)
            for t in range(p):
                b[t, k] = old_k[t] + step[t]
            val = objective(e2, cand_mu, b, lam_d)
            if val <= cur:
                eta[:, :] = cand_eta
                mu[:, :] = cand_mu
                cur = val
                break
            for t in range(p):
                b[t, k] = old_k[t]
                step[t] *= 0.5
    return cur
