"""Log-variance regression for the Cholesky prediction errors.

Minimizes ``1/(2n) sum_{i,t} (e_it^2 - exp(eta_it))^2 + lam_d sum_{k>=1}
||beta[:, k]||_2`` with ``eta_it = beta[t,0] + sum_k beta[t,k] x_ik`` by
blockwise majorization-minimization over k = 0..q.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import _cd, _mm
from .model import EXP_CLAMP, BetaMatrix, Dataset, InputError, PhiTensor
from .sgl import FitDiagnostics


@dataclass
class VarConfig:
    lam_d: float = 0.0
    max_iters: int = 500
    tol: float = 1e-6
    step_halving_max: int = 20
    kkt_tol: float = 1e-4

    def __post_init__(self):
        if self.lam_d < 0:
            raise InputError("lam_d must be nonnegative")


@dataclass
class ResidualMatrix:
    eps_hat: np.ndarray

    @property
    def squared(self) -> np.ndarray:
        return self.eps_hat ** 2


def compute_residuals(dataset: Dataset, phi: PhiTensor) -> ResidualMatrix:
    """``e_i1 = y_i1`` and ``e_it = y_it - sum_{j<t} sum_k phi[t,j,k] x_ik y_ij``."""
    if (dataset.p, dataset.q) != (phi.p, phi.q):
        raise InputError("dataset and phi dimensions differ")
    Yt = np.ascontiguousarray(dataset.Y.T)
    Xt = np.ascontiguousarray(np.vstack([np.ones(dataset.n), dataset.X.T]))
    R = _cd.residuals(Yt, Xt, np.ascontiguousarray(phi.coef))
    eps = np.empty_like(dataset.Y)
    eps[:, 0] = dataset.Y[:, 0]
    eps[:, 1:] = R.T
    return ResidualMatrix(eps)


def _augment(X, n) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(n, -1)
    return np.hstack([np.ones((n, 1)), X])


def _linear(beta, Xa) -> np.ndarray:
    return np.clip(Xa @ beta.T, -EXP_CLAMP, EXP_CLAMP)


def smooth_loss(beta, e2, Xa) -> float:
    mu = np.exp(_linear(beta, Xa))
    return float(np.sum((e2 - mu) ** 2) / (2 * e2.shape[0]))


def _penalty(beta, lam_d) -> float:
    return lam_d * float(np.sum(np.linalg.norm(beta[:, 1:], axis=0)))


def var_objective(beta, residuals: ResidualMatrix, X, cfg: VarConfig) -> float:
    b = beta.coef if isinstance(beta, BetaMatrix) else np.asarray(beta, dtype=float)
    e2 = residuals.squared
    Xa = _augment(X, e2.shape[0])
    return smooth_loss(b, e2, Xa) + _penalty(b, cfg.lam_d)


def _grad_curv(b, e2, Xa, k):
    mu = np.exp(_linear(b, Xa))
    n = e2.shape[0]
    xk = Xa[:, k][:, None]
    g = np.sum((mu - e2) * mu * xk, axis=0) / n
    h = np.sum(2.0 * mu ** 2 * xk ** 2, axis=0) / n
    return g, h


def mm_gradient_curvature(beta, residuals: ResidualMatrix, X, t: int, k: int):
    """``(g[t,k], h*[t,k])`` at the current beta; ``t`` is 1-based."""
    b = beta.coef if isinstance(beta, BetaMatrix) else np.asarray(beta, dtype=float)
    e2 = residuals.squared
    g, h = _grad_curv(b, e2, _augment(X, e2.shape[0]), k)
    return float(g[t - 1]), float(h[t - 1])


def group_prox(z, h, lam_d) -> np.ndarray:
    """argmin_b sum_t h_t/2 (b_t - z_t)^2 + lam_d ||b||_2 for h_t > 0.

    The minimizer is ``b_t = h_t z_t / (h_t + s)`` where ``s = lam_d/||b||``
    solves a monotone scalar equation.
    """
    hz = h * z
    if np.linalg.norm(hz) <= lam_d:
        return np.zeros_like(z)
    if lam_d == 0.0:
        return z.copy()

    def F(s):
        return np.sum((hz * s / (h + s)) ** 2) - lam_d ** 2

    hi = max(float(np.max(h)), 1e-300)
    while F(hi) <= 0:
        hi *= 2.0
    s = brentq(F, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return hz / (h + s)


def initial_beta(e2, q) -> np.ndarray:
    b = np.zeros((e2.shape[1], q + 1))
    b[:, 0] = np.log(e2.mean(axis=0) + 1e-8)
    return b


def var_kkt_violation(b, e2, Xa, lam_d) -> float:
    worst = 0.0
    for k in range(Xa.shape[1]):
        g, h = _grad_curv(b, e2, Xa, k)
        live = h > 0
        if k == 0:
            worst = max(worst, float(np.max(np.abs(g[live]), initial=0.0)))
            continue
        nrm = np.linalg.norm(b[:, k])
        if nrm == 0.0:
            worst = max(worst, float(np.linalg.norm(g[live])) - lam_d)
        else:
            worst = max(worst, float(np.linalg.norm(g + lam_d * b[:, k] / nrm)))
    return max(worst, 0.0)


def fit_variance(residuals: ResidualMatrix, X, cfg: VarConfig, warm_start: BetaMatrix | None = None):
    """Blockwise MM fit; returns ``(BetaMatrix, FitDiagnostics)``.

    Covariates are centered internally; the intercept is unpenalized so this
    is an exact reparameterization and only speeds up the block cycle.
    """
    e2 = residuals.squared
    if not np.all(np.isfinite(e2)):
        raise InputError("non-finite residuals")
    n, p = e2.shape
    Xa = _augment(X, n)
    q = Xa.shape[1] - 1
    center = Xa[:, 1:].mean(axis=0)
    Xc = Xa.copy()
    Xc[:, 1:] -= center
    b = warm_start.coef.copy() if warm_start is not None else initial_beta(e2, q)
    b[:, 0] += b[:, 1:] @ center
    b = np.ascontiguousarray(b)
    e2c = np.ascontiguousarray(e2)
    Xc = np.ascontiguousarray(Xc)
    eta = Xc @ b.T
    mu = np.exp(np.clip(eta, -EXP_CLAMP, EXP_CLAMP))
    cur = _mm.objective(e2c, mu, b, float(cfg.lam_d))
    trace = [cur]
    converged = False
    it = 0
    tol = cfg.tol
    while it < cfg.max_iters:
        it += 1
        start = cur
        cur = _mm.cycle(e2c, Xc, b, eta, mu, float(cfg.lam_d), int(cfg.step_halving_max), cur)
        trace.append(cur)
        if (start - cur) <= tol * max(abs(start), 1e-300):
            if var_kkt_violation(b, e2, Xc, cfg.lam_d) <= cfg.kkt_tol:
                converged = True
                break
            if start == cur:
                break
            tol = max(tol * 1e-2, 1e-16)
    b[:, 0] -= b[:, 1:] @ center
    kkt = var_kkt_violation(b, e2, Xa, cfg.lam_d)
    diag = FitDiagnostics(sweeps_run=it, objective_trace=np.asarray(trace), converged=converged,
                          kkt_violation=kkt)
    return BetaMatrix(p, q, b), diag


def lambda_d_max(residuals: ResidualMatrix, X) -> float:
    """Smallest lam_d keeping every covariate block at zero (intercepts fitted)."""
    e2 = residuals.squared
    Xa = _augment(X, e2.shape[0])
    b = initial_beta(e2, Xa.shape[1] - 1)
    b[:, 0] = np.log(e2.mean(axis=0) + 1e-300)
    out = 0.0
    for k in range(1, Xa.shape[1]):
        g, _ = _grad_curv(b, e2, Xa, k)
        out = max(out, float(np.linalg.norm(g)))
    return out
