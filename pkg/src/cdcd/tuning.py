"""Cross-validated selection of (lam, lam_g) and lam_d.

The Cholesky penalties are parameterized as ``lam = alpha * lam0`` and
``lam_g = (1 - alpha) * lam0``; for each alpha a log-spaced lam0 path runs
from the smallest value giving the empty model downwards.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import sgl, variance
from .model import Dataset, InputError, PhiTensor

log = logging.getLogger(__name__)

DEFAULT_ALPHAS = (0.05, 0.25, 0.5, 0.75, 0.95)


@dataclass
class TuningGrid:
    alphas: np.ndarray
    lambda0: list  # one strictly decreasing array per alpha
    s_lambda_cap: int | None = None

    def candidates(self):
        for a_idx, alpha in enumerate(self.alphas):
            for l_idx, lam0 in enumerate(self.lambda0[a_idx]):
                yield a_idx, l_idx, float(alpha), float(lam0)


@dataclass
class CvReport:
    alphas: list
    lambda0: list
    mean_loss: np.ndarray  # (n_alpha, n_lambda0), NaN where infeasible
    se_loss: np.ndarray
    support: np.ndarray    # max support size over folds
    feasible: np.ndarray
    selected_alpha: float
    selected_lambda0: float
    lam: float
    lam_g: float
    folds: np.ndarray
    lam_d: float | None = None
    var_grid: list = field(default_factory=list)
    var_mean_loss: list = field(default_factory=list)

    def to_json(self) -> dict:
        def clean(a):
            return [[None if not np.isfinite(v) else float(v) for v in row] for row in np.atleast_2d(a)]

        return {
            "alphas": [float(a) for a in self.alphas],
            "lambda0": [[float(v) for v in row] for row in self.lambda0],
            "mean_loss": clean(self.mean_loss),
            "se_loss": clean(self.se_loss),
            "support": self.support.astype(int).tolist(),
            "feasible": self.feasible.astype(bool).tolist(),
            "selected": {"alpha": self.selected_alpha, "lambda0": self.selected_lambda0,
                         "lambda": self.lam, "lambda_g": self.lam_g, "lambda_d": self.lam_d},
            "folds": self.folds.astype(int).tolist(),
            "var_grid": [float(v) for v in self.var_grid],
            "var_mean_loss": [None if not np.isfinite(v) else float(v) for v in self.var_mean_loss],
        }


def default_cap(n: int, p: int, q: int) -> int:
    """Support bound on tuning candidates: at most ``5 n`` nonzeros."""
    return 5 * int(n)


def scaling_cap(n: int, p: int, q: int, c: float = 10.0) -> int:
    """``floor(c * sqrt(n) / max(log p, log q))``, the sqrt(n) sparsity scaling.

    Much tighter than :func:`default_cap`; it can fall below the true support
    at moderate n, so it is opt-in.
    """
    scale = max(math.log(max(p, 2)), math.log(max(q, 2)))
    return int(math.floor(c * math.sqrt(n) / scale))


def lambda0_max(zero_grad: np.ndarray, alpha: float) -> float:
    """Smallest lam0 at which every slice (including slice 0) is zero."""
    if not 0 < alpha <= 1:
        raise InputError("alpha must lie in (0, 1]")
    out = float(np.max(np.abs(zero_grad[0]))) / alpha if zero_grad[0].size else 0.0
    for k in range(1, zero_grad.shape[0]):
        B = zero_grad[k]
        top = float(np.max(np.abs(B)))
        if top == 0.0:
            continue
        if alpha == 1.0:
            out = max(out, top)
            continue

        def gap(l0):
            return np.linalg.norm(sgl.soft_threshold(B, alpha * l0)) - (1 - alpha) * l0

        out = max(out, brentq(gap, 0.0, top / alpha, xtol=1e-14 * top, rtol=1e-14))
    return out


def build_grid(data, n_alphas: int | None = None, n_lambda0: int = 30, cap: int | None = None,
               alphas=None, eps: float = 1e-3) -> TuningGrid:
    """Per-alpha lam0 paths from the empty model downwards.

    Without a cap each path spans ``[eps * lam0_max, lam0_max]``.  With a cap
    the lower end is the first point of that coarse path whose full-data fit
    exceeds ``cap`` nonzeros, so the grid covers the empty-to-``cap`` range.
    """
    design = sgl._as_design(data)
    if alphas is None:
        alphas = DEFAULT_ALPHAS if n_alphas is None else np.linspace(0.05, 0.95, n_alphas)
    alphas = np.sort(np.asarray(alphas, dtype=float))
    B = sgl.zero_gradient(design)
    paths = []
    for alpha in alphas:
        top = lambda0_max(B, alpha)
        if top <= 0:
            paths.append(np.array([0.0]))
            continue
        coarse = np.geomspace(top, eps * top, n_lambda0)
        low = coarse[-1]
        if cap is not None:
            phi = None
            for lam0 in coarse[1:]:
                cfg = sgl.SglConfig(lam=alpha * lam0, lam_g=(1 - alpha) * lam0, tol=1e-5, kkt_tol=1e-3)
                phi, _ = sgl.fit(design, cfg, warm_start=phi)
                if phi.nnz() > cap:
                    low = lam0
                    break
        paths.append(np.geomspace(top, low, n_lambda0))
    return TuningGrid(alphas, paths, cap)


def fold_assignment(n: int, folds: int, seed) -> np.ndarray:
    if folds < 2:
        raise InputError("need at least 2 folds")
    if n < 2 * folds:
        raise InputError(f"{n} subjects cannot fill {folds} folds of at least 2")
    rng = np.random.default_rng(seed)
    return rng.permutation(n) % folds


def _centered_split(Y, X, train, val):
    means = Y[train].mean(axis=0)
    return (Y[train] - means, X[train]), (Y[val] - means, X[val])


def validation_loss(phi: PhiTensor, Y_val, X_val) -> float:
    """``(1/2 n_val) ||Y_val residual||_F^2`` of the sequential regressions."""
    design = sgl.InteractionDesign(Y_val, X_val)
    R = design.residual(phi)
    return float(np.sum(R ** 2) / (2 * Y_val.shape[0]))


def _path_fits(design, alpha, path, cfg_kw, cap, on_fit):
    phi = None
    for l_idx, lam0 in enumerate(path):
        cfg = sgl.SglConfig(lam=alpha * lam0, lam_g=(1 - alpha) * lam0, **cfg_kw)
        phi, _ = sgl.fit(design, cfg, warm_start=phi)
        on_fit(l_idx, phi)
        if cap is not None and phi.nnz() > cap:
            return


def cross_validate(dataset: Dataset, grid: TuningGrid, folds: int = 5, seed=0,
                   solver_kw: dict | None = None) -> CvReport:
    """L-fold CV over the (alpha, lam0) grid with warm starts along each path.

    ``dataset`` must already be centered; each fold is re-centered with its
    training means.
    """
    Y, X = dataset.Y, dataset.X
    n = Y.shape[0]
    assign = fold_assignment(n, folds, seed)
    cfg_kw = {"tol": 1e-5, "kkt_tol": 1e-3}
    cfg_kw.update(solver_kw or {})
    n_a = len(grid.alphas)
    n_l = max(len(p) for p in grid.lambda0)
    loss = np.full((folds, n_a, n_l), np.nan)
    support = np.zeros((n_a, n_l), dtype=int)
    infeasible = np.zeros((n_a, n_l), dtype=bool)
    for f in range(folds):
        (Ytr, Xtr), (Yva, Xva) = _centered_split(Y, X, assign != f, assign == f)
        if Yva.shape[0] < 2:
            raise InputError("validation fold with fewer than 2 subjects")
        design = sgl.InteractionDesign(Ytr, Xtr)
        val_design = sgl.InteractionDesign(Yva, Xva)
        for a_idx, alpha in enumerate(grid.alphas):
            def record(l_idx, phi, a_idx=a_idx, f=f, val_design=val_design):
                R = val_design.residual(phi)
                loss[f, a_idx, l_idx] = np.sum(R ** 2) / (2 * val_design.n)
                nnz = phi.nnz()
                support[a_idx, l_idx] = max(support[a_idx, l_idx], nnz)
                if grid.s_lambda_cap is not None and nnz > grid.s_lambda_cap:
                    infeasible[a_idx, l_idx:] = True

            _path_fits(design, float(alpha), grid.lambda0[a_idx], cfg_kw, grid.s_lambda_cap, record)
    complete = ~np.isnan(loss).any(axis=0)
    feasible = complete & ~infeasible
    mean = np.where(complete, np.nanmean(np.where(np.isnan(loss), 0, loss), axis=0), np.nan)
    se = np.where(complete, loss.std(axis=0, ddof=1) / math.sqrt(folds), np.nan)
    mean = np.where(feasible, mean, np.nan)
    if feasible.any():
        a_idx, l_idx = _select(mean, grid)
    else:
        # every fold fit exceeds the cap; take the top of the grid, which is
        # the empty model on the full data
        log.warning("no tuning candidate within the support cap; using the largest lambda0")
        a_idx = int(np.argmax([p[0] for p in grid.lambda0]))
        l_idx = 0
    alpha = float(grid.alphas[a_idx])
    lam0 = float(grid.lambda0[a_idx][l_idx])
    return CvReport(
        alphas=[float(a) for a in grid.alphas], lambda0=[np.asarray(p) for p in grid.lambda0],
        mean_loss=mean, se_loss=se, support=support, feasible=feasible,
        selected_alpha=alpha, selected_lambda0=lam0, lam=alpha * lam0, lam_g=(1 - alpha) * lam0,
        folds=assign,
    )


def _select(mean, grid):
    best = np.nanmin(mean)
    ties = np.argwhere(mean <= best + 1e-12 * abs(best))
    # prefer the sparser model: larger lam0, then larger alpha index on exact ties
    lam0 = [grid.lambda0[a][l] for a, l in ties]
    pick = int(np.argmax(lam0))
    return int(ties[pick][0]), int(ties[pick][1])


def fit_selected(dataset: Dataset, report: CvReport, grid: TuningGrid, solver_kw: dict | None = None):
    """Refit on all subjects at the selected penalties, following the alpha path."""
    design = sgl.InteractionDesign(dataset.Y, dataset.X)
    a_idx = int(np.argmin(np.abs(np.asarray(grid.alphas) - report.selected_alpha)))
    path = [l0 for l0 in grid.lambda0[a_idx] if l0 >= report.selected_lambda0 * (1 - 1e-12)]
    phi = None
    loose = {"tol": 1e-5, "kkt_tol": 1e-3}
    for lam0 in path[:-1]:
        cfg = sgl.SglConfig(lam=report.selected_alpha * lam0, lam_g=(1 - report.selected_alpha) * lam0, **loose)
        phi, _ = sgl.fit(design, cfg, warm_start=phi)
    cfg = sgl.SglConfig(lam=report.lam, lam_g=report.lam_g, **(solver_kw or {}))
    return sgl.fit(design, cfg, warm_start=phi)


def var_grid(residuals, X, n_points: int = 12, eps: float = 1e-2) -> np.ndarray:
    top = variance.lambda_d_max(residuals, X)
    if top <= 0:
        return np.array([0.0])
    return np.geomspace(top, eps * top, n_points)


def cross_validate_variance(residuals, X, folds: int = 5, seed=0, grid=None, patience: int = 3,
                            solver_kw: dict | None = None):
    """Select lam_d by L-fold CV on held-out ``(e^2 - exp(x beta))^2`` loss.

    Returns ``(lam_d, grid, mean_losses)``.  The descending path stops once the
    mean loss has risen ``patience`` grid points in a row above its minimum.
    """
    eps = np.asarray(residuals.eps_hat)
    X = np.asarray(X, dtype=float).reshape(eps.shape[0], -1)
    n = eps.shape[0]
    if grid is None:
        grid = var_grid(residuals, X)
    assign = fold_assignment(n, folds, seed)
    kw = {"max_iters": 200, "kkt_tol": 1e-2}
    kw.update(solver_kw or {})
    warm = [None] * folds
    means = []
    worse = 0
    for lam_d in grid:
        fold_loss = []
        for f in range(folds):
            tr, va = assign != f, assign == f
            beta, _ = variance.fit_variance(variance.ResidualMatrix(eps[tr]), X[tr],
                                            variance.VarConfig(lam_d=float(lam_d), **kw), warm[f])
            warm[f] = beta
            fold_loss.append(variance.smooth_loss(beta.coef, eps[va] ** 2,
                                                  np.hstack([np.ones((va.sum(), 1)), X[va]])))
        means.append(float(np.mean(fold_loss)))
        if len(means) > 1 and means[-1] > min(means[:-1]):
            worse += 1
            if worse >= patience:
                break
        else:
            worse = 0
    means = np.asarray(means)
    best = np.flatnonzero(means <= means.min() * (1 + 1e-12))[0]
    return float(grid[best]), np.asarray(grid), means
