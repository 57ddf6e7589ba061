"""End-to-end CDCD fit: tune, fit the Cholesky factor, then the log-variances."""
from __future__ import annotations

import logging
import time

import numpy as np

from . import sgl, tuning, variance
from .model import BetaMatrix, CholeskyModel, Dataset, PhiTensor

log = logging.getLogger(__name__)


def _standardize(Yc, X):
    y_scale = Yc.std(axis=0)
    y_scale[y_scale == 0] = 1.0
    x_center = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale[x_scale == 0] = 1.0
    return Yc / y_scale, (X - x_center) / x_scale, y_scale, x_center, x_scale


def to_raw_scale(phi: PhiTensor, beta: BetaMatrix, y_scale, x_center, x_scale):
    """Map coefficients fitted on standardized (Y, X) back to raw units.

    With ``S = diag(y_scale)`` the raw factor is ``S T_s S^{-1}`` and the raw
    variances are ``S^2 D_s``; the covariate affine map folds into slice 0.
    """
    p, q = phi.p, phi.q
    ratio = y_scale[None, 1:] / y_scale[:-1, None]  # [j, c] -> s_t / s_j, t = c + 2
    slopes = phi.coef[1:] / x_scale[:, None, None] * ratio[None]
    coef = np.empty_like(phi.coef)
    coef[1:] = slopes
    coef[0] = phi.coef[0] * ratio - np.tensordot(x_center, slopes, axes=1)
    b = beta.coef
    braw = np.empty_like(b)
    braw[:, 1:] = b[:, 1:] / x_scale
    braw[:, 0] = b[:, 0] + 2 * np.log(y_scale) - braw[:, 1:] @ x_center
    return PhiTensor(p, q, coef), BetaMatrix(p, q, braw)


def fit_cdcd(dataset: Dataset, lam=None, lam_g=None, lam_d=None, folds: int = 5, seed=0,
             standardize: bool = False, alphas=None, n_lambda0: int = 30, cap="default",
             solver_kw: dict | None = None, var_kw: dict | None = None):
    """Fit a :class:`CholeskyModel`; returns ``(model, cv_report or None)``.

    Penalties left as ``None`` are chosen by cross-validation.  ``cap`` is the
    support bound on tuning candidates (``"default"`` uses
    :func:`tuning.default_cap`, ``None`` disables it).
    """
    t0 = time.perf_counter()
    means = dataset.Y.mean(axis=0)
    Yc = dataset.Y - means
    X = dataset.X
    if standardize:
        Yw, Xw, y_scale, x_center, x_scale = _standardize(Yc, X)
    else:
        Yw, Xw = Yc, X
    work = Dataset(Yw, Xw, dataset.y_names, dataset.x_names)
    report = grid = None
    if lam is None or lam_g is None:
        if cap == "default":
            cap = tuning.default_cap(dataset.n, dataset.p, dataset.q)
        grid = tuning.build_grid(work, alphas=alphas, n_lambda0=n_lambda0, cap=cap)
        report = tuning.cross_validate(work, grid, folds=folds, seed=seed)
        phi, sdiag = tuning.fit_selected(work, report, grid, solver_kw)
        lam, lam_g = report.lam, report.lam_g
    else:
        phi, sdiag = sgl.fit(work, sgl.SglConfig(lam=float(lam), lam_g=float(lam_g), **(solver_kw or {})))
    t1 = time.perf_counter()
    residuals = variance.compute_residuals(work, phi)
    if lam_d is None:
        lam_d, vgrid, vloss = tuning.cross_validate_variance(residuals, Xw, folds=folds, seed=seed)
        if report is not None:
            report.lam_d, report.var_grid, report.var_mean_loss = lam_d, list(vgrid), list(vloss)
    beta, vdiag = variance.fit_variance(residuals, Xw, variance.VarConfig(lam_d=float(lam_d), **(var_kw or {})))
    t2 = time.perf_counter()
    if standardize:
        phi_raw, beta_raw = to_raw_scale(phi, beta, y_scale, x_center, x_scale)
    else:
        phi_raw, beta_raw = phi, beta
    hyper = {"lambda": float(lam), "lambda_g": float(lam_g), "lambda_d": float(lam_d),
             "standardized": bool(standardize)}
    if report is not None:
        hyper.update(alpha=report.selected_alpha, lambda0=report.selected_lambda0, folds=folds, seed=seed)
    diagnostics = {
        "cholesky": sdiag.as_dict(),
        "variance": vdiag.as_dict(),
        "cholesky_objective_monotone": bool(np.all(np.diff(sdiag.objective_trace) <= 1e-10)),
        "variance_objective_monotone": bool(np.all(np.diff(vdiag.objective_trace) <= 1e-10)),
        "phi_nonzeros": phi_raw.nnz(),
        "selected_covariates": [int(k) for k in range(1, phi.q + 1) if np.any(phi.coef[k])],
        "variance_covariates": [int(k) for k in range(1, phi.q + 1) if np.any(beta.coef[:, k])],
        "seconds": {"cholesky": t1 - t0, "variance": t2 - t1},
    }
    if standardize:
        diagnostics["standardized_phi_nonzeros"] = phi.nnz()
    log.info("fit done: lam=%.4g lam_g=%.4g lam_d=%.4g nnz=%d", lam, lam_g, lam_d, phi.nnz())
    model = CholeskyModel(phi_raw, beta_raw, means, hyper, diagnostics)
    return model, report
