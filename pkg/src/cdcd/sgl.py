"""Blockwise coordinate descent for the sparse-group-lasso Cholesky objective.

Minimizes over the slices ``Phi_0, ..., Phi_q``::

    1/(2n) ||Y[:, 2:p] - sum_k (Y[:, 1:p-1] o X_k) Phi_k||_F^2
        + lam * sum_{k>=0} ||Phi_k||_1 + lam_g * sum_{k>=1} ||Phi_k||_F

Slice 0 (population level) carries no group penalty.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _cd
from .model import Dataset, InputError, PhiTensor


@dataclass
class SglConfig:
    lam: float = 0.0
    lam_g: float = 0.0
    max_sweeps: int = 500
    tol: float = 1e-6
    active_set_refresh: int = 10
    kkt_tol: float = 1e-6  # stopping gate; the certificate bound is 1e-4

    def __post_init__(self):
        if self.lam < 0 or self.lam_g < 0:
            raise InputError("penalties must be nonnegative")
        if self.tol <= 0:
            raise InputError("tol must be positive")
        if self.max_sweeps < 1:
            raise InputError("max_sweeps must be >= 1")


@dataclass
class FitDiagnostics:
    sweeps_run: int
    objective_trace: np.ndarray
    converged: bool
    kkt_violation: float
    degenerate: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "sweeps_run": int(self.sweeps_run),
            "converged": bool(self.converged),
            "kkt_violation": float(self.kkt_violation),
            "final_objective": float(self.objective_trace[-1]) if len(self.objective_trace) else None,
        }


class InteractionDesign:
    """Interaction regressors ``Y_j o X_k`` of a demeaned dataset.

    ``x_aug`` has a leading column of ones (the population slice) and
    ``norms[j, k] = ||Y_j o X_k||^2 / n`` for ``j = 1..p-1``.
    """

    def __init__(self, Y, X):
        Y = np.asarray(Y, dtype=float)
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if Y.shape[0] != X.shape[0]:
            raise InputError("Y and X row counts differ")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise InputError("non-finite data")
        self.n, self.p = Y.shape
        self.q = X.shape[1]
        if self.p < 2:
            raise InputError("need p >= 2")
        self.y = Y
        self.x_aug = np.hstack([np.ones((self.n, 1)), X])
        self.y_lag = Y[:, :-1]
        self.y_resp = Y[:, 1:]
        self.Yt = np.ascontiguousarray(Y.T)
        self.Xt = np.ascontiguousarray(self.x_aug.T)
        self.norms = np.ascontiguousarray((self.y_lag ** 2).T @ (self.x_aug ** 2) / self.n)
        self._lipschitz = None

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "InteractionDesign":
        return cls(dataset.Y, dataset.X)

    def block(self, k: int) -> np.ndarray:
        """The n x (p-1) matrix ``Y[:, 1:p-1] o X_k``."""
        return self.y_lag * self.x_aug[:, [k]]

    @property
    def lipschitz(self) -> np.ndarray:
        if self._lipschitz is None:
            L = np.empty(self.q + 1)
            for k in range(self.q + 1):
                Z = self.block(k)
                L[k] = np.linalg.eigvalsh(Z.T @ Z / self.n)[-1]
            self._lipschitz = L
        return self._lipschitz

    def gradient(self, phi: PhiTensor) -> np.ndarray:
        """Negative loss gradient ``(Y o X_k)^T R / n`` for every slice, masked."""
        return self.cross(self.residual(phi)) * phi.mask()[None]

    def cross(self, R) -> np.ndarray:
        """``(Y[:, 1:p-1] o X_k)^T R / n`` stacked over k, shape (q+1, p-1, p-1)."""
        W = (self.x_aug[:, :, None] * self.y_lag[:, None, :]).reshape(self.n, -1)
        return (W.T @ R).reshape(self.q + 1, self.p - 1, -1) / self.n

    def residual(self, phi: PhiTensor) -> np.ndarray:
        """n x (p-1) residual of the sequential regressions."""
        return _cd.residuals(self.Yt, self.Xt, np.ascontiguousarray(phi.coef)).T


def soft_threshold(a, lam):
    return np.sign(a) * np.maximum(np.abs(a) - lam, 0.0)


def _as_design(data) -> InteractionDesign:
    if isinstance(data, InteractionDesign):
        return data
    if isinstance(data, Dataset):
        return InteractionDesign.from_dataset(data)
    raise InputError("expected a Dataset or InteractionDesign")


def objective(phi: PhiTensor, design, y_resp=None, cfg: SglConfig | None = None) -> float:
    design = _as_design(design)
    cfg = cfg or SglConfig()
    if (phi.p, phi.q) != (design.p, design.q):
        raise InputError("phi and design dimensions differ")
    if y_resp is None:
        y_resp = design.y_resp
    fit = sum(design.block(k) @ phi.coef[k] for k in range(phi.q + 1))
    loss = np.sum((np.asarray(y_resp) - fit) ** 2) / (2 * design.n)
    pen = cfg.lam * np.abs(phi.coef).sum()
    pen += cfg.lam_g * sum(np.linalg.norm(phi.coef[k]) for k in range(1, phi.q + 1))
    return float(loss + pen)


def group_zero_check(k: int, partial_residual, design, cfg: SglConfig) -> bool:
    """True when the slice-k block may be set to zero.

    ``partial_residual`` is ``R_k``, the n x (p-1) residual with slice k's
    own contribution removed.
    """
    design = _as_design(design)
    if k < 1:
        raise InputError("the group check applies to slices k >= 1")
    B = design.block(k).T @ np.asarray(partial_residual) / design.n
    S = soft_threshold(np.triu(B), cfg.lam)
    return bool(np.linalg.norm(S) <= cfg.lam_g)


def update_entry(t: int, j: int, k: int, partial_residual_vector, design, phi_k_frobenius: float,
                 cfg: SglConfig) -> float:
    """Coordinate minimizer for ``phi[t, j, k]`` given ``R_{t,j,k}``.

    ``phi_k_frobenius`` is the norm of the rest of slice k (excluding this
    entry); the returned value satisfies the fixed-point update with the
    slice norm including the new value.  Degenerate (all-zero) regressors
    give 0.
    """
    design = _as_design(design)
    z = design.y_lag[:, j - 1] * design.x_aug[:, k]
    a = float(z @ z) / design.n
    if a <= 0.0:
        return 0.0
    b = float(z @ np.asarray(partial_residual_vector)) / design.n
    lam_g = cfg.lam_g if k > 0 else 0.0
    return float(_cd.coord_min(a, b, cfg.lam, lam_g, float(phi_k_frobenius) ** 2))


def kkt_violation(phi: PhiTensor, design, cfg: SglConfig) -> float:
    """Largest violation of the sparse-group-lasso stationarity conditions."""
    design = _as_design(design)
    G = design.gradient(phi)
    mask = phi.mask()
    active = design.norms.T[:, :, None] * np.ones_like(phi.coef) > 0
    worst = 0.0
    for k in range(phi.q + 1):
        Pk = phi.coef[k]
        Gk = G[k]
        ok = mask & active[k]
        gnorm = np.linalg.norm(Pk)
        if k > 0 and gnorm == 0.0:
            worst = max(worst, np.linalg.norm(soft_threshold(Gk[ok], cfg.lam)) - cfg.lam_g)
            continue
        nz = ok & (Pk != 0)
        z = ok & (Pk == 0)
        stat = -Gk[nz] + cfg.lam * np.sign(Pk[nz])
        if k > 0:
            stat = stat + cfg.lam_g * Pk[nz] / gnorm
        if stat.size:
            worst = max(worst, float(np.max(np.abs(stat))))
        if z.any():
            worst = max(worst, float(np.max(np.abs(Gk[z]))) - cfg.lam)
    return max(worst, 0.0)


def fit(data, cfg: SglConfig, warm_start: PhiTensor | None = None):
    """Fit the Cholesky-factor coefficients; returns ``(PhiTensor, FitDiagnostics)``.

    ``data`` is a demeaned :class:`Dataset` or a prebuilt
    :class:`InteractionDesign` (reuse it along a tuning path).
    """
    design = _as_design(data)
    if design.n < 2:
        raise InputError("need n >= 2")
    phi = warm_start.copy() if warm_start is not None else PhiTensor(design.p, design.q)
    if (phi.p, phi.q) != (design.p, design.q):
        raise InputError("warm start dimensions differ from data")
    coef = np.ascontiguousarray(phi.coef)
    degenerate = np.argwhere(design.norms == 0)
    for j, k in degenerate:
        coef[k, j, :] = 0.0
    R = _cd.residuals(design.Yt, design.Xt, coef)
    # the relative-objective rule alone can stop short of the KKT certificate;
    # tighten it until both hold or the sweep budget runs out
    traces = []
    sweeps_total = 0
    tol = float(cfg.tol)
    converged = False
    while sweeps_total < cfg.max_sweeps:
        budget = cfg.max_sweeps - sweeps_total
        trace = np.empty(budget + 1)
        sweeps, conv, nt = _cd.run(
            design.Yt, design.Xt, coef, R, design.norms, design.lipschitz,
            float(cfg.lam), float(cfg.lam_g), int(budget), tol,
            int(cfg.active_set_refresh), trace,
        )
        traces.append(trace[:nt] if not traces else trace[1:nt])
        sweeps_total += sweeps
        phi = PhiTensor(design.p, design.q, coef)
        kkt = kkt_violation(phi, design, cfg)
        if conv and kkt <= cfg.kkt_tol:
            converged = True
            break
        if tol < 1e-15:
            break
        tol *= 1e-2
    phi = PhiTensor(design.p, design.q, coef)
    diag = FitDiagnostics(
        sweeps_run=int(sweeps_total),
        objective_trace=np.concatenate(traces),
        converged=converged,
        kkt_violation=kkt,
        degenerate=[(int(j) + 1, int(k)) for j, k in degenerate],
    )
    return phi, diag


def lambda_max(data) -> tuple[float, float]:
    """``(lam_max_elem, lam_g_max)`` at which the all-zero fit is optimal.

    The first is the largest ``|(Y_j o X_k)^T Y_t| / n`` over valid
    ``(t, j, k)``; the second the largest ``||vech[(Y o X_k)^T Y_{2:p}] / n||``
    over ``k >= 1``.
    """
    design = _as_design(data)
    B = zero_gradient(design)
    lam_elem = float(np.max(np.abs(B))) if B.size else 0.0
    lam_g = float(max((np.linalg.norm(B[k]) for k in range(1, design.q + 1)), default=0.0))
    return lam_elem, lam_g


def zero_gradient(design: InteractionDesign) -> np.ndarray:
    """Gradient blocks ``(Y o X_k)^T Y_{2:p} / n`` at phi = 0, masked."""
    mask = np.triu(np.ones((design.p - 1, design.p - 1), dtype=bool))
    return design.cross(design.y_resp) * mask[None]
