"""Covariate-dependent Cholesky parameterization and per-subject assembly.

The Cholesky factor of subject ``x`` is ``T(x) = T_0 + sum_k x_k T_k`` with
``{T(x)}_{tj} = -(phi[t,j,0] + sum_k phi[t,j,k] x_k)`` for ``j < t`` and the
prediction-error variances are ``log sigma_t^2(x) = beta[t,0] + sum_k
beta[t,k] x_k``.  Indices ``t, j`` are 1-based in the public accessors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.linalg import solve_triangular

EXP_CLAMP = 30.0


class InputError(ValueError):
    """Invalid user input (shapes, non-finite values, bad parameters)."""


def _as_covariates(x, q: int) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != q:
        raise InputError(f"covariate vector has length {x.shape[0]}, expected {q}")
    if not np.all(np.isfinite(x)):
        raise InputError("covariate vector contains non-finite values")
    return x


class PhiTensor:
    """Cholesky-factor coefficients ``phi[t, j, k]`` for ``1 <= j < t <= p``.

    Stored densely as ``coef[k, j-1, t-2]``, i.e. ``coef[k]`` is the
    ``(p-1) x (p-1)`` upper-triangular matrix of slice ``k``.  Slice 0 holds
    the population-level (intercept) coefficients.
    """

    def __init__(self, p: int, q: int, coef: np.ndarray | None = None):
        if p < 1 or q < 0:
            raise InputError("need p >= 1 and q >= 0")
        self.p = int(p)
        self.q = int(q)
        m = max(self.p - 1, 0)
        if coef is None:
            coef = np.zeros((self.q + 1, m, m))
        else:
            coef = np.array(coef, dtype=float)
            if coef.shape != (self.q + 1, m, m):
                raise InputError(f"coef has shape {coef.shape}, expected {(self.q + 1, m, m)}")
            coef = coef * self.mask()[None]
        self.coef = coef

    def mask(self) -> np.ndarray:
        m = max(self.p - 1, 0)
        return np.triu(np.ones((m, m), dtype=bool))

    @property
    def size(self) -> int:
        return self.p * (self.p - 1) // 2 * (self.q + 1)

    def _check(self, t: int, j: int, k: int) -> None:
        if not (1 <= j < t <= self.p):
            raise IndexError(f"phi[{t},{j},{k}] is not a strictly lower-triangular position")
        if not (0 <= k <= self.q):
            raise IndexError(f"slice k={k} outside 0..{self.q}")

    def __getitem__(self, idx) -> float:
        t, j, k = idx
        self._check(t, j, k)
        return float(self.coef[k, j - 1, t - 2])

    def __setitem__(self, idx, value: float) -> None:
        t, j, k = idx
        self._check(t, j, k)
        self.coef[k, j - 1, t - 2] = value

    def copy(self) -> "PhiTensor":
        return PhiTensor(self.p, self.q, self.coef.copy())

    def vector(self) -> np.ndarray:
        """Flatten to the ``p(p-1)/2 * (q+1)`` free coordinates (slice-major)."""
        return self.coef[:, self.mask()].reshape(-1)

    def support(self) -> set[tuple[int, int, int]]:
        ks, js, cs = np.nonzero(self.coef)
        return {(int(c) + 2, int(j) + 1, int(k)) for k, j, c in zip(ks, js, cs)}

    def nnz(self) -> int:
        return int(np.count_nonzero(self.coef))

    def t_slice(self, k: int) -> np.ndarray:
        """The ``p x p`` matrix ``T_k`` (unit diagonal only for ``k = 0``)."""
        T = np.zeros((self.p, self.p))
        T[1:, :-1] = -self.coef[k].T
        if k == 0:
            T[np.diag_indices(self.p)] = 1.0
        return T

    def triplets(self) -> list[list]:
        return [[t, j, k, float(self.coef[k, j - 1, t - 2])] for t, j, k in sorted(self.support())]

    @classmethod
    def from_triplets(cls, p: int, q: int, triplets) -> "PhiTensor":
        phi = cls(p, q)
        for t, j, k, v in triplets:
            phi[int(t), int(j), int(k)] = float(v)
        return phi


class BetaMatrix:
    """Log-variance coefficients ``beta[t, k]``, ``t = 1..p``, ``k = 0..q``."""

    def __init__(self, p: int, q: int, coef: np.ndarray | None = None):
        self.p = int(p)
        self.q = int(q)
        if coef is None:
            coef = np.zeros((self.p, self.q + 1))
        coef = np.array(coef, dtype=float)
        if coef.shape != (self.p, self.q + 1):
            raise InputError(f"beta has shape {coef.shape}, expected {(self.p, self.q + 1)}")
        if not np.all(np.isfinite(coef)):
            raise InputError("beta contains non-finite values")
        self.coef = coef

    def __getitem__(self, idx) -> float:
        t, k = idx
        return float(self.coef[t - 1, k])

    def __setitem__(self, idx, value: float) -> None:
        t, k = idx
        self.coef[t - 1, k] = value

    def copy(self) -> "BetaMatrix":
        return BetaMatrix(self.p, self.q, self.coef.copy())


@dataclass
class SubjectCov:
    sigma: np.ndarray
    precision: np.ndarray
    t_matrix: np.ndarray
    d_diag: np.ndarray

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma)[0])


@dataclass
class Dataset:
    """Responses ``Y`` (n x p) and covariates ``X`` (n x q).

    ``truth`` optionally carries simulation ground truth (see
    :mod:`cdcd.simulate`).
    """

    Y: np.ndarray
    X: np.ndarray
    y_names: list[str] | None = None
    x_names: list[str] | None = None
    truth: Any = None

    def __post_init__(self):
        self.Y = np.asarray(self.Y, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        if self.Y.ndim != 2 or self.X.ndim != 2:
            raise InputError("Y and X must be 2-d")
        if self.Y.shape[0] != self.X.shape[0]:
            raise InputError(f"Y has {self.Y.shape[0]} rows but X has {self.X.shape[0]}")
        if not (np.all(np.isfinite(self.Y)) and np.all(np.isfinite(self.X))):
            raise InputError("data contain non-finite values")
        if self.y_names is None:
            self.y_names = [f"y{i + 1}" for i in range(self.p)]
        if self.x_names is None:
            self.x_names = [f"x{i + 1}" for i in range(self.q)]

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def p(self) -> int:
        return self.Y.shape[1]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.Y[rows], self.X[rows], self.y_names, self.x_names)


@dataclass
class CholeskyModel:
    phi: PhiTensor
    beta: BetaMatrix
    column_means: np.ndarray | None = None
    hyperparams: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.phi.p, self.phi.q) != (self.beta.p, self.beta.q):
            raise InputError("phi and beta disagree on (p, q)")
        if self.column_means is None:
            self.column_means = np.zeros(self.p)
        self.column_means = np.asarray(self.column_means, dtype=float)

    @property
    def p(self) -> int:
        return self.phi.p

    @property
    def q(self) -> int:
        return self.phi.q

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "column_means": [float(v) for v in self.column_means],
            "phi": self.phi.triplets(),
            "beta": [
                [int(t) + 1, int(k), float(self.beta.coef[t, k])]
                for t, k in zip(*np.nonzero(self.beta.coef))
            ],
            "hyperparams": self.hyperparams,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CholeskyModel":
        p, q = int(doc["p"]), int(doc["q"])
        phi = PhiTensor.from_triplets(p, q, doc.get("phi", []))
        beta = BetaMatrix(p, q)
        for t, k, v in doc.get("beta", []):
            beta[int(t), int(k)] = float(v)
        return cls(phi, beta, np.asarray(doc.get("column_means", np.zeros(p)), dtype=float),
                   dict(doc.get("hyperparams", {})), dict(doc.get("diagnostics", {})))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "CholeskyModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def build_T(model: CholeskyModel, x) -> np.ndarray:
    x = _as_covariates(x, model.q)
    w = np.concatenate(([1.0], x))
    f = np.tensordot(w, model.phi.coef, axes=1)  # f[j-1, t-2]
    T = np.eye(model.p)
    T[1:, :-1] -= np.triu(f).T
    return T


def build_D(model: CholeskyModel, x) -> np.ndarray:
    x = _as_covariates(x, model.q)
    eta = model.beta.coef[:, 0] + model.beta.coef[:, 1:] @ x
    return np.exp(np.clip(eta, -EXP_CLAMP, EXP_CLAMP))


def assemble(model: CholeskyModel, x) -> SubjectCov:
    """Subject covariance ``T^{-1} D T^{-T}`` and precision ``T^T D^{-1} T``."""
    T = build_T(model, x)
    d = build_D(model, x)
    precision = T.T @ (T / d[:, None])
    # sigma = T^{-1} (T^{-1} D)^T, two unit-triangular solves
    left = solve_triangular(T, np.diag(d), lower=True, unit_diagonal=True)
    sigma = solve_triangular(T, left.T, lower=True, unit_diagonal=True)
    sigma = 0.5 * (sigma + sigma.T)
    precision = 0.5 * (precision + precision.T)
    assert np.all(d > 0)
    return SubjectCov(sigma, precision, T, d)


def column_means(Y) -> np.ndarray:
    return np.asarray(Y, dtype=float).mean(axis=0)


def predict_mean_adjust(model: CholeskyModel, y_raw) -> np.ndarray:
    y_raw = np.atleast_2d(np.asarray(y_raw, dtype=float))
    if y_raw.shape[1] != model.p:
        raise InputError(f"responses have {y_raw.shape[1]} columns, model has p={model.p}")
    return y_raw - model.column_means
