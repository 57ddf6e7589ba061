"""Synthetic covariate-dependent covariance designs (AR1, Hub, Random).

Only the first covariate is active: subjects with ``x_1 = 0`` share the
baseline matrix and subjects with ``x_1 = 1`` carry the structure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BetaMatrix, Dataset, InputError, PhiTensor

KINDS = ("ar1", "hub", "random")


@dataclass
class CovarianceStructure:
    kind: str
    p: int
    rho: float = 0.5
    hub_block: int = 10
    hub_boost: float = 4.5
    edge_fraction: float = 0.05
    edge_value: float = -0.5
    seed: int = 0
    t1_seed: int | None = None  # set to share one T_1 across replicates
    _t1: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.kind = self.kind.lower()
        if self.kind not in KINDS:
            raise InputError(f"unknown structure {self.kind!r}; choose from {KINDS}")
        if self.p < 2:
            raise InputError("need p >= 2")
        if not -1 < self.rho < 1:
            raise InputError("rho must lie in (-1, 1)")
        if self.kind == "hub" and self.p % self.hub_block:
            raise InputError("p must be divisible by hub_block for the hub design")
        if not 0 < self.edge_fraction < 1:
            raise InputError("edge_fraction must lie in (0, 1)")

    @property
    def random_t1(self) -> np.ndarray:
        """Lower-triangular ``T_1`` of the random design, drawn once per seed
        (``t1_seed`` overrides ``seed`` here)."""
        if self._t1 is None:
            rng = np.random.default_rng([self.seed if self.t1_seed is None else self.t1_seed, 1])
            rows, cols = np.tril_indices(self.p, -1)
            n_edges = max(1, int(round(self.edge_fraction * rows.size)))
            pick = rng.choice(rows.size, size=n_edges, replace=False)
            T1 = np.zeros((self.p, self.p))
            T1[rows[pick], cols[pick]] = self.edge_value
            self._t1 = T1
        return self._t1


def _pd_inverse(A) -> np.ndarray:
    L = np.linalg.cholesky(A)
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    inv = Linv.T @ Linv
    return 0.5 * (inv + inv.T)


def sigma_of_x(structure: CovarianceStructure, x) -> tuple[np.ndarray, np.ndarray]:
    """``(Sigma(x), Sigma(x)^{-1})`` for one subject."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x1 = float(x[0])
    p = structure.p
    if structure.kind == "ar1":
        lag = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        sigma = structure.rho ** lag * x1
        np.fill_diagonal(sigma, 1.0)
        omega = _pd_inverse(sigma)
    elif structure.kind == "hub":
        omega = 0.5 * np.eye(p)
        for start in range(0, p, structure.hub_block):
            omega[start, start] += structure.hub_boost * x1
            members = np.arange(start + 1, start + structure.hub_block)
            omega[members, start] = -0.5 * x1
            omega[start, members] = -0.5 * x1
        sigma = _pd_inverse(omega)
    else:
        T = np.eye(p) + x1 * structure.random_t1
        omega = T.T @ T
        Tinv = np.linalg.solve(T, np.eye(p))
        sigma = Tinv @ Tinv.T
    sigma = 0.5 * (sigma + sigma.T)
    assert np.linalg.eigvalsh(sigma)[0] > 0, "non-PD design"
    return sigma, omega


def modified_cholesky(sigma) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(T, d)`` with ``T sigma T^T = diag(d)``, T unit lower triangular."""
    p = sigma.shape[0]
    L = np.linalg.cholesky(sigma)
    dL = np.diag(L)
    Lunit = L / dL
    T = np.linalg.solve(Lunit, np.eye(p))
    T = np.tril(T)
    np.fill_diagonal(T, 1.0)
    return T, dL ** 2


def true_parameters(structure: CovarianceStructure, q: int, zero_tol: float = 1e-10):
    """True ``(PhiTensor, BetaMatrix)`` from factorizing both levels of ``x_1``."""
    p = structure.p
    T0, d0 = modified_cholesky(sigma_of_x(structure, [0.0])[0])
    T1full, d1 = modified_cholesky(sigma_of_x(structure, [1.0])[0])
    slope = T1full - T0
    phi = PhiTensor(p, q)
    # {T_k}_{tj} = -phi[t, j, k]
    c0 = -T0[1:, :-1].T
    c1 = -slope[1:, :-1].T
    c0[np.abs(c0) < zero_tol] = 0.0
    c1[np.abs(c1) < zero_tol] = 0.0
    phi.coef[0] = np.triu(c0)
    if q >= 1:
        phi.coef[1] = np.triu(c1)
    beta = BetaMatrix(p, q)
    beta.coef[:, 0] = np.log(d0)
    if q >= 1:
        b1 = np.log(d1) - np.log(d0)
        b1[np.abs(b1) < zero_tol] = 0.0
        beta.coef[:, 1] = b1
    return phi, beta


def true_support(structure: CovarianceStructure, q: int = 1) -> set[tuple[int, int, int]]:
    return true_parameters(structure, max(q, 1))[0].support()


@dataclass
class Truth:
    """Ground truth of a simulated dataset.

    Subjects share one of two matrices indexed by ``levels[i] = x_i1``.
    """

    structure: CovarianceStructure
    levels: np.ndarray
    sigmas: np.ndarray
    precisions: np.ndarray
    phi: PhiTensor
    beta: BetaMatrix

    def sigma(self, i: int) -> np.ndarray:
        return self.sigmas[self.levels[i]]

    def precision(self, i: int) -> np.ndarray:
        return self.precisions[self.levels[i]]

    def subject_sigmas(self) -> np.ndarray:
        return self.sigmas[self.levels]

    def subject_precisions(self) -> np.ndarray:
        return self.precisions[self.levels]

    def support(self) -> set:
        return self.phi.support()

    def to_json(self) -> dict:
        s = self.structure
        return {
            "structure": {"kind": s.kind, "p": s.p, "rho": s.rho, "hub_block": s.hub_block,
                          "hub_boost": s.hub_boost, "edge_fraction": s.edge_fraction,
                          "edge_value": s.edge_value, "seed": s.seed,
                          "t1_seed": s.t1_seed},
            "sigma_x1_0": self.sigmas[0].tolist(),
            "sigma_x1_1": self.sigmas[1].tolist(),
            "phi": self.phi.triplets(),
            "beta": [[int(t) + 1, int(k), float(self.beta.coef[t, k])] for t, k in zip(*np.nonzero(self.beta.coef))],
            "support": sorted(list(c) for c in self.phi.support()),
        }


def generate(structure: CovarianceStructure, n: int, q: int, seed) -> Dataset:
    """Draw ``X ~ Bernoulli(0.5)`` and ``y_i ~ N(0, Sigma(x_i))``."""
    if n < 1 or q < 1:
        raise InputError("need n >= 1 and q >= 1")
    rng = np.random.default_rng(seed)
    X = rng.binomial(1, 0.5, size=(n, q)).astype(float)
    Z = rng.standard_normal((n, structure.p))
    pairs = [sigma_of_x(structure, [lvl]) for lvl in (0.0, 1.0)]
    sigmas = np.stack([s for s, _ in pairs])
    precisions = np.stack([o for _, o in pairs])
    factors = [np.linalg.cholesky(s) for s in sigmas]
    levels = X[:, 0].astype(int)
    Y = np.empty((n, structure.p))
    for lvl in (0, 1):
        rows = levels == lvl
        Y[rows] = Z[rows] @ factors[lvl].T
    phi, beta = true_parameters(structure, q)
    truth = Truth(structure, levels, sigmas, precisions, phi, beta)
    return Dataset(Y, X, truth=truth)
