import math

import numpy as np
import pytest

from cdcd.model import (BetaMatrix, CholeskyModel, Dataset, InputError, PhiTensor, assemble, build_D,
                        build_T, column_means, predict_mean_adjust)


def random_model(p, q, rng, scale=0.3):
    phi = PhiTensor(p, q, rng.normal(scale=scale, size=(q + 1, p - 1, p - 1)))
    beta = BetaMatrix(p, q, rng.normal(scale=scale, size=(p, q + 1)))
    return CholeskyModel(phi, beta)


def test_phi_indexing_and_size():
    phi = PhiTensor(4, 2)
    assert phi.size == 4 * 3 // 2 * 3
    phi[3, 1, 2] = 0.7
    assert phi[3, 1, 2] == 0.7
    assert phi.support() == {(3, 1, 2)}
    for bad in [(2, 2, 0), (2, 3, 0), (5, 1, 0), (3, 1, 3), (1, 0, 0)]:
        with pytest.raises(IndexError):
            phi[bad]


def test_phi_masks_upper_storage():
    # entries outside the valid triangle are dropped on construction
    coef = np.ones((1, 3, 3))
    phi = PhiTensor(4, 0, coef)
    assert phi.nnz() == 6
    assert np.all(np.tril(phi.coef[0], -1) == 0)


def test_phi_triplet_round_trip():
    rng = np.random.default_rng(0)
    phi = random_model(5, 2, rng).phi
    back = PhiTensor.from_triplets(5, 2, phi.triplets())
    assert np.array_equal(back.coef, phi.coef)


def test_beta_rejects_non_finite():
    with pytest.raises(InputError):
        BetaMatrix(2, 1, np.array([[0.0, np.nan], [0.0, 0.0]]))


def test_model_dimension_mismatch():
    with pytest.raises(InputError):
        CholeskyModel(PhiTensor(3, 1), BetaMatrix(3, 2))


def test_build_T_zero_is_identity():
    m = CholeskyModel(PhiTensor(4, 2), BetaMatrix(4, 2))
    assert np.array_equal(build_T(m, [0.3, -2.0]), np.eye(4))


def test_build_T_linear_combination():
    phi = PhiTensor(2, 1)
    phi[2, 1, 0] = 0.2
    phi[2, 1, 1] = 0.3
    T = build_T(CholeskyModel(phi, BetaMatrix(2, 1)), [1.0])
    assert np.allclose(T, [[1, 0], [-0.5, 1]], atol=1e-15)


def test_build_T_at_zero_uses_slice_zero():
    rng = np.random.default_rng(1)
    m = random_model(3, 2, rng)
    T = build_T(m, [0.0, 0.0])
    for t in (2, 3):
        for j in range(1, t):
            assert T[t - 1, j - 1] == -m.phi[t, j, 0]
    assert np.all(np.triu(T, 1) == 0) and np.all(np.diag(T) == 1)


def test_build_T_is_affine():
    rng = np.random.default_rng(2)
    m = random_model(6, 3, rng)
    x1, x2, a = rng.normal(size=3), rng.normal(size=3), 0.3
    lhs = build_T(m, a * x1 + (1 - a) * x2)
    rhs = a * build_T(m, x1) + (1 - a) * build_T(m, x2)
    assert np.allclose(lhs, rhs, atol=1e-13)


def test_build_D_values():
    beta = BetaMatrix(3, 1)
    m = CholeskyModel(PhiTensor(3, 1), beta)
    assert np.array_equal(build_D(m, [5.0]), np.ones(3))
    beta.coef[:, 0] = math.log(4)
    assert np.allclose(build_D(m, [0.0]), 4.0)
    beta.coef[:, 0] = 0
    beta[1, 1] = 1.0
    assert build_D(m, [2.0])[0] == pytest.approx(7.389056, abs=1e-6)


def test_build_D_clamps_exponent():
    beta = BetaMatrix(2, 1)
    beta[1, 1] = 100.0
    m = CholeskyModel(PhiTensor(2, 1), beta)
    d = build_D(m, [10.0])
    assert d[0] == pytest.approx(math.exp(30))
    assert np.all(d > 0) and np.all(np.isfinite(d))


def test_dimension_errors():
    m = CholeskyModel(PhiTensor(3, 2), BetaMatrix(3, 2))
    for f in (build_T, build_D, assemble):
        with pytest.raises(InputError):
            f(m, [1.0])
        with pytest.raises(InputError):
            f(m, [1.0, np.inf])


def test_assemble_identity():
    c = assemble(CholeskyModel(PhiTensor(3, 1), BetaMatrix(3, 1)), [1.0])
    assert np.array_equal(c.sigma, np.eye(3)) and np.array_equal(c.precision, np.eye(3))


def test_assemble_two_by_two():
    phi = PhiTensor(2, 0)
    phi[2, 1, 0] = 0.5
    beta = BetaMatrix(2, 0)
    beta[2, 0] = math.log(0.75)
    c = assemble(CholeskyModel(phi, beta), [])
    # y1 ~ N(0,1), y2 = 0.5 y1 + e, var(e) = 0.75
    assert np.allclose(c.sigma, [[1, 0.5], [0.5, 1]], atol=1e-14)


def test_assemble_matches_neumann_series():
    rng = np.random.default_rng(3)
    m = random_model(5, 2, rng)
    x = rng.normal(size=2)
    T = build_T(m, x)
    L = np.eye(5) - T  # strictly lower, nilpotent
    Tinv = sum(np.linalg.matrix_power(L, r) for r in range(5))
    sigma = Tinv @ np.diag(build_D(m, x)) @ Tinv.T
    c = assemble(m, x)
    assert np.allclose(c.sigma, sigma, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("p", [2, 10, 60])
def test_assemble_invariants(p):
    rng = np.random.default_rng(p)
    m = random_model(p, 3, rng, scale=0.2)
    for _ in range(3):
        c = assemble(m, rng.normal(size=3))
        assert np.allclose(c.sigma, c.sigma.T, atol=1e-10)
        assert np.allclose(c.precision, c.precision.T, atol=1e-10)
        resid = np.linalg.norm(c.sigma @ c.precision - np.eye(p)) / math.sqrt(p)
        assert resid < 1e-6
        inv = np.linalg.inv(c.sigma)
        assert np.linalg.norm(inv - c.precision) / np.linalg.norm(c.precision) < 1e-6
        assert c.min_eigenvalue() > 0
        assert np.all(np.diag(c.t_matrix) == 1) and np.all(np.triu(c.t_matrix, 1) == 0)
        assert np.all(c.d_diag > 0)


def test_population_model_at_zero():
    rng = np.random.default_rng(4)
    m = random_model(4, 2, rng)
    assert np.allclose(build_D(m, [0, 0]), np.exp(m.beta.coef[:, 0]))


def test_mean_adjust():
    Y = np.array([[1.0, 5.0, 0.0], [3.0, 5.0, 0.0]])
    means = column_means(Y)
    assert np.array_equal(means, [2.0, 5.0, 0.0])
    m = CholeskyModel(PhiTensor(3, 1), BetaMatrix(3, 1), means)
    out = predict_mean_adjust(m, Y)
    assert np.array_equal(out, [[-1, 0, 0], [1, 0, 0]])
    with pytest.raises(InputError):
        predict_mean_adjust(m, np.zeros((2, 2)))


def test_model_json_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    m = random_model(6, 2, rng)
    m.column_means = rng.normal(size=6)
    m.hyperparams = {"lambda": 0.1}
    path = tmp_path / "m.json"
    m.save(path)
    back = CholeskyModel.load(path)
    x = rng.normal(size=2)
    a, b = assemble(m, x), assemble(back, x)
    assert np.allclose(a.sigma, b.sigma, rtol=1e-12, atol=1e-12)
    assert np.array_equal(back.column_means, m.column_means)
    assert back.hyperparams == {"lambda": 0.1}


def test_dataset_validation():
    with pytest.raises(InputError):
        Dataset(np.zeros((3, 2)), np.zeros((4, 1)))
    with pytest.raises(InputError):
        Dataset(np.array([[np.nan, 1.0]]), np.zeros((1, 1)))
    d = Dataset(np.zeros((3, 2)), np.zeros(3))
    assert d.q == 1 and d.y_names == ["y1", "y2"]
