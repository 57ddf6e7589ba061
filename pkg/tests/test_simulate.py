import numpy as np
import pytest

from cdcd import simulate
from cdcd.model import BetaMatrix, CholeskyModel, InputError, assemble
from cdcd.simulate import CovarianceStructure


@pytest.mark.parametrize("kind", ["ar1", "random"])
def test_identity_at_zero(kind):
    sigma, omega = simulate.sigma_of_x(CovarianceStructure(kind, 20, seed=3), [0.0])
    assert np.allclose(sigma, np.eye(20)) and np.allclose(omega, np.eye(20))


def test_hub_at_zero_is_scaled_identity():
    sigma, omega = simulate.sigma_of_x(CovarianceStructure("hub", 10), [0.0])
    assert np.allclose(omega, 0.5 * np.eye(10)) and np.allclose(sigma, 2 * np.eye(10))


def test_ar1_small_matrix():
    sigma, omega = simulate.sigma_of_x(CovarianceStructure("ar1", 3), [1.0])
    assert np.allclose(sigma, [[1, .5, .25], [.5, 1, .5], [.25, .5, 1]])
    assert np.allclose(sigma @ omega, np.eye(3))


def test_hub_block_spectrum():
    _, omega = simulate.sigma_of_x(CovarianceStructure("hub", 10), [1.0])
    eig = np.linalg.eigvalsh(omega)
    # Schur complement of the hub: 5 - 9 * 0.25 / 0.5
    members = omega[1:, 1:]
    schur = omega[0, 0] - omega[0, 1:] @ np.linalg.solve(members, omega[1:, 0])
    assert schur == pytest.approx(0.5)
    assert np.sum(np.isclose(eig, 0.5)) == 8
    # the two remaining eigenvalues solve l^2 - 5.5 l + (2.5 - 2.25) = 0
    roots = np.sort(np.roots([1, -5.5, 0.25]))
    assert np.allclose([eig[0], eig[-1]], roots)
    assert eig[0] == pytest.approx(0.0458, abs=1e-4)
    assert eig[0] > 0


def test_random_design_structure():
    s = CovarianceStructure("random", 30, seed=5)
    T1 = s.random_t1
    lower = np.tril_indices(30, -1)
    assert np.count_nonzero(T1) == round(0.05 * lower[0].size)
    assert set(np.unique(T1[lower])) <= {0.0, -0.5}
    assert not np.any(np.triu(T1))
    again = CovarianceStructure("random", 30, seed=5).random_t1
    assert np.array_equal(T1, again)
    other = CovarianceStructure("random", 30, seed=6).random_t1
    assert not np.array_equal(T1, other)
    fixed = [CovarianceStructure("random", 30, seed=s_, t1_seed=1).random_t1 for s_ in (7, 8)]
    assert np.array_equal(*fixed)


def test_structure_validation():
    for bad in [dict(kind="banded", p=4), dict(kind="hub", p=15), dict(kind="ar1", p=4, rho=1.0),
                dict(kind="random", p=4, edge_fraction=0.0), dict(kind="ar1", p=1)]:
        with pytest.raises(InputError):
            CovarianceStructure(**bad)


def test_generate_is_deterministic():
    s = CovarianceStructure("ar1", 6)
    a, b = simulate.generate(s, 40, 3, 11), simulate.generate(s, 40, 3, 11)
    assert np.array_equal(a.Y, b.Y) and np.array_equal(a.X, b.X)
    c = simulate.generate(s, 40, 3, 12)
    assert not np.array_equal(a.Y, c.Y)


def test_generate_laws_of_large_numbers():
    s = CovarianceStructure("ar1", 5)
    d = simulate.generate(s, 20000, 2, 0)
    assert abs(d.X.mean() - 0.5) <= 0.01
    Y1 = d.Y[d.X[:, 0] == 1]
    S = Y1.T @ Y1 / Y1.shape[0]
    assert np.max(np.abs(S - simulate.sigma_of_x(s, [1.0])[0])) <= 0.05


def test_generate_argument_checks():
    with pytest.raises(InputError):
        simulate.generate(CovarianceStructure("ar1", 4), 0, 1, 0)
    with pytest.raises(InputError):
        simulate.generate(CovarianceStructure("ar1", 4), 5, 0, 0)


def test_random_support_matches_t1():
    s = CovarianceStructure("random", 12, seed=2)
    support = simulate.true_support(s, 3)
    T1 = s.random_t1
    expected = {(t + 1, j + 1, 1) for t, j in zip(*np.nonzero(T1))}
    assert support == expected


def test_ar1_support():
    support = simulate.true_support(CovarianceStructure("ar1", 3), 2)
    assert support == {(2, 1, 1), (3, 2, 1)}
    phi, beta = simulate.true_parameters(CovarianceStructure("ar1", 6), 2)
    assert np.allclose([phi[t, t - 1, 1] for t in range(2, 7)], 0.5)
    assert np.allclose(beta.coef[1:, 1], np.log(0.75)) and beta.coef[0, 1] == 0


@pytest.mark.parametrize("kind", simulate.KINDS)
def test_factorization_round_trip(kind):
    s = CovarianceStructure(kind, 20, seed=1)
    phi, beta = simulate.true_parameters(s, 3)
    assert not np.any(phi.coef[2:]) and not np.any(beta.coef[:, 2:])
    model = CholeskyModel(phi, beta)
    for level in (0.0, 1.0):
        x = [level, 1.0, 1.0]
        sigma = simulate.sigma_of_x(s, x)[0]
        c = assemble(model, x)
        D = c.t_matrix @ sigma @ c.t_matrix.T
        assert np.max(np.abs(D - np.diag(np.diag(D)))) < 1e-10
        assert np.allclose(c.sigma, sigma, atol=1e-10)


@pytest.mark.parametrize("kind", simulate.KINDS)
def test_subject_matrices_are_pd(kind):
    for seed in range(3):
        d = simulate.generate(CovarianceStructure(kind, 50, seed=seed), 30, 2, seed)
        for S in d.truth.subject_sigmas():
            assert np.linalg.eigvalsh(S)[0] > 1e-8


def test_truth_json_fields():
    d = simulate.generate(CovarianceStructure("hub", 10), 8, 2, 0)
    doc = d.truth.to_json()
    assert doc["structure"]["kind"] == "hub"
    assert len(doc["support"]) == 9
    assert np.array(doc["sigma_x1_1"]).shape == (10, 10)


def test_beta_is_matrix():
    _, beta = simulate.true_parameters(CovarianceStructure("hub", 10), 1)
    assert isinstance(beta, BetaMatrix)
    assert np.allclose(beta.coef[:, 0], np.log(2.0))
