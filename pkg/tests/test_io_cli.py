import json

import numpy as np
import pytest

from cdcd import cli, io
from cdcd.model import CholeskyModel, InputError, assemble


def run(*argv):
    return cli.main([str(a) for a in argv])


def write_csv(path, text):
    path.write_text(text)
    return path


def test_csv_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    M = rng.normal(size=(7, 3)) * 10.0 ** rng.integers(-300, 300, size=(7, 3))
    io.write_matrix_csv(tmp_path / "m.csv", M, ["a", "b", "c"])
    names, back = io.read_matrix_csv(tmp_path / "m.csv")
    assert names == ["a", "b", "c"] and np.array_equal(back, M)


@pytest.mark.parametrize("text", [
    "a,b\n1,x\n",            # text cell
    "a,b\n1,nan\n",          # NaN
    "a,b\n1,inf\n",
    "a,b\n1,2,3\n",          # ragged
    "1,2\n3,4\n",            # no header
    "a,a\n1,2\n",            # duplicate names
    "",
])
def test_csv_rejects_bad_input(tmp_path, text):
    with pytest.raises(InputError):
        io.read_matrix_csv(write_csv(tmp_path / "bad.csv", text))


def test_dataset_row_mismatch(tmp_path):
    y = write_csv(tmp_path / "Y.csv", "y1,y2\n1,2\n3,4\n")
    x = write_csv(tmp_path / "X.csv", "x1\n1\n")
    with pytest.raises(InputError):
        io.read_dataset(y, x)


def test_config_parsing(tmp_path):
    conf = write_csv(tmp_path / "c.conf", "# comment\nlambda-g = 0.5\n\nfolds=3  # trailing\n")
    assert io.read_config(conf) == {"lambda_g": "0.5", "folds": "3"}
    with pytest.raises(InputError):
        io.read_config(write_csv(tmp_path / "d.conf", "novalue\n"))


def test_simulate_is_reproducible(tmp_path):
    for out in ("a", "b"):
        assert run("simulate", "--structure", "random", "--n", 20, "--p", 6, "--q", 3,
                   "--replicates", 2, "--seed", 5, "--out", tmp_path / out) == 0
    for name in ("Y.csv", "X.csv", "truth.json"):
        for rep in ("rep_001", "rep_002"):
            assert (tmp_path / "a" / rep / name).read_bytes() == (tmp_path / "b" / rep / name).read_bytes()
    assert (tmp_path / "a/rep_001/Y.csv").read_bytes() != (tmp_path / "a/rep_002/Y.csv").read_bytes()


def test_simulate_minimal_and_missing_seed(tmp_path):
    assert run("simulate", "--n", 2, "--p", 2, "--q", 1, "--seed", 0, "--out", tmp_path / "s") == 0
    names, Y = io.read_matrix_csv(tmp_path / "s/rep_001/Y.csv")
    assert names == ["y1", "y2"] and Y.shape == (2, 2)
    assert run("simulate", "--out", tmp_path / "t") == cli.EXIT_INPUT


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--structure", "ar1", "--n", 60, "--p", 5, "--q", 3, "--seed", 1, "--out", d) == 0
    return d / "rep_001"


def test_fit_with_large_penalties_is_empty(tmp_path, sim_dir):
    out = tmp_path / "m.json"
    assert run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--lambda", 100,
               "--lambda-g", 100, "--lambda-d", 100, "--out", out) == 0
    model = CholeskyModel.load(out)
    assert model.phi.nnz() == 0 and not np.any(model.beta.coef[:, 1:])
    summary = json.loads((tmp_path / "m.summary.json").read_text())
    assert summary["phi_nonzeros"] == 0 and summary["selected_covariates"] == []


def test_fit_small_penalty_matches_least_squares(tmp_path):
    rng = np.random.default_rng(2)
    n, p = 300, 4
    X = rng.binomial(1, 0.5, size=(n, 1)).astype(float)
    Y = np.zeros((n, p))
    Y[:, 0] = rng.normal(size=n)
    for t in range(1, p):
        Y[:, t] = (0.5 + 0.3 * X[:, 0]) * Y[:, t - 1] + rng.normal(size=n)
    io.write_matrix_csv(tmp_path / "Y.csv", Y, [f"y{i}" for i in range(1, p + 1)])
    io.write_matrix_csv(tmp_path / "X.csv", X, ["x1"])
    out = tmp_path / "m.json"
    assert run("fit", "--y", tmp_path / "Y.csv", "--x", tmp_path / "X.csv", "--lambda", 1e-8,
               "--lambda-g", 1e-8, "--lambda-d", 1e-6, "--no-standardize", "--out", out) == 0
    model = CholeskyModel.load(out)
    Yc = Y - Y.mean(axis=0)
    for t in range(2, p + 1):
        W = np.hstack([Yc[:, :t - 1], Yc[:, :t - 1] * X])
        b, *_ = np.linalg.lstsq(W, Yc[:, t - 1], rcond=None)
        fitted = [model.phi[t, j, k] for k in (0, 1) for j in range(1, t)]
        assert np.max(np.abs(np.array(fitted) - b)) < 1e-3
    truth = {(t, t - 1, k) for t in range(2, p + 1) for k in (0, 1)}
    assert truth <= model.phi.support()


def test_fit_cv_writes_report(tmp_path, sim_dir):
    out = tmp_path / "m.json"
    assert run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--n-lambda0", 6,
               "--alphas", "0.5", "--folds", 3, "--cv-report", tmp_path / "cv.json", "--out", out) == 0
    cv = json.loads((tmp_path / "cv.json").read_text())
    assert cv["alphas"] == [0.5] and len(cv["lambda0"][0]) == 6
    hyper = CholeskyModel.load(out).hyperparams
    assert hyper["standardized"] is True and hyper["lambda"] == pytest.approx(cv["selected"]["lambda"])


def test_predict_outputs(tmp_path, sim_dir):
    model_path = tmp_path / "m.json"
    assert run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--lambda", 0.05,
               "--lambda-g", 0.05, "--lambda-d", 0.05, "--out", model_path) == 0
    X = np.array([[1.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 0.0, 0.0]])
    io.write_matrix_csv(tmp_path / "Xnew.csv", X, ["x1", "x2", "x3"])
    out = tmp_path / "pred"
    assert run("predict", "--model", model_path, "--x", tmp_path / "Xnew.csv", "--out", out) == 0
    s1 = io.read_matrix_csv(out / "sigma_0001.csv")[1]
    s2 = io.read_matrix_csv(out / "sigma_0002.csv")[1]
    assert np.array_equal(s1, s2)
    model = CholeskyModel.load(model_path)
    s3 = io.read_matrix_csv(out / "sigma_0003.csv")[1]
    assert np.array_equal(s3, assemble(model, [0.0, 0.0, 0.0]).sigma)
    names, cert = io.read_matrix_csv(out / "pd_certificate.csv")
    assert names == ["subject", "min_eigenvalue"] and np.all(cert[:, 1] > 0)
    assert run("predict", "--model", model_path, "--x", tmp_path / "Xnew.csv", "--out", tmp_path / "npz",
               "--format", "npz") == 0
    z = np.load(tmp_path / "npz/subjects.npz")
    assert z["sigma"].shape == (3, 5, 5) and np.array_equal(z["sigma"][0], s1)


def test_predict_covariate_mismatch(tmp_path, sim_dir):
    model_path = tmp_path / "m.json"
    run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--lambda", 1, "--lambda-g", 1,
        "--lambda-d", 1, "--out", model_path)
    io.write_matrix_csv(tmp_path / "X2.csv", np.zeros((2, 2)), ["a", "b"])
    assert run("predict", "--model", model_path, "--x", tmp_path / "X2.csv", "--out", tmp_path / "p") == 2
    write_csv(tmp_path / "junk.json", "{}")
    assert run("predict", "--model", tmp_path / "junk.json", "--x", tmp_path / "X2.csv",
               "--out", tmp_path / "p") == 2


def test_model_json_round_trip_through_cli(tmp_path, sim_dir):
    model_path = tmp_path / "m.json"
    run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--lambda", 0.02, "--lambda-g", 0.02,
        "--lambda-d", 0.05, "--out", model_path)
    model = CholeskyModel.load(model_path)
    model.save(tmp_path / "again.json")
    back = CholeskyModel.load(tmp_path / "again.json")
    x = [1.0, 1.0, 0.0]
    assert np.allclose(assemble(model, x).sigma, assemble(back, x).sigma, rtol=1e-12, atol=1e-12)


def test_input_errors_exit_2(tmp_path, sim_dir):
    assert run("fit", "--x", sim_dir / "X.csv") == 2
    assert run("fit", "--y", tmp_path / "none.csv", "--x", sim_dir / "X.csv") == 2
    assert run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--lambda", 1) == 2
    assert run("fit", "--y", sim_dir / "Y.csv", "--x", sim_dir / "X.csv", "--lambda", -1) == 2
    assert run("nonsense") == 2
    assert run("report", "--in", tmp_path / "missing") == 2


def test_config_file_and_precedence(tmp_path, sim_dir):
    conf = write_csv(tmp_path / "fit.conf", f"y = {sim_dir / 'Y.csv'}\nx = {sim_dir / 'X.csv'}\n"
                                            "lambda = 100\nlambda-g = 100\nlambda-d = 100\nstandardize = no\n")
    out = tmp_path / "m.json"
    assert run("--config", conf, "fit", "--out", out) == 0
    model = CholeskyModel.load(out)
    assert model.hyperparams["lambda"] == 100 and model.hyperparams["standardized"] is False
    assert run("--config", conf, "fit", "--lambda", 0.01, "--out", out) == 0
    assert CholeskyModel.load(out).hyperparams["lambda"] == 0.01
    bad = write_csv(tmp_path / "bad.conf", "bogus = 1\n")
    assert run("--config", bad, "fit") == 2


def test_benchmark_smoke(tmp_path):
    import time
    t0 = time.perf_counter()
    out = tmp_path / "bench"
    assert run("benchmark", "--structure", "ar1", "--n", 50, "--p", 10, "--q", 5, "--replicates", 2,
               "--seed", 3, "--out", out) == 0
    assert time.perf_counter() - t0 < 60
    md = (out / "report.md").read_text()
    for method in ("cdcd", "dense-sample", "sparse-sample"):
        assert f"| {method} | 2 |" in md
    assert "PD checks: 100, violations: 0." in md  # 2 replicates x 50 subjects
    doc = json.loads((out / "report.json").read_text())
    assert len(doc["records"]) == 6 and doc["failures"] == []
    assert run("report", "--in", out, "--out", tmp_path / "again.md") == 0
    assert (tmp_path / "again.md").read_text() == md
    assert run("report", "--in", out / "report.csv", "--out", tmp_path / "csv.md") == 0
    assert "| ar1 n=50 p=10 q=5 | cdcd | 2 |" in (tmp_path / "csv.md").read_text()


def test_benchmark_dense_only(tmp_path):
    out = tmp_path / "bench"
    assert run("benchmark", "--structure", "hub", "--n", 30, "--p", 10, "--q", 2, "--replicates", 1,
               "--seed", 0, "--methods", "dense-sample", "--out", out) == 0
    md = (out / "report.md").read_text()
    assert "l2^2" not in md and "cdcd" not in md.replace("CDCD", "")


def test_threads_env(monkeypatch):
    monkeypatch.setenv("CDCD_THREADS", "3")
    assert cli._default_threads() == 3
    monkeypatch.setenv("CDCD_THREADS", "x")
    with pytest.raises(InputError):
        cli._default_threads()
