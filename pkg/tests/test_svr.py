import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import rbf_gram, svr_dual_qp

from ghrent.errors import DataError, NoConvergence, ShapeMismatch
from ghrent.svr import SvrModel, SvrParams, dense_coefficients, dual_objective, fit_svr, kkt_report, predict_svr


def standardized(X):
    X = np.asarray(X, dtype=float)
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def model_at_origin(beta: float, bias: float, gamma: float = 1.0) -> SvrModel:
    return SvrModel(np.zeros((1, 1)), np.array([beta]), bias, "rbf", gamma, np.zeros(1), np.ones(1), np.array([0]))


def random_instance(seed: int):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(3, 31)), int(rng.integers(1, 5))
    X = rng.normal(size=(n, d))
    y = np.sin(X.sum(axis=1)) + 0.2 * rng.normal(size=n)
    params = SvrParams(C=float(rng.choice([0.5, 1.0, 5.0])), epsilon=float(rng.choice([0.01, 0.1, 0.3])),
                       kernel="rbf", gamma=float(rng.choice([0.1, 0.5, 1.0])))
    return X, y, params


class TestFit:
    def test_constant_target(self):
        X = np.random.default_rng(0).normal(size=(20, 2))
        m = fit_svr(X, np.full(20, 3.0), SvrParams(epsilon=0.0))
        assert m.dual_coefs.size == 0 and m.bias == 3.0
        assert (predict_svr(m, X) == 3.0).all()
        assert kkt_report(m, X, np.full(20, 3.0), SvrParams(epsilon=0.0)) == 0.0

    def test_identity_line_linear_kernel(self):
        x = np.linspace(-1, 1, 15)[:, None]
        p = SvrParams(C=100.0, epsilon=0.01, kernel="linear", tol=1e-6)
        m = fit_svr(x, x[:, 0], p)
        assert np.abs(predict_svr(m, x) - x[:, 0]).max() <= p.epsilon + p.tol
        K = standardized(x) @ standardized(x).T
        oracle = svr_dual_qp(K, x[:, 0], p.C, p.epsilon)
        assert dual_objective(m, x, x[:, 0], p.epsilon) == pytest.approx(oracle, rel=1e-4)

    def test_wide_tube_no_support_vectors(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(25, 3)), rng.uniform(0, 1, 25)
        m = fit_svr(X, y, SvrParams(epsilon=2.0))
        assert m.dual_coefs.size == 0

    def test_no_convergence_carries_iterate(self):
        X, y, _ = random_instance(3)
        with pytest.raises(NoConvergence) as info:
            fit_svr(X, y, SvrParams(C=10.0, epsilon=0.01, max_passes=1, tol=1e-9))
        assert isinstance(info.value.model, SvrModel) and info.value.violation > 1e-9

    def test_full_matrix_and_row_paths_agree(self, monkeypatch):
        import ghrent.svr as svr

        X, y, p = random_instance(11)
        a = fit_svr(X, y, p)
        monkeypatch.setattr(svr, "_FULL_KERNEL_MAX_ROWS", 0)
        monkeypatch.setattr(svr, "_CACHE_BYTES", 8 * 3 * X.shape[0])  # three cached rows forces eviction
        b = fit_svr(X, y, p)
        # kernel values differ in the last bits, so the iterates may stop at different points within tol
        assert kkt_report(b, X, y, p) <= p.tol
        assert dual_objective(b, X, y, p.epsilon) == pytest.approx(dual_objective(a, X, y, p.epsilon), rel=1e-4)

    def test_params_validation(self):
        with pytest.raises(DataError):
            SvrParams(C=0.0)
        with pytest.raises(DataError):
            SvrParams(kernel="poly")
        with pytest.raises(ShapeMismatch):
            fit_svr(np.ones((3, 2)), np.ones(4))


class TestPredict:
    def test_constant_bias(self):
        m = SvrModel(np.zeros((0, 2)), np.zeros(0), 3.0, "rbf", 1.0, np.zeros(2), np.ones(2), np.zeros(0, np.int64))
        assert predict_svr(m, np.ones((4, 2))).tolist() == [3.0] * 4

    def test_kernel_identity(self):
        assert predict_svr(model_at_origin(2.0, 0.0), np.zeros((1, 1))).tolist() == [2.0]
        assert predict_svr(model_at_origin(1.0, 0.0, gamma=37.0), np.zeros((1, 1))).tolist() == [1.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            predict_svr(model_at_origin(1.0, 0.0), np.zeros((1, 2)))


class TestKkt:
    def test_zero_model_outside_tube(self):
        X = np.zeros((3, 1))
        m = SvrModel(np.zeros((0, 1)), np.zeros(0), 0.0, "rbf", 1.0, np.zeros(1), np.ones(1), np.zeros(0, np.int64))
        assert kkt_report(m, X, np.array([1.0, -2.0, 0.0]), SvrParams(epsilon=0.5)) == pytest.approx(1.5)

    @pytest.mark.parametrize("seed", range(10))
    def test_converged_fit_within_tol(self, seed):
        X, y, p = random_instance(seed)
        m = fit_svr(X, y, p)
        assert kkt_report(m, X, y, p) <= p.tol

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_qp_oracle(self, seed):
        X, y, p = random_instance(100 + seed)
        m = fit_svr(X, y, p)
        oracle = svr_dual_qp(rbf_gram(standardized(X), p.gamma), y, p.C, p.epsilon)
        assert dual_objective(m, X, y, p.epsilon) == pytest.approx(oracle, rel=1e-4)


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10**6))
    def test_dual_feasibility_and_tube(self, seed):
        X, y, p = random_instance(seed)
        m = fit_svr(X, y, p)
        beta = dense_coefficients(m, len(y))
        assert abs(beta.sum()) <= 1e-10
        assert (np.abs(beta) <= p.C).all()
        r = np.abs(predict_svr(m, X) - y)
        assert (beta[r < p.epsilon - p.tol] == 0).all()
