import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ghrent.errors import NonFiniteInput, ShapeMismatch
from ghrent.linear import LinearModel, fit_ols, predict_linear


class TestFit:
    def test_exact_line(self):
        X, y = np.array([[1.0], [2.0], [3.0]]), np.array([2.0, 4.0, 6.0])
        m = fit_ols(X, y, fit_intercept=True)
        assert m.coefficients[0] == pytest.approx(2.0, abs=1e-10)
        assert m.intercept == pytest.approx(0.0, abs=1e-10)
        np.testing.assert_allclose(predict_linear(m, X), y, atol=1e-10)

    def test_constant_target(self):
        X = np.random.default_rng(0).normal(size=(10, 3))
        m = fit_ols(X, np.full(10, 4.5), fit_intercept=True)
        np.testing.assert_allclose(m.coefficients, 0.0, atol=1e-12)
        assert m.intercept == pytest.approx(4.5)

    def test_duplicate_column_minimum_norm(self):
        x = np.arange(1.0, 7.0)
        X = np.column_stack([x, x])
        m = fit_ols(X, 2 * x)
        oracle = np.linalg.pinv(X) @ (2 * x)  # dense pseudo-inverse
        np.testing.assert_allclose(oracle, [1.0, 1.0], atol=1e-12)
        np.testing.assert_allclose(m.coefficients, oracle, atol=1e-10)

    def test_no_intercept_default(self):
        m = fit_ols(np.array([[1.0], [2.0]]), np.array([3.0, 5.0]))
        assert m.intercept == 0.0 and not m.fitted_intercept

    def test_errors(self):
        with pytest.raises(ShapeMismatch):
            fit_ols(np.ones((3, 2)), np.ones(2))
        with pytest.raises(NonFiniteInput):
            fit_ols(np.array([[np.nan]]), np.array([1.0]))
        with pytest.raises(ShapeMismatch):
            predict_linear(LinearModel(np.ones(2)), np.ones((1, 3)))


class TestPredict:
    def test_arithmetic(self):
        assert predict_linear(LinearModel(np.array([2.0])), np.array([[3.0]])).tolist() == [6.0]

    def test_constant(self):
        assert predict_linear(LinearModel(np.zeros(2), 5.0), np.ones((3, 2))).tolist() == [5.0] * 3


_design = hnp.arrays(float, st.tuples(st.integers(2, 25), st.integers(1, 5)), elements=st.floats(-10, 10))


class TestProperties:
    @settings(max_examples=80, deadline=None)
    @given(_design, st.integers(0, 10**6), st.booleans())
    def test_residual_orthogonality(self, X, seed, intercept):
        y = np.random.default_rng(seed).normal(size=X.shape[0])
        m = fit_ols(X, y, intercept)
        r = y - predict_linear(m, X)
        scale = 1.0 + np.abs(X).max() * np.abs(y).max() * X.shape[0]
        assert np.abs(X.T @ r).max() <= 1e-8 * scale
        if intercept:
            assert abs(r.sum()) <= 1e-8 * scale

    @settings(max_examples=80, deadline=None)
    @given(_design, st.integers(0, 10**6))
    def test_duplicate_column_keeps_predictions(self, X, seed):
        y = np.random.default_rng(seed).normal(size=X.shape[0])
        a = predict_linear(fit_ols(X, y), X)
        X2 = np.column_stack([X, X[:, 0]])
        b = predict_linear(fit_ols(X2, y), X2)
        np.testing.assert_allclose(a, b, atol=1e-8 * (1 + np.abs(y).max()))

    @settings(max_examples=80, deadline=None)
    @given(_design, st.integers(0, 10**6), st.floats(-100, 100))
    def test_shift_moves_intercept_only(self, X, seed, c):
        y = np.random.default_rng(seed).normal(size=X.shape[0])
        a, b = fit_ols(X, y, True), fit_ols(X, y + c, True)
        np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-8 * (1 + abs(c)))
        assert b.intercept - a.intercept == pytest.approx(c, abs=1e-8 * (1 + abs(c)) * (1 + np.abs(X).max() * X.shape[1]))
