import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghrent.boost import BoostParams, GbdtModel, fit_gbdt
from ghrent.diagnostics import (
    ResidualSeries,
    compute_residuals,
    gain_importance,
    histogram_csv,
    importance_csv,
    permutation_importance,
    prediction_error_summary,
    residual_histogram,
)
from ghrent.errors import EmptySeries, NoSplits, ScaleMismatch, ShapeMismatch, ZeroVariance
from ghrent.features import TargetVector
from ghrent.forest import ForestModel, ForestParams, fit_forest
from ghrent.linear import LinearModel, fit_ols, predict_linear
from ghrent.tree import RegressionTree, TreeParams


def one_split_tree(feature: int, d: int) -> RegressionTree:
    return RegressionTree(
        np.array([feature, -1, -1]), np.array([0.5, 0.0, 0.0]), np.array([1, -1, -1]), np.array([2, -1, -1]),
        np.array([0.0, -1.0, 1.0]), np.array([3.0, 0.0, 0.0]), np.array([4.0, 2.0, 2.0]), d,
    )


def series(values) -> ResidualSeries:
    return ResidualSeries(np.asarray(values, dtype=float), "log_e")


class TestResiduals:
    def test_zero_when_exact(self):
        y = TargetVector(np.array([1.0, 2.0, 3.0]))
        assert compute_residuals(y, y).residuals.tolist() == [0.0] * 3

    def test_raw_scale_hand_case(self):
        r = compute_residuals(TargetVector([math.log(100)]), TargetVector([math.log(50)]), in_raw_scale=True)
        assert r.residuals[0] == pytest.approx(50.0, abs=1e-9)

    def test_ols_training_residuals_mean_zero(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(60, 3))
        y = X @ [1.0, -2.0, 0.5] + 4.0 + rng.normal(size=60)
        pred = predict_linear(fit_ols(X, y, True), X)
        r = compute_residuals(TargetVector(y), TargetVector(pred))
        assert abs(r.residuals.mean()) <= 1e-8

    def test_errors(self):
        with pytest.raises(ScaleMismatch):
            compute_residuals(TargetVector([1.0]), TargetVector([1.0], "raw"))
        with pytest.raises(ShapeMismatch):
            compute_residuals(TargetVector([1.0]), TargetVector([1.0, 2.0]))


class TestHistogram:
    def test_hand_case(self):
        h = residual_histogram(series([0, 0, 1, 1]), 2)
        assert h.edges == (0.0, 0.5, 1.0) and h.counts == (2, 2)

    def test_left_closed_bins(self):
        h = residual_histogram(series([0.0, 0.5, 1.0]), 2)
        assert h.counts == (1, 2)

    def test_all_equal(self):
        h = residual_histogram(series([3.0] * 5), 4)
        assert sum(h.counts) == 5 and max(h.counts) == 5
        assert all(a < b for a, b in zip(h.edges, h.edges[1:]))

    def test_empty(self):
        with pytest.raises(EmptySeries):
            residual_histogram(series([]), 3)

    def test_csv(self):
        text = histogram_csv(residual_histogram(series([0, 0, 1, 1]), 2))
        assert text.splitlines() == ["left,right,count", "0.0,0.5,2", "0.5,1.0,2"]

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=80), st.integers(1, 40))
    def test_conservation_and_monotone_edges(self, values, bins):
        h = residual_histogram(series(values), bins)
        assert sum(h.counts) == len(values) and len(h.edges) == bins + 1
        assert all(a < b for a, b in zip(h.edges, h.edges[1:]))
        assert all(c >= 0 for c in h.counts)


class TestPredictionError:
    def test_identity(self):
        y = np.array([1.0, 2.0, 4.0, 7.0])
        slope, intercept, r2 = prediction_error_summary(y, y)
        assert (slope, intercept, r2) == (1.0, 0.0, 1.0)

    def test_mean_prediction(self):
        y = np.array([1.0, 2.0, 4.0, 7.0])
        slope, _, r2 = prediction_error_summary(y, np.full(4, y.mean()))
        assert slope == 0.0 and r2 == 0.0

    def test_doubling(self):
        y = np.array([1.0, 2.0, 4.0, 7.0])
        slope, intercept, _ = prediction_error_summary(y, 2 * y)
        assert slope == pytest.approx(2.0, abs=1e-12) and intercept == pytest.approx(0.0, abs=1e-12)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            prediction_error_summary([2.0, 2.0], [1.0, 3.0])
        with pytest.raises(ZeroVariance):
            prediction_error_summary([2.0], [1.0])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=50))
    def test_identity_property(self, values):
        y = np.array(values)
        if np.ptp(y) < 1e-3:
            y[0] += 1.0
        slope, intercept, _ = prediction_error_summary(y, y)
        assert slope == pytest.approx(1.0, abs=1e-12) and intercept == pytest.approx(0.0, abs=1e-12)


class TestGainImportance:
    def test_single_split_attribution(self):
        m = ForestModel((one_split_tree(2, 4),), ForestParams(1))
        rep = gain_importance(m, ["a", "b", "c", "d"])
        assert rep.entries[0] == ("c", 1.0) and sorted(s for _, s in rep.entries[1:]) == [0.0] * 3

    def test_all_stumps(self):
        z = np.zeros(1)
        stump = RegressionTree(np.array([-1]), z, np.array([-1]), np.array([-1]), np.ones(1), z, np.ones(1), 2)
        with pytest.raises(NoSplits):
            gain_importance(GbdtModel(0.0, (stump,), BoostParams(), 2))

    def test_generative_feature_ranks_first(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 3))
        y = X[:, 1].copy()
        f = fit_forest(X, y, ForestParams(10, TreeParams(max_depth=4, feature_subsample="all"), seed=0))
        rep = gain_importance(f, ["noise0", "signal", "noise2"])
        assert rep.names()[0] == "signal"
        assert sum(s for _, s in rep.entries) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_normalised(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(40, 4))
        y = np.sin(X[:, 0]) + rng.normal(size=40)
        m = fit_gbdt(X, y, params=BoostParams(iterations=5, depth=2))
        rep = gain_importance(m)
        assert sum(s for _, s in rep.entries) == pytest.approx(1.0, abs=1e-12)
        scores = [s for _, s in rep.entries]
        assert scores == sorted(scores, reverse=True)


class TestPermutationImportance:
    @pytest.fixture
    def data(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(80, 3))
        return X, X[:, 0].copy()

    def test_ignored_feature_scores_zero(self, data):
        X, y = data
        m = LinearModel(np.array([1.0, 0.0, 0.0]), 0.0, False)
        rep = permutation_importance(m, X, y, repeats=3, seed=5)
        assert rep.score("f1") == 0.0 and rep.score("f2") == 0.0
        assert rep.score("f0") > 0

    def test_seed_determinism(self, data):
        X, y = data
        m = fit_ols(X, y + 0.1 * X[:, 1], True)
        assert permutation_importance(m, X, y, 2, 9) == permutation_importance(m, X, y, 2, 9)

    def test_model_input_untouched(self, data):
        X, y = data
        before = X.copy()
        permutation_importance(LinearModel(np.ones(3), 0.0, False), X, y, 2, 0)
        np.testing.assert_array_equal(X, before)

    def test_errors(self, data):
        X, y = data
        with pytest.raises(ShapeMismatch):
            permutation_importance(LinearModel(np.ones(3), 0.0, False), X, y[:-1])

    def test_csv(self, data):
        X, y = data
        rep = permutation_importance(LinearModel(np.array([1.0, 0.0, 0.0]), 0.0, False), X, y, 1, 0, ["a", "b", "c"])
        assert importance_csv(rep).splitlines()[0] == "feature,score,method"

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6))
    def test_ignored_feature_any_seed(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(30, 2))
        m = LinearModel(np.array([0.0, 2.0]), 1.0, True)
        rep = permutation_importance(m, X, 2 * X[:, 1] + rng.normal(size=30), 2, seed)
        assert rep.score("f0") == 0.0
