import math
import warnings
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ghrent.errors import (
    DataError,
    DegenerateTarget,
    EmptyTrain,
    MissingGeo,
    NonPositivePrice,
    NonPositiveValue,
    ScaleMismatch,
    TooFewRows,
)
from ghrent.features import (
    FeatureConfig,
    FeatureMatrix,
    TargetVector,
    fit_encoder,
    split_indices,
    train_test_split,
    transform,
    transform_target,
)
from ghrent.geocode import GeoPoint
from ghrent.ingest import ListingRecord, ListingTable

P = GeoPoint(5.6, -0.2)


def table(*recs: ListingRecord) -> ListingTable:
    return ListingTable(tuple(recs), ("id",))


def rec(i, price, **kw) -> ListingRecord:
    return ListingRecord(str(i), price, kw.pop("location", "A"), **kw)


@pytest.fixture
def fence_table():
    return table(*(rec(i, p) for i, p in enumerate([100, 200, 300, 400, 100000])))


class TestFitEncoder:
    def test_fences_hand_case(self, fence_table):
        enc = fit_encoder(fence_table, [P] * 5, FeatureConfig(outlier_k=1.5))
        q1, q3 = math.log(200), math.log(400)
        lo, hi = enc.outlier_fences
        assert lo == pytest.approx(q1 - 1.5 * (q3 - q1), abs=1e-12)
        assert hi == pytest.approx(q3 + 1.5 * (q3 - q1), abs=1e-12)
        assert round(q1, 3) == 5.298 and round(q3, 3) == 5.991 and round(hi, 3) == 7.031
        assert enc.is_outlier(math.log(100000)) and not enc.is_outlier(math.log(300))

    def test_amenity_vocab_tie_break(self):
        t = table(rec(0, 1, amenities="wifi, tv"), rec(1, 2, amenities="wifi"), rec(2, 3, amenities="tv, ac"))
        enc = fit_encoder(t, [P] * 3, FeatureConfig(amenity_top_k=2))
        assert enc.amenity_vocab == ("tv", "wifi")

    def test_feature_name_order(self):
        t = table(rec(0, 1, condition="new", house_type="flat", amenities="tv"), rec(1, 2))
        enc = fit_encoder(t, [P, P], FeatureConfig(one_hot_roles=("house_type", "condition")))
        assert enc.feature_names == ("lng", "lat", "bedrooms", "bathrooms", "house_type_flat", "condition_new",
                                     "amenity_tv")

    def test_single_level_always_one(self):
        t = table(*(rec(i, 10 + i, condition="new") for i in range(4)))
        enc = fit_encoder(t, [P] * 4, FeatureConfig(one_hot_roles=("condition",)))
        X, _, _ = transform(t, [P] * 4, enc)
        assert X.values[:, X.column_names.index("condition_new")].tolist() == [1.0] * 4

    def test_levels_sorted(self):
        t = table(rec(0, 1, condition="old"), rec(1, 2, condition="new"), rec(2, 3, condition="mid"))
        enc = fit_encoder(t, [P] * 3, FeatureConfig(one_hot_roles=("condition",)))
        assert enc.category_levels["condition"] == ("mid", "new", "old")

    def test_errors(self):
        with pytest.raises(EmptyTrain):
            fit_encoder(table(), [], FeatureConfig())
        with pytest.warns(DegenerateTarget):
            fit_encoder(table(rec(0, 5), rec(1, 5)), [P, P], FeatureConfig())
        with pytest.raises(NonPositivePrice):
            fit_encoder(table(rec(0, None)), [P], FeatureConfig())

    def test_config_validation(self):
        with pytest.raises(DataError):
            FeatureConfig(amenity_top_k=0)
        with pytest.raises(DataError):
            FeatureConfig(split_ratio=1.0)


class TestTransform:
    def test_amenity_membership(self):
        t = table(rec(0, 1, amenities="wifi, tv"), rec(1, 2, amenities="wifi"), rec(2, 3, amenities="tv, ac"))
        enc = fit_encoder(t, [P] * 3, FeatureConfig(amenity_top_k=2))
        X, _, _ = transform(table(rec(9, 4, amenities="Wifi")), [P], enc)
        assert X.values[0, -2:].tolist() == [0.0, 1.0]

    def test_unseen_level_zero_block(self):
        train = table(rec(0, 1, condition="new"), rec(1, 2, condition="old"))
        enc = fit_encoder(train, [P, P], FeatureConfig(one_hot_roles=("condition",)))
        X, _, _ = transform(table(rec(5, 3, condition="ruined")), [P], enc)
        cols = [i for i, n in enumerate(X.column_names) if n.startswith("condition_")]
        assert X.values[0, cols].tolist() == [0.0, 0.0]

    def test_outlier_dropped(self, fence_table):
        enc = fit_encoder(fence_table, [P] * 5, FeatureConfig())
        X, y, ids = transform(fence_table, [P] * 5, enc, drop_outliers=True)
        assert ids == ["0", "1", "2", "3"]
        assert X.shape == (4, len(enc.feature_names))
        np.testing.assert_array_equal(y.values, np.log([100.0, 200, 300, 400]))

    def test_median_imputation(self):
        t = table(rec(0, 1, bedrooms=1), rec(1, 2, bedrooms=3), rec(2, 3, bedrooms=None))
        enc = fit_encoder(t, [P] * 3, FeatureConfig())
        X, _, _ = transform(t, [P] * 3, enc)
        assert X.values[:, 2].tolist() == [1.0, 3.0, 2.0]

    def test_unknown_location_policy(self):
        t = table(rec(0, 1), rec(1, 2))
        drop = fit_encoder(t, [P, P], FeatureConfig())
        X, _, ids = transform(t, [P, None], drop)
        assert ids == ["0"] and X.shape[0] == 1
        strict = fit_encoder(t, [P, P], FeatureConfig(unknown_location_policy="error"))
        with pytest.raises(MissingGeo):
            transform(t, [P, None], strict)

    def test_codes_layout(self):
        t = table(rec(0, 1, condition="new"), rec(1, 2, condition="old"))
        enc = fit_encoder(t, [P, P], FeatureConfig(one_hot_roles=("condition",)))
        X, _, _ = transform(table(rec(2, 3, condition="old"), rec(3, 4, condition="x")), [P, P], enc, layout="codes")
        assert X.column_names == enc.names("codes")
        assert X.values[:, enc.categorical_columns()[0]].tolist() == [1.0, -1.0]

    def test_non_positive_price(self):
        enc = fit_encoder(table(rec(0, 1), rec(1, 2)), [P, P], FeatureConfig())
        with pytest.raises(NonPositivePrice):
            transform(table(rec(0, None)), [P], enc)


class TestTargetTransform:
    def test_forward(self):
        assert transform_target(TargetVector([1.0], "raw"), "forward").values.tolist() == [0.0]

    def test_round_trip(self):
        back = transform_target(transform_target(TargetVector([100.0, 200.0], "raw"), "forward"), "inverse")
        np.testing.assert_allclose(back.values, [100.0, 200.0], rtol=1e-12)
        assert back.scale == "raw"

    def test_errors(self):
        with pytest.raises(ScaleMismatch):
            transform_target(TargetVector([1.0], "raw"), "inverse")
        with pytest.raises(ScaleMismatch):
            transform_target(TargetVector([1.0], "log_e"), "forward")
        with pytest.raises(NonPositiveValue):
            transform_target(TargetVector([0.0], "raw"), "forward")


class TestSplit:
    @pytest.mark.parametrize("n,ratio,sizes", [(10, 0.8, (8, 2)), (5, 0.8, (4, 1)), (100, 0.29, (29, 71))])
    def test_sizes(self, n, ratio, sizes):
        tr, te = split_indices(n, ratio, 3)
        assert (len(tr), len(te)) == sizes

    def test_deterministic(self):
        a = split_indices(50, 0.8, 11)
        b = split_indices(50, 0.8, 11)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_few(self):
        with pytest.raises(TooFewRows):
            split_indices(1, 0.5, 0)
        with pytest.raises(TooFewRows):
            split_indices(2, 0.2, 0)

    def test_train_test_split_types(self):
        X = FeatureMatrix(np.arange(20.0).reshape(10, 2), ("a", "b"))
        y = TargetVector(np.arange(10.0))
        Xtr, ytr, Xte, yte = train_test_split(X, y, 0.8, 1)
        assert Xtr.shape == (8, 2) and len(yte) == 2
        np.testing.assert_array_equal(Xtr.values[:, 0] / 2, ytr.values)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 400), st.floats(0.05, 0.95), st.integers(0, 2**63 - 1))
    def test_partition(self, n, ratio, seed):
        try:
            tr, te = split_indices(n, ratio, seed)
        except TooFewRows:
            return
        assert len(tr) == math.floor(Decimal(repr(ratio)) * n)  # the ratio as written, not its binary value
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n))


_rows = st.lists(
    st.tuples(st.floats(10, 1e5), st.sampled_from(["a", "b", "c", None]), st.sampled_from(["wifi", "tv, ac", ""])),
    min_size=1, max_size=25,
)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(_rows, _rows, st.floats(0.5, 3.0))
    def test_transform_invariants(self, train_rows, test_rows, k):
        train = table(*(rec(i, p, condition=c, amenities=a) for i, (p, c, a) in enumerate(train_rows)))
        test = table(*(rec(i, p, condition=c, amenities=a) for i, (p, c, a) in enumerate(test_rows)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateTarget)
            enc = fit_encoder(train, [P] * len(train), FeatureConfig(one_hot_roles=("condition",), outlier_k=k))
        X, y, ids = transform(test, [P] * len(test), enc, drop_outliers=True)
        assert X.shape[1] == len(enc.feature_names)
        block = [i for i, n in enumerate(X.column_names) if n.startswith("condition_")]
        levels = set(enc.category_levels["condition"])
        lo, hi = enc.outlier_fences
        expected = [r.id for r in test if lo <= math.log(r.price) <= hi]
        assert ids == expected
        for row, rid in zip(X.values, ids):
            seen = test.records[int(rid)].condition in levels
            assert row[block].sum() == (1.0 if seen else 0.0)
