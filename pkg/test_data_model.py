"""Tests for record validation, turnover bins and the dataset container."""

from datetime import date

import numpy as np
import pytest

from conftest import make_record
from data_model import (
    DEFAULT_BINS,
    DomainError,
    LabeledDataset,
    TurnoverBins,
    TurnoverClass,
    discretize_turnover,
    parse_date,
    validate_record,
)


def _nearest_boundary_class(value: float) -> TurnoverClass:
    """Brute force: the class owning the closest published boundary, ties to the lower class."""
    best = None
    for index, (lo, hi) in enumerate(DEFAULT_BINS.boundaries):
        if lo <= value <= hi:
            return TurnoverClass(index)
        distance = min(abs(value - lo), abs(value - hi))
        if best is None or distance < best[0]:
            best = (distance, index)
    return TurnoverClass(best[1])


@pytest.mark.parametrize(
    "value,expected",
    [
        (58_320, TurnoverClass.A),
        (18_291_986, TurnoverClass.A),
        (18_296_597, TurnoverClass.B),
        (37_731_606, TurnoverClass.B),
        (37_749_751, TurnoverClass.C),
        (121_233_543, TurnoverClass.C),
        (121_245_870, TurnoverClass.D),
        (300_360_881, TurnoverClass.D),
        (300_465_316, TurnoverClass.E),
        (19_085_311_470, TurnoverClass.E),
    ],
)
def test_published_boundaries_map_to_their_class(value, expected):
    assert discretize_turnover(value) == expected


def test_gap_values_go_to_nearest_boundary():
    assert discretize_turnover(18_294_291) == TurnoverClass.A
    assert discretize_turnover(18_294_292) == TurnoverClass.B
    # 37,740,678.5 is the exact B/C gap midpoint
    assert discretize_turnover(37_740_678.5) == TurnoverClass.B
    for value in (18_291_987, 18_295_000, 37_735_000, 121_240_000, 300_400_000):
        assert discretize_turnover(value) == _nearest_boundary_class(value)


def test_out_of_range_values_clamp():
    assert discretize_turnover(0) == TurnoverClass.A
    assert discretize_turnover(1_000) == TurnoverClass.A
    assert discretize_turnover(5e10) == TurnoverClass.E


@pytest.mark.parametrize("value", [-1.0, float("nan"), float("inf")])
def test_invalid_turnover_raises(value):
    with pytest.raises(DomainError):
        discretize_turnover(value)


def test_discretization_is_monotone():
    rng = np.random.default_rng(3)
    values = np.sort(np.exp(rng.uniform(0, np.log(3e10), size=10_000)))
    classes = [int(discretize_turnover(v)) for v in values]
    assert all(a <= b for a, b in zip(classes, classes[1:]))


def test_interior_points_map_exactly():
    rng = np.random.default_rng(11)
    for index, (lo, hi) in enumerate(DEFAULT_BINS.boundaries):
        for value in rng.uniform(lo, hi, size=100):
            assert discretize_turnover(value) == TurnoverClass(index)


def test_bins_reject_overlap_and_roundtrip_through_dict():
    with pytest.raises(DomainError):
        TurnoverBins(((0, 10), (5, 20), (30, 40), (50, 60), (70, 80)))
    with pytest.raises(DomainError):
        TurnoverBins(((0, 10), (20, 30)))
    assert TurnoverBins.from_dict(DEFAULT_BINS.to_dict()) == DEFAULT_BINS


def test_class_ordering_and_labels():
    assert TurnoverClass.A < TurnoverClass.B < TurnoverClass.C < TurnoverClass.D < TurnoverClass.E
    assert TurnoverClass.from_label(" d ") == TurnoverClass.D
    with pytest.raises(DomainError):
        TurnoverClass.from_label("F")


def test_valid_record_has_no_violations():
    record = make_record(low_price=10.0, high_price=20.0, wap=15.0, spread_high_low=10.0,
                         open_price=12.0, close_price=18.0)
    assert validate_record(record) == []


def test_inverted_price_range_is_reported():
    violations = validate_record(make_record(low_price=20.0, high_price=10.0, spread_high_low=-10.0, wap=15.0))
    assert any(v.startswith("low_price ≤ high_price violated") for v in violations)


def test_deliverable_above_shares_is_reported():
    violations = validate_record(make_record(no_of_shares=100.0, deliverable_quantity=150.0))
    assert len(violations) == 1
    assert violations[0].startswith("deliverable_quantity ≤ no_of_shares violated")
    assert "150.0" in violations[0]


def test_spread_tolerance_and_negative_counts():
    assert validate_record(make_record(spread_high_low=15.0 + 5e-7)) == []
    violations = validate_record(make_record(spread_high_low=15.1, no_of_trades=-1.0))
    assert len(violations) == 2


def test_parse_date_formats():
    assert parse_date("2013-06-03") == date(2013, 6, 3)
    assert parse_date("03-June-2013") == date(2013, 6, 3)
    assert parse_date("03-Jun-2013") == date(2013, 6, 3)
    with pytest.raises(DomainError):
        parse_date("June 3rd")


def test_labeled_dataset_invariants():
    d = LabeledDataset(("a", "b"), [[1.0, 2.0], [3.0, 4.0]], [TurnoverClass.A, TurnoverClass.C])
    assert d.n_rows == 2 and d.n_features == 2
    assert d.class_histogram() == {"A": 1, "B": 0, "C": 1, "D": 0, "E": 0}
    with pytest.raises(ValueError):
        d.rows[0, 0] = 9.0
    with pytest.raises(DomainError):
        LabeledDataset(("a",), [[1.0, 2.0]], [0])
    with pytest.raises(DomainError):
        LabeledDataset(("a",), [[1.0]], [0, 1])
    with pytest.raises(DomainError):
        LabeledDataset(("a",), [[np.nan]], [0])


def test_select_features_and_subset():
    d = LabeledDataset(("a", "b", "c"), np.arange(9.0).reshape(3, 3), [0, 1, 2])
    picked = d.select_features(["c", "a"])
    assert picked.feature_names == ("c", "a")
    np.testing.assert_array_equal(picked.rows[:, 0], [2.0, 5.0, 8.0])
    assert d.subset([2, 0]).labels.tolist() == [2, 0]
    with pytest.raises(DomainError):
        d.select_features(["z"])
