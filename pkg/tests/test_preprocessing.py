import datetime as dt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tempcast.errors import (
    DegenerateFeatureError,
    ImputationError,
    InsufficientDataError,
    ParameterError,
    SplitError,
)
from tempcast.preprocessing import (
    ScalerParams,
    calendar_features,
    chronological_split,
    drop_missing,
    fit_scaler,
    impute_mean,
    inverse_transform,
    make_windows,
    transform,
)

values = st.floats(-1e4, 1e4, allow_nan=False)


def test_fit_scaler_records_min_max():
    p = fit_scaler(np.array([10.0, 40.0, 25.0]))
    assert p.min.tolist() == [10.0] and p.max.tolist() == [40.0]


def test_fit_scaler_matches_linear_scan(rng):
    data = rng.normal(25, 8, (500, 3))
    p = fit_scaler(data)
    for j in range(3):
        lo = hi = data[0, j]
        for v in data[:, j]:
            lo = v if v < lo else lo
            hi = v if v > hi else hi
        assert (p.min[j], p.max[j]) == (lo, hi)


def test_constant_column_rejected_by_name():
    with pytest.raises(DegenerateFeatureError, match="column 1"):
        fit_scaler(np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]))
    with pytest.raises(DegenerateFeatureError):
        fit_scaler(np.array([5.0, 5.0, 5.0]))


def test_fit_needs_two_rows():
    with pytest.raises(InsufficientDataError):
        fit_scaler(np.array([[1.0]]))


@pytest.mark.parametrize("x, expected", [(10.0, -1.0), (40.0, 1.0), (25.0, 0.0)])
def test_transform_points(x, expected):
    assert transform(np.array([x]), ScalerParams([10.0], [40.0]))[0] == expected


@pytest.mark.parametrize("x, expected", [(-1.0, 10.0), (0.0, 25.0), (1.0, 40.0)])
def test_inverse_points(x, expected):
    assert inverse_transform(np.array([x]), ScalerParams([10.0], [40.0]))[0] == expected


def test_round_trip_random(rng):
    p = ScalerParams([-12.5], [47.25])
    x = rng.uniform(-100, 100, 1000)
    assert np.abs(inverse_transform(transform(x, p), p) - x).max() < 1e-12


def test_out_of_range_values_are_not_clamped():
    p = ScalerParams([10.0], [40.0])
    assert transform(np.array([55.0]), p)[0] == 2.0


@given(arrays(np.float64, (20, 2), elements=values, unique=True))
def test_fit_extremes_map_to_exact_bounds(data):
    p = fit_scaler(data)
    z = transform(data, p)
    assert np.all(z.min(axis=0) == -1.0) and np.all(z.max(axis=0) == 1.0)


@given(arrays(np.float64, 30, elements=values), st.floats(-50, 50), st.floats(0.5, 100))
def test_round_trip_property(x, lo, width):
    p = ScalerParams([lo], [lo + width])
    # 1e-12 relative to the magnitude of the values involved
    scale = max(1.0, np.abs(x).max(), abs(lo) + width)
    assert np.abs(inverse_transform(transform(x, p), p) - x).max() <= 1e-12 * scale


def test_impute_mean_examples():
    nan = 0.0
    assert impute_mean([1.0, nan, 3.0], [False, True, False]).ravel().tolist() == [1.0, 2.0, 3.0]
    assert impute_mean([nan, nan, 5.0], [True, True, False]).ravel().tolist() == [5.0, 5.0, 5.0]
    data = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(impute_mean(data, np.zeros((2, 2), bool)), data)


def test_impute_all_missing_column():
    with pytest.raises(ImputationError):
        impute_mean([[1.0, 0.0], [2.0, 0.0]], [[False, True], [False, True]])


@given(arrays(np.float64, (15, 2), elements=values), arrays(bool, (15, 2)))
def test_imputation_preserves_present_values(data, mask):
    mask[0] = False
    out = impute_mean(data, mask)
    assert np.array_equal(out[~mask], data[~mask])
    for j in range(2):
        present = data[~mask[:, j], j]
        np.testing.assert_allclose(out[:, j].mean(), present.mean(), rtol=1e-9, atol=1e-9)


def test_drop_missing_rows():
    out, dates = drop_missing([[1.0], [2.0], [3.0]], [[False], [True], [False]], ["a", "b", "c"])
    assert out.ravel().tolist() == [1.0, 3.0] and dates == ["a", "c"]


@pytest.mark.parametrize(
    "day, month, season",
    [(dt.date(2017, 1, 15), 1, 0), (dt.date(2017, 7, 1), 7, 2), (dt.date(1996, 11, 30), 11, 3),
     (dt.date(2000, 12, 1), 12, 0), (dt.date(2000, 3, 1), 3, 1)],
)
def test_calendar_features(day, month, season):
    assert calendar_features([day]).tolist() == [[month, season]]


def test_calendar_rejects_non_dates():
    with pytest.raises(ParameterError):
        calendar_features(["2017-01-01"])


def test_make_windows_enumeration():
    ds = make_windows(np.array([1.0, 2.0, 3.0, 4.0]), 2)
    assert ds.inputs[..., 0].tolist() == [[1.0, 2.0], [2.0, 3.0]]
    assert ds.targets.ravel().tolist() == [3.0, 4.0]


def test_make_windows_counts_and_bounds():
    assert len(make_windows(np.zeros(7300) + np.arange(7300), 30)) == 7270
    with pytest.raises(InsufficientDataError):
        make_windows(np.arange(30.0), 30)


def test_target_is_temperature_column():
    series = np.column_stack([np.arange(10.0), 100 + np.arange(10.0)])
    ds = make_windows(series, 3)
    assert ds.inputs.shape == (7, 3, 2)
    assert ds.targets.ravel().tolist() == list(np.arange(3.0, 10.0))


@given(st.integers(2, 60), st.integers(1, 20))
def test_windows_are_contiguous(length, window):
    if length <= window:
        return
    series = np.arange(float(length))
    ds = make_windows(series, window)
    assert len(ds) == length - window
    for i in range(len(ds)):
        assert ds.inputs[i, :, 0].tolist() == list(series[i : i + window])
        assert ds.targets[i, 0] == series[i + window]


def test_chronological_split():
    tr, te = chronological_split(np.arange(10), 0.8)
    assert len(tr) == 8 and len(te) == 2
    tr, te = chronological_split(np.arange(10), 0.999)
    assert len(tr) == 9 and len(te) == 1
    assert tr.max() < te.min()
    with pytest.raises(SplitError):
        chronological_split(np.arange(10), 0.05)
    with pytest.raises(ParameterError):
        chronological_split(np.arange(10), 1.0)
