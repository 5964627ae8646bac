import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrcdm.series import (
    DataError,
    Normalizer,
    SplitSpec,
    TimeSeries,
    chronological_split,
    clip_outliers_3sigma,
    denormalize,
    fit_normalizer,
    interpolate_missing,
    make_windows,
    normalize,
    prepare,
    read_ett_csv,
    stack_windows,
    window_count,
    write_ett_csv,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def test_interpolate_interior_gap_is_linear():
    s = TimeSeries(np.array([1.0, np.nan, np.nan, 4.0]))
    np.testing.assert_allclose(interpolate_missing(s).values, [1, 2, 3, 4])


def test_interpolate_extends_edges_with_nearest_value():
    s = TimeSeries(np.array([np.nan, 2.0, 3.0, np.nan, np.nan]))
    out = interpolate_missing(s)
    assert out.values.tolist() == [2.0, 2.0, 3.0, 3.0, 3.0]
    assert out.fully_observed


def test_interpolate_needs_two_points():
    with pytest.raises(DataError):
        interpolate_missing(TimeSeries(np.array([np.nan, 1.0, np.nan])))


def test_observed_mask_marks_missing():
    s = TimeSeries(np.array([1.0, 5.0, 3.0]), observed=np.array([True, False, True]))
    assert interpolate_missing(s).values[1] == 2.0


def test_clip_clamps_to_three_sigma():
    x = np.zeros(1000)
    x[0] = 1e4
    out = clip_outliers_3sigma(TimeSeries(x)).values
    mu, sd = x.mean(), x.std()
    assert out[0] == pytest.approx(mu + 3 * sd)
    assert np.all(out[1:] == 0.0)


def test_clip_constant_series_unchanged():
    s = TimeSeries(np.full(10, 2.5))
    assert np.array_equal(clip_outliers_3sigma(s).values, s.values)


@given(arrays(np.float64, st.integers(2, 200), elements=finite))
def test_normalize_round_trip(x):
    if np.std(x) < 1e-6:
        return
    n = fit_normalizer(x)
    s = TimeSeries(x)
    back = denormalize(normalize(s, n), n).values
    assert np.max(np.abs(back - x)) <= 1e-12 * max(1.0, np.max(np.abs(x)))


def test_normalized_train_has_unit_stats(rng):
    x = rng.normal(3.0, 2.0, 500)
    z = normalize(TimeSeries(x), fit_normalizer(x)).values
    assert abs(z.mean()) < 1e-12 and abs(z.std() - 1.0) < 1e-12


def test_zero_variance_normalizer_rejected():
    with pytest.raises(DataError):
        fit_normalizer(np.ones(20))
    with pytest.raises(ValueError):
        Normalizer(0.0, 0.0)


def test_split_fractions_and_order():
    s = TimeSeries(np.arange(1001.0))
    tr, va, te = chronological_split(s)
    assert (len(tr), len(va), len(te)) == (700, 100, 201)
    assert tr.values[-1] + 1 == va.values[0] and va.values[-1] + 1 == te.values[0]


def test_split_spec_must_sum_to_one():
    with pytest.raises(ValueError):
        SplitSpec(0.7, 0.2, 0.2)


@given(st.integers(10, 300), st.integers(1, 50), st.integers(1, 50), st.integers(1, 30))
def test_window_count_matches_windows(n, L, H, stride):
    if L + H > n:
        with pytest.raises(ValueError):
            window_count(n, L, H, stride)
        return
    x = np.arange(float(n))
    pairs = make_windows(x, L, H, stride)
    assert len(pairs) == window_count(n, L, H, stride) == (n - L - H) // stride + 1
    for i, (h, t) in enumerate(pairs):
        assert h[0] == i * stride and t[0] == h[-1] + 1 and len(t) == H


def test_stack_windows_shapes():
    h, t = stack_windows(np.arange(50.0), 10, 5, 5)
    assert h.shape == (8, 10) and t.shape == (8, 5)


def test_csv_round_trip(tmp_path, rng):
    x = rng.normal(size=30)
    x[3] = np.nan
    path = tmp_path / "d.csv"
    write_ett_csv(path, {"OT": x, "HUFL": np.arange(30.0)})
    s = read_ett_csv(path, "OT")
    assert not s.observed[3]
    np.testing.assert_array_equal(s.values[~np.isnan(x)], x[~np.isnan(x)])
    assert s.start == "2016-07-01 00:00:00"
    with pytest.raises(DataError):
        read_ett_csv(path, "missing")


def test_prepare_uses_train_statistics(rng):
    x = np.concatenate([rng.normal(0, 1, 700), rng.normal(5, 1, 300)])
    tr, va, te, norm = prepare(TimeSeries(x))
    assert abs(tr.values.mean()) < 1e-12
    assert te.values.mean() > 3.0
    assert math.isclose(norm.std, float(np.std(clip_outliers_3sigma(TimeSeries(x)).values[:700])))


def test_timeseries_is_read_only():
    s = TimeSeries(np.arange(3.0))
    with pytest.raises(ValueError):
        s.values[0] = 9.0
