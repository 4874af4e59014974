import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from steerode.errors import ConfigError, SamplerDegenerateError
from steerode.sampling import (EndTimeSampler, RngStream, adaptive_grid_end_times,
                               adaptive_half_widths, constrained_t1, sample_end_time,
                               sample_end_times)


def test_stream_reproducible_and_independent():
    a = RngStream(3, 1).uniform(size=5)
    b = RngStream(3, 1).uniform(size=5)
    c = RngStream(3, 2).uniform(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    np.testing.assert_array_equal(RngStream(3).split(1).uniform(size=5), a)


def test_fixed_returns_t1():
    s = EndTimeSampler("fixed", 0.0, 1.0)
    assert sample_end_time(s, RngStream(0)) == 1.0


def test_uniform_zero_width_is_fixed():
    s = EndTimeSampler("uniform", 0.0, 1.0, b=0.0)
    assert sample_end_time(s, RngStream(0)) == 1.0


def test_uniform_ks():
    s = EndTimeSampler("uniform", 0.0, 1.0, b=0.5)
    ref = stats.uniform(loc=0.5, scale=1.0).cdf
    pvals = []
    for seed in range(40):
        T = sample_end_times(s, np.zeros(5000), np.ones(5000), RngStream(seed))
        assert T.min() >= 0.5 and T.max() <= 1.5
        pvals.append(stats.kstest(T, ref).pvalue)
    # p-values of a correct sampler are themselves uniform
    assert stats.kstest(pvals, "uniform").pvalue > 0.001


def test_constrained_shift_window():
    s = EndTimeSampler("uniform", 0.0, 1.0, b=0.375, constrained_shift=True)
    T = sample_end_times(s, np.zeros(5000), np.ones(5000), RngStream(1))
    assert T.max() <= 1.0 and T.min() >= 0.25
    assert s.eval_end_time() == 0.625


def test_bound_violation_is_config_error():
    with pytest.raises(ConfigError) as err:
        EndTimeSampler("uniform", 0.0, 0.125, b=0.2)
    assert err.value.key == "b"
    with pytest.raises(ConfigError):
        EndTimeSampler("uniform", 0.0, 1.0, b=1.0)


def test_near_bound_warns():
    with pytest.warns(UserWarning):
        EndTimeSampler("uniform", 0.0, 1.0, b=1.0 - 1e-9)


def test_gaussian_clipped_and_degenerate():
    s = EndTimeSampler("gaussian", 0.0, 1.0, std=0.1, clip=(0.9, 1.05))
    T = sample_end_times(s, np.zeros(2000), np.ones(2000), RngStream(2), clip=s.clip)
    assert T.min() >= 0.9 and T.max() <= 1.05
    wide = EndTimeSampler("gaussian", 0.0, 0.1, std=1.0)
    with pytest.raises(SamplerDegenerateError):
        sample_end_times(wide, np.zeros(1000), np.full(1000, 0.1), RngStream(0))


def test_gaussian_default_clip_is_three_std():
    s = EndTimeSampler("gaussian", 0.0, 1.0, std=0.05)
    assert s.clip_bounds() == pytest.approx((0.85, 1.15))


def test_unknown_kind():
    with pytest.raises(ConfigError):
        EndTimeSampler("beta")


def test_constrained_t1():
    assert constrained_t1(1.0, 0.375) == 0.625
    with pytest.raises(ConfigError):
        constrained_t1(1.0, 1.0)


def test_adaptive_grid_half_widths():
    times = np.array([0.0, 0.1, 0.4, 0.5])
    np.testing.assert_allclose(adaptive_half_widths(times, 0.01), [0.09, 0.29, 0.09])
    T = adaptive_grid_end_times(times, 0.01, RngStream(0))
    b = adaptive_half_widths(times, 0.01)
    assert np.all(np.abs(T - times[1:]) <= b + 1e-15)
    assert np.all(T > times[:-1])


def test_adaptive_grid_eps_equal_gap_is_fixed():
    times = np.array([0.0, 0.5, 1.0])
    np.testing.assert_allclose(adaptive_grid_end_times(times, 0.5, RngStream(0)), [0.5, 1.0])


def test_adaptive_grid_errors_name_interval():
    with pytest.raises(ConfigError) as err:
        adaptive_grid_end_times([0.0, 1.0, 1.05], 0.1, RngStream(0))
    assert "interval 1" in str(err.value)
    with pytest.raises(ConfigError):
        adaptive_grid_end_times([0.0, 0.0, 1.0], 0.01, RngStream(0))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.01, 3.0), st.floats(0.0, 0.999), st.integers(0, 99))
def test_uniform_always_in_window(t0, width, frac, seed):
    b = frac * width
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = EndTimeSampler("uniform", t0, t0 + width, b=b)
    T = sample_end_times(s, np.full(50, t0), np.full(50, t0 + width), RngStream(seed))
    assert np.all(T > t0)
    assert np.all(np.abs(T - (t0 + width)) <= b + 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), st.integers(0, 50))
def test_adaptive_grid_end_times_strictly_after_start(gaps, seed):
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    eps = 0.5 * min(gaps)
    T = adaptive_grid_end_times(times, eps, RngStream(seed))
    assert np.all(T > times[:-1])
