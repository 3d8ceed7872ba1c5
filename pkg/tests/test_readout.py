"""Tests for readout sampling, smoothing and classification."""

from __future__ import annotations

import numpy as np
import pytest

from fuzzwatch.errors import ConfigurationError
from fuzzwatch.readout import (
    ReadoutClass,
    ReadoutCurve,
    ReadoutProcess,
    classify,
    read_curve_csv,
    sample_readout,
    smooth,
    smooth_values,
    write_curve_csv,
)


def default_process():
    return ReadoutProcess(mean=0.0, stddev=1.0, correlation_time=0.05, bounds=(-3.0, 3.0))


def test_curve_validation():
    with pytest.raises(ConfigurationError):
        ReadoutCurve(np.array([0.0, 0.1, 0.3]), np.zeros(3))  # non-uniform
    with pytest.raises(ConfigurationError):
        ReadoutCurve(np.array([0.0, -0.1]), np.zeros(2))  # decreasing
    with pytest.raises(ConfigurationError):
        ReadoutCurve(np.array([0.0]), np.zeros(1))  # too short
    with pytest.raises(ConfigurationError):
        ReadoutCurve(np.linspace(0, 1, 5), np.array([0, 1, np.nan, 0, 0.0]))
    c = ReadoutCurve(np.linspace(0.0, 1.0, 11), np.zeros(11))
    assert c.n == 11
    assert c.dt == pytest.approx(0.1)


def test_process_validation():
    with pytest.raises(ConfigurationError):
        ReadoutProcess(0.0, -1.0, 0.05, (-3, 3))
    with pytest.raises(ConfigurationError):
        ReadoutProcess(0.0, 1.0, 0.0, (-3, 3))
    with pytest.raises(ConfigurationError):
        ReadoutProcess(0.0, 1.0, 0.05, (3, -3))
    with pytest.raises(ConfigurationError):
        ReadoutProcess(5.0, 1.0, 0.05, (-3, 3))  # mean outside bounds


def test_from_levels_defaults():
    proc = ReadoutProcess.from_levels(-0.5, 0.5, 0.5)
    assert proc.mean == pytest.approx(0.0)
    assert proc.stddev == pytest.approx(1.0)
    assert proc.correlation_time == pytest.approx(0.05)
    assert proc.bounds == (pytest.approx(-3.0), pytest.approx(3.0))
    with pytest.raises(ConfigurationError):
        ReadoutProcess.from_levels(0.5, -0.5, 0.5)


def test_ou_stationary_statistics():
    # sample mean / std / autocorrelation against the exact OU law
    proc = default_process()
    grid = np.linspace(-0.25, 0.75, 401)
    rng = np.random.default_rng(7)
    curves = np.array([sample_readout(proc, grid, rng).values for _ in range(400)])
    flat = curves.ravel()
    assert abs(flat.mean() - proc.mean) < 0.05
    # 3-sigma clipping shaves ~0.25% off the standard deviation
    assert abs(flat.std() - proc.stddev) < 0.05 * proc.stddev
    lag = 20  # 20 * dt = 0.05 = one correlation time
    dt = grid[1] - grid[0]
    prod = np.mean(curves[:, :-lag] * curves[:, lag:])
    expected = proc.stddev**2 * np.exp(-lag * dt / proc.correlation_time)
    assert abs(prod - expected) < 0.05 * expected


def test_sample_determinism_and_bounds():
    proc = default_process()
    grid = np.linspace(-0.25, 0.75, 401)
    a = sample_readout(proc, grid, np.random.default_rng(123)).values
    b = sample_readout(proc, grid, np.random.default_rng(123)).values
    assert np.array_equal(a, b)
    rng = np.random.default_rng(0)
    big = np.array([sample_readout(proc, grid, rng).values for _ in range(200)])
    assert big.max() <= proc.bounds[1]
    assert big.min() >= proc.bounds[0]


def test_zero_stddev_gives_constant_record():
    proc = ReadoutProcess(mean=0.3, stddev=0.0, correlation_time=0.05, bounds=(-3, 3))
    grid = np.linspace(0.0, 1.0, 101)
    curve = sample_readout(proc, grid, np.random.default_rng(5))
    assert np.all(curve.values == 0.3)
    tiny = ReadoutProcess(mean=0.3, stddev=1e-15, correlation_time=0.05, bounds=(-3, 3))
    curve = sample_readout(tiny, grid, np.random.default_rng(5))
    assert np.max(np.abs(curve.values - 0.3)) < 1e-13


def test_smoothing_constant_and_ramp():
    dt = 0.01
    vals = np.full(101, 2.5)
    out = smooth_values(vals, dt, 0.1)
    assert np.allclose(out, 2.5, atol=1e-14)
    ramp = np.linspace(0.0, 1.0, 101)
    out = smooth_values(ramp, dt, 0.1)
    # centered window leaves a linear record unchanged away from the edges
    k = 5
    assert np.allclose(out[k:-k], ramp[k:-k], atol=1e-12)
    # truncated edge window averages only the inside samples
    assert out[0] == pytest.approx(np.mean(ramp[: k + 1]))
    assert out[-1] == pytest.approx(np.mean(ramp[-(k + 1):]))


def test_smoothing_matches_direct_mean():
    rng = np.random.default_rng(11)
    vals = rng.normal(size=200)
    dt = 0.0025
    window = 0.25
    k = round((window / 2) / dt)
    out = smooth_values(vals, dt, window)
    for j in (0, 1, 37, 100, 198, 199):
        lo = max(j - k, 0)
        hi = min(j + k, len(vals) - 1)
        assert out[j] == pytest.approx(np.mean(vals[lo : hi + 1]), rel=1e-12)


def test_smoothing_attenuates_sinusoid():
    # running mean of cos(w t) over 2k+1 samples scales by the Dirichlet kernel
    dt = 0.0025
    t = np.arange(401) * dt
    omega = 2 * np.pi * 8.0
    vals = np.cos(omega * t)
    k = 50
    out = smooth_values(vals, dt, 2 * k * dt)
    gain = np.sin((2 * k + 1) * omega * dt / 2) / ((2 * k + 1) * np.sin(omega * dt / 2))
    mid = slice(k, 401 - k)
    assert np.allclose(out[mid], gain * vals[mid], atol=1e-10)


def test_zero_window_is_identity():
    vals = np.arange(10.0)
    out = smooth_values(vals, 0.1, 0.0)
    assert np.array_equal(out, vals)
    with pytest.raises(ConfigurationError):
        smooth_values(vals, 0.1, -1.0)


def test_classify_endpoints():
    grid = np.linspace(0.0, 1.0, 11)
    low = ReadoutCurve(grid, np.full(11, -0.5))
    high = ReadoutCurve(grid, np.full(11, 0.5))
    up = ReadoutCurve(grid, np.linspace(-0.5, 0.5, 11))
    down = ReadoutCurve(grid, np.linspace(0.5, -0.5, 11))
    assert classify(low, 0.0) is ReadoutClass.E11
    assert classify(high, 0.0) is ReadoutClass.E22
    assert classify(up, 0.0) is ReadoutClass.E12
    assert classify(down, 0.0) is ReadoutClass.E21
    # ties resolve to the upper level
    tie = ReadoutCurve(grid, np.zeros(11))
    assert classify(tie, 0.0) is ReadoutClass.E22


def test_classify_reflection_swaps_levels():
    proc = default_process()
    grid = np.linspace(-0.25, 0.75, 401)
    rng = np.random.default_rng(42)
    swap = {"1": "2", "2": "1"}
    for _ in range(50):
        curve = smooth(sample_readout(proc, grid, rng), 0.25)
        mirrored = ReadoutCurve(grid, 2 * proc.mean - curve.values)
        got = classify(curve, proc.mean).value
        flipped = classify(mirrored, proc.mean).value
        # ties would break the symmetry but have measure zero
        assert flipped == "E" + swap[got[1]] + swap[got[2]]


def test_curve_csv_roundtrip(tmp_path):
    proc = default_process()
    grid = np.linspace(-0.25, 0.75, 401)
    curve = sample_readout(proc, grid, np.random.default_rng(99))
    path = tmp_path / "curve.csv"
    write_curve_csv(path, curve, header_lines=["demo"])
    back = read_curve_csv(path)
    assert np.array_equal(back.times, curve.times)
    assert np.array_equal(back.values, curve.values)
