import numpy as np
import pytest

from forest2fcn.ridefilter import (
    GRAVITY,
    AccelTrace,
    FilterConfig,
    SpeedTrace,
    accel_events,
    filter_images,
    speed_events,
    _dog_kernel,
    _gaussian_kernel,
    _convolve_reflect,
)


def constant_speed_trace(duration=120, speed=20.0):
    t = np.arange(duration, dtype=float)
    return SpeedTrace(t, np.full(duration, speed))


def braking_trace(duration=600, episodes=(150, 400), cruise=20.0, drop_to=3.0):
    t = np.arange(duration, dtype=float)
    v = np.full(duration, cruise)
    for start in episodes:
        for k in range(3):
            v[start + k] = cruise + (drop_to - cruise) * (k + 1) / 3
        v[start + 3:start + 8] = drop_to
        for k in range(5):
            v[start + 8 + k] = drop_to + (cruise - drop_to) * (k + 1) / 5
    return SpeedTrace(t, v)


def gravity_accel_trace(duration=120, hz=10):
    n = int(duration * hz)
    t = np.arange(n) / hz
    xyz = np.zeros((n, 3))
    xyz[:, 2] = GRAVITY
    return AccelTrace(t, xyz)


class TestSpeedEvents:
    def test_constant_speed_no_events(self):
        assert speed_events(constant_speed_trace()) == []

    def test_step_drop_gives_one_event_at_the_step(self):
        t = np.arange(200, dtype=float)
        v = np.where(t < 100, 20.0, 5.0)
        events = speed_events(SpeedTrace(t, v))
        assert len(events) == 1
        assert abs(events[0] - 100.0) <= 1.0

    def test_linear_ramp_response_equals_slope(self):
        # The derivative filter is normalized to be exact on linear
        # signals away from the boundaries.
        slope = -2.5  # km/h per second
        t = np.arange(100, dtype=float)
        v = 300.0 + slope * t
        cfg = FilterConfig()
        kernel = _dog_kernel(cfg.speed_sigma, 1.0)
        deriv = _convolve_reflect(v, kernel)
        mid = deriv[20:-20]
        assert np.abs(mid - slope).max() < 0.02 * abs(slope)
        events = speed_events(SpeedTrace(t, v), cfg)
        assert len(events) == 1  # one long exceedance run collapses to a peak

    def test_too_few_samples_rejected(self):
        with pytest.raises(ValueError):
            speed_events(SpeedTrace(np.array([0.0, 1.0]), np.array([5.0, 5.0])))

    def test_translation_equivariance(self):
        trace = braking_trace()
        shifted = SpeedTrace(trace.timestamps + 1000.0, trace.speeds)
        a = speed_events(trace)
        b = speed_events(shifted)
        assert len(a) == len(b)
        np.testing.assert_allclose(np.asarray(b) - 1000.0, a, atol=1e-9)


class TestAccelEvents:
    def test_gravity_only_no_events(self):
        assert accel_events(gravity_accel_trace()) == []

    def test_strong_burst_detected_once(self):
        trace = gravity_accel_trace(duration=120)
        xyz = trace.xyz.copy()
        burst = (trace.timestamps >= 60.0) & (trace.timestamps < 62.0)
        xyz[burst, 2] = 10 * GRAVITY
        events = accel_events(AccelTrace(trace.timestamps, xyz))
        assert len(events) == 1
        assert 59.0 <= events[0] <= 63.0

    def test_burst_matches_direct_computation_oracle(self):
        cfg = FilterConfig()
        trace = gravity_accel_trace(duration=100)
        xyz = trace.xyz.copy()
        burst = (trace.timestamps >= 50.0) & (trace.timestamps < 52.0)
        xyz[burst, 2] = 10 * GRAVITY
        trace = AccelTrace(trace.timestamps, xyz)
        # Oracle: recompute both smoothed curves from scratch.
        norm = np.sqrt((xyz ** 2).sum(axis=1))
        short = _convolve_reflect(norm, _gaussian_kernel(cfg.accel_sigma_short, 0.1))
        long = _convolve_reflect(norm, _gaussian_kernel(cfg.accel_sigma_long, 0.1))
        ratio = short / np.maximum(long, 0.01 * GRAVITY)
        exceeded = ratio > cfg.ratio_k
        assert exceeded.any()
        events = accel_events(trace, cfg)
        assert len(events) == 1
        run = np.nonzero(exceeded)[0]
        peak_t = trace.timestamps[run[np.argmax(ratio[run])]]
        assert abs(events[0] - peak_t) < 1e-9

    def test_uniform_scaling_leaves_events_unchanged(self):
        trace = gravity_accel_trace(duration=100)
        xyz = trace.xyz.copy()
        burst = (trace.timestamps >= 40.0) & (trace.timestamps < 42.0)
        xyz[burst, 2] = 12 * GRAVITY
        a = accel_events(AccelTrace(trace.timestamps, xyz))
        b = accel_events(AccelTrace(trace.timestamps, 3.0 * xyz))
        assert a == b
        assert len(a) == 1

    def test_translation_equivariance(self):
        trace = gravity_accel_trace(duration=100)
        xyz = trace.xyz.copy()
        xyz[(trace.timestamps >= 40.0) & (trace.timestamps < 42.0), 2] = 12 * GRAVITY
        a = accel_events(AccelTrace(trace.timestamps, xyz))
        b = accel_events(AccelTrace(trace.timestamps + 77.0, xyz))
        np.testing.assert_allclose(np.asarray(b) - 77.0, a, atol=1e-9)


class TestFilterImages:
    def test_no_events_keeps_nothing(self):
        assert filter_images(np.arange(50.0), [], [], keep_window=3.0) == []

    def test_window_membership_is_inclusive(self):
        images = np.arange(20.0)
        kept = filter_images(images, [10.0], [], keep_window=2.0)
        assert kept == [8, 9, 10, 11, 12]

    def test_union_over_both_event_kinds(self):
        images = np.arange(30.0)
        kept = filter_images(images, [5.0], [25.0], keep_window=1.0)
        assert kept == [4, 5, 6, 24, 25, 26]

    def test_monotone_in_window(self):
        rng = np.random.default_rng(1)
        images = np.sort(rng.uniform(0, 100, size=60))
        events = list(rng.uniform(0, 100, size=5))
        small = set(filter_images(images, events, [], keep_window=2.0))
        large = set(filter_images(images, events, [], keep_window=5.0))
        assert small <= large

    def test_constructed_ride_reduction_factor(self):
        trace = braking_trace()
        images = np.arange(600.0)
        s_events = speed_events(trace)
        a_events = accel_events(gravity_accel_trace(duration=600))
        assert a_events == []
        assert len(s_events) >= 2
        kept = filter_images(images, s_events, a_events, keep_window=3.0)
        # Both braking episodes must be represented.
        assert any(148 <= images[i] <= 160 for i in kept)
        assert any(398 <= images[i] <= 410 for i in kept)
        assert len(images) / len(kept) >= 4.0
