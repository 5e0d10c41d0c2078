"""Adaptive ride filtering from speed and acceleration traces.

Two event detectors mark potentially interesting moments: sharp drops in
GPS speed (a smoothed-derivative filter) and bursts in accelerometer
magnitude (short-term over long-term smoothed ratio). Images are kept
only inside a window around some event.

The filter bandwidths are sigmas in seconds on a uniformly resampled
grid: speed is resampled at 1 Hz, acceleration at its nominal 10 Hz.
"""

from dataclasses import dataclass

import numpy as np

GRAVITY = 9.81  # m/s^2

SPEED_GRID_HZ = 1.0
ACCEL_GRID_HZ = 10.0


@dataclass
class SpeedTrace:
    timestamps: np.ndarray  # seconds, strictly increasing
    speeds: np.ndarray      # km/h, nonnegative

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.speeds = np.asarray(self.speeds, dtype=np.float64)
        _check_trace(self.timestamps, self.speeds.ndim == 1
                     and self.speeds.shape == self.timestamps.shape)
        if (self.speeds < 0).any():
            raise ValueError("speeds must be nonnegative")


@dataclass
class AccelTrace:
    timestamps: np.ndarray  # seconds, strictly increasing
    xyz: np.ndarray         # (n, 3) m/s^2

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        self.xyz = np.asarray(self.xyz, dtype=np.float64)
        _check_trace(self.timestamps, self.xyz.ndim == 2
                     and self.xyz.shape == (self.timestamps.shape[0], 3))


def _check_trace(ts, shape_ok):
    if ts.ndim != 1 or not shape_ok:
        raise ValueError("malformed trace")
    if ts.shape[0] >= 2 and not (np.diff(ts) > 0).all():
        raise ValueError("timestamps must be strictly increasing")


@dataclass
class FilterConfig:
    speed_sigma: float = 2.0          # s, derivative-of-Gaussian bandwidth
    speed_drop_threshold: float = 1.0  # km/h per second of deceleration
    accel_sigma_short: float = 1.5    # s
    accel_sigma_long: float = 10.0    # s
    ratio_k: float = 2.8
    keep_window: float = 3.0          # s

    def __post_init__(self):
        if min(self.speed_sigma, self.accel_sigma_short, self.accel_sigma_long) <= 0:
            raise ValueError("filter bandwidths must be positive")
        if self.ratio_k <= 1:
            raise ValueError("ratio threshold must exceed 1")


def _resample(ts, values, hz):
    dt = 1.0 / hz
    grid = ts[0] + dt * np.arange(int(np.floor((ts[-1] - ts[0]) * hz)) + 1)
    return grid, np.interp(grid, ts, values)


def _gaussian_kernel(sigma, dt):
    radius = int(np.ceil(4.0 * sigma / dt))
    t = dt * np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _dog_kernel(sigma, dt):
    # Normalized so a linear signal yields exactly its slope per second.
    radius = int(np.ceil(4.0 * sigma / dt))
    i = np.arange(-radius, radius + 1)
    t = dt * i
    k = -t / sigma ** 2 * np.exp(-0.5 * (t / sigma) ** 2)
    return k / (-dt * np.sum(i * k))


def _convolve_reflect(values, kernel):
    radius = (kernel.shape[0] - 1) // 2
    padded = np.pad(values, radius, mode="reflect")
    return np.convolve(padded, kernel, mode="valid")


def _run_peaks(grid, exceeded, magnitude):
    """Collapse each contiguous exceedance run to its strongest timestamp."""
    events = []
    start = None
    for i, on in enumerate(np.append(exceeded, False)):
        if on and start is None:
            start = i
        elif not on and start is not None:
            peak = start + int(np.argmax(magnitude[start:i]))
            events.append(float(grid[peak]))
            start = None
    return events


def speed_events(trace, config=None):
    """Timestamps of decelerations stronger than the configured drop rate."""
    if config is None:
        config = FilterConfig()
    if trace.timestamps.shape[0] < 3:
        raise ValueError("need at least 3 speed samples")
    grid, v = _resample(trace.timestamps, trace.speeds, SPEED_GRID_HZ)
    kernel = _dog_kernel(config.speed_sigma, 1.0 / SPEED_GRID_HZ)
    if grid.shape[0] < 2:
        return []
    deriv = _convolve_reflect(v, kernel)  # km/h per second
    decel = -deriv
    return _run_peaks(grid, decel > config.speed_drop_threshold, decel)


def accel_events(trace, config=None):
    """Timestamps where short-term smoothed acceleration magnitude exceeds
    ratio_k times the long-term average."""
    if config is None:
        config = FilterConfig()
    if trace.timestamps.shape[0] < 3:
        raise ValueError("need at least 3 acceleration samples")
    norm = np.sqrt(np.sum(trace.xyz ** 2, axis=1))
    grid, a = _resample(trace.timestamps, norm, ACCEL_GRID_HZ)
    if grid.shape[0] < 2:
        return []
    dt = 1.0 / ACCEL_GRID_HZ
    short = _convolve_reflect(a, _gaussian_kernel(config.accel_sigma_short, dt))
    long = _convolve_reflect(a, _gaussian_kernel(config.accel_sigma_long, dt))
    ratio = short / np.maximum(long, 0.01 * GRAVITY)
    return _run_peaks(grid, ratio > config.ratio_k, ratio)


def filter_images(image_timestamps, speed_evts, accel_evts, keep_window=3.0):
    """Indices of images within keep_window seconds of any event.

    The window is inclusive on both ends; input order is preserved.
    """
    events = np.asarray(sorted(list(speed_evts) + list(accel_evts)))
    kept = []
    for i, t in enumerate(image_timestamps):
        if events.size and np.min(np.abs(events - t)) <= keep_window:
            kept.append(i)
    return kept
