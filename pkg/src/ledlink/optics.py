"""Emitters, free-space propagation, spectral coupling and vibration fading."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .errors import ConfigurationError
from .trace import AMPERES, BINARY, OPTICAL_WATTS, SignalTrace

FLAT_TOP_FRACTION = 0.6


@dataclass(frozen=True)
class SpectrumWindow:
    """Trapezoidal spectral response.

    The response equals ``peak_response`` over the central 60 % of
    ``[low_nm, high_nm]`` and falls linearly to zero at both band edges.
    """

    center_nm: float
    low_nm: float
    high_nm: float
    peak_response: float = 1.0

    def __post_init__(self):
        if not self.low_nm < self.center_nm < self.high_nm:
            raise ConfigurationError(
                f"need low_nm < center_nm < high_nm, got {self.low_nm}, {self.center_nm}, {self.high_nm}"
            )
        if self.peak_response < 0:
            raise ConfigurationError("peak_response must be non-negative")

    @property
    def flat_top(self):
        ramp = 0.5 * (1 - FLAT_TOP_FRACTION) * (self.high_nm - self.low_nm)
        return self.low_nm + ramp, self.high_nm - ramp

    def response(self, wavelength_nm):
        lam = np.asarray(wavelength_nm, dtype=float)
        a, b = self.flat_top
        rise = (lam - self.low_nm) / (a - self.low_nm)
        fall = (self.high_nm - lam) / (self.high_nm - b)
        shape = np.clip(np.minimum(rise, fall), 0.0, 1.0)
        out = self.peak_response * shape
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LaserProfile:
    """Laser with a piecewise-linear drive-current to optical-power curve.

    Above the last calibration point the curve is extrapolated along its last
    segment; ``measured_max_current_a`` records where the measurements stop.
    """

    name: str
    wavelength_nm: float
    current_points_a: tuple
    power_points_w: tuple
    max_current_a: float
    modulation_bandwidth_hz: float

    def __post_init__(self):
        i = np.asarray(self.current_points_a, dtype=float)
        p = np.asarray(self.power_points_w, dtype=float)
        if i.size < 2 or i.size != p.size:
            raise ConfigurationError("power curve needs at least two matching points")
        if i[0] != 0 or p[0] != 0:
            raise ConfigurationError("power curve must start at (0 A, 0 W)")
        if np.any(np.diff(i) <= 0):
            raise ConfigurationError("current points must be strictly increasing")
        if np.any(np.diff(p) < 0):
            raise ConfigurationError("power curve must be non-decreasing")
        if self.max_current_a <= 0 or self.modulation_bandwidth_hz <= 0:
            raise ConfigurationError("max_current_a and modulation_bandwidth_hz must be positive")
        object.__setattr__(self, "current_points_a", tuple(float(v) for v in i))
        object.__setattr__(self, "power_points_w", tuple(float(v) for v in p))

    @property
    def measured_max_current_a(self):
        return self.current_points_a[-1]

    def power(self, current_a):
        """Optical output in watts at ``current_a`` (clamped to [0, max_current_a])."""
        c = min(max(float(current_a), 0.0), self.max_current_a)
        i, p = self.current_points_a, self.power_points_w
        if c <= i[-1]:
            return float(np.interp(c, i, p))
        slope = (p[-1] - p[-2]) / (i[-1] - i[-2])
        return p[-1] + slope * (c - i[-1])

    def is_extrapolated(self, current_a):
        return current_a > self.measured_max_current_a


@dataclass(frozen=True)
class LedProfile:
    """An LED used either as a photodetector (infiltration) or emitter (exfiltration)."""

    name: str
    emission_window: SpectrumWindow
    absorption_window: SpectrumWindow
    photo_responsivity: float
    emit_power_burst: float
    emit_bandwidth_3db: float

    def __post_init__(self):
        if self.photo_responsivity <= 0:
            raise ConfigurationError("photo_responsivity must be positive")
        if self.emit_power_burst < 0:
            raise ConfigurationError("emit_power_burst must be non-negative")
        if self.emit_bandwidth_3db <= 0:
            raise ConfigurationError("emit_bandwidth_3db must be positive")

    @property
    def emission_wavelength_nm(self):
        return self.emission_window.center_nm


@dataclass(frozen=True)
class PathModel:
    """Power-law free-space gain, ``g(d) = g_ref * (d_ref / d) ** alpha``.

    Distances closer than the reference are clamped to ``reference_gain``;
    beyond ``max_distance_m`` the link is dead and the gain is zero.
    """

    reference_distance_m: float
    attenuation_exponent: float
    reference_gain: float
    max_distance_m: float = math.inf

    def __post_init__(self):
        if self.reference_distance_m <= 0 or self.reference_gain <= 0:
            raise ConfigurationError("reference distance and gain must be positive")
        if self.attenuation_exponent < 0:
            raise ConfigurationError("attenuation exponent must be non-negative")
        if self.max_distance_m <= 0:
            raise ConfigurationError("max_distance_m must be positive")

    def gain(self, distance_m):
        if distance_m <= 0:
            raise ConfigurationError(f"distance must be positive, got {distance_m}")
        if distance_m > self.max_distance_m:
            return 0.0
        d = max(distance_m, self.reference_distance_m)
        return self.reference_gain * (self.reference_distance_m / d) ** self.attenuation_exponent

    def with_gain(self, reference_gain):
        return PathModel(
            self.reference_distance_m, self.attenuation_exponent, reference_gain, self.max_distance_m
        )


@dataclass(frozen=True)
class VibrationModel:
    """Pointing jitter modelled as Poisson-timed multiplicative dropouts."""

    dropout_rate: float = 0.0
    dropout_duration: float = 0.0
    depth: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.dropout_rate < 0 or self.dropout_duration < 0:
            raise ConfigurationError("dropout rate and duration must be non-negative")
        if not 0.0 <= self.depth <= 1.0:
            raise ConfigurationError("depth must lie in [0, 1]")

    @property
    def is_identity(self):
        return self.dropout_rate == 0 or self.depth == 0 or self.dropout_duration == 0

    def intervals(self, duration_s):
        """Dropout ``(start, end)`` times within ``[0, duration_s)``.

        Events are drawn sequentially in fixed-size batches, so the event
        list for a longer duration extends the list for a shorter one.
        """
        if self.is_identity or duration_s <= 0:
            return np.zeros((0, 2))
        rng = np.random.default_rng(self.rng_seed)
        starts, lengths = [], []
        t = 0.0
        while t < duration_s:
            gaps = rng.exponential(1.0 / self.dropout_rate, 1024)
            durs = rng.exponential(self.dropout_duration, 1024)
            s = t + np.cumsum(gaps)
            starts.append(s)
            lengths.append(durs)
            t = s[-1]
        s = np.concatenate(starts)
        d = np.concatenate(lengths)
        keep = s < duration_s
        return np.column_stack((s[keep], s[keep] + d[keep]))


def first_order_lowpass(samples, cutoff_hz, sample_rate, initial=0.0):
    """Step-invariant discretisation of ``H(s) = 1 / (1 + s / (2 pi f_c))``."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return x.copy()
    a = math.exp(-2.0 * math.pi * cutoff_hz / sample_rate)
    zi = np.array([a * initial])
    y, _ = lfilter([1.0 - a], [1.0, -a], x, zi=zi)
    return y


def laser_emit(drive, profile, drive_current):
    """Map a binary drive trace to optical power at the laser aperture."""
    drive.require_unit(BINARY, "laser drive")
    if drive_current > profile.max_current_a:
        raise ConfigurationError(
            f"{profile.name}: drive current {drive_current} A exceeds max {profile.max_current_a} A"
        )
    level = profile.power(drive_current)
    return SignalTrace((drive.samples >= 0.5) * level, drive.sample_rate, OPTICAL_WATTS)


def spectral_coupling(laser_wavelength_nm, absorption):
    """Fraction of the LED's peak absorption reached at the laser wavelength."""
    if laser_wavelength_nm <= 0:
        raise ConfigurationError("wavelength must be positive")
    return absorption.response(laser_wavelength_nm)


def propagate(trace, path, distance_m):
    """Attenuate an optical trace over ``distance_m`` of free space."""
    trace.require_unit(OPTICAL_WATTS, "propagated trace")
    return trace.replace(samples=trace.samples * path.gain(distance_m))


def induced_current(trace, eta, led):
    """Photocurrent driven through an LED by incident optical power."""
    trace.require_unit(OPTICAL_WATTS, "incident light")
    return trace.replace(samples=trace.samples * (eta * led.photo_responsivity), unit=AMPERES)


def led_emit(drive, led):
    """Optical output of an LED driven by a binary trace, band-limited to its 3 dB bandwidth."""
    drive.require_unit(BINARY, "LED drive")
    x = (drive.samples >= 0.5) * led.emit_power_burst
    y = first_order_lowpass(x, led.emit_bandwidth_3db, drive.sample_rate)
    return SignalTrace(y, drive.sample_rate, OPTICAL_WATTS)


def dropout_factor(n_samples, sample_rate, model):
    """Per-sample multiplier ``1 - depth`` inside dropouts, 1 elsewhere."""
    if model.is_identity or n_samples == 0:
        return np.ones(n_samples)
    return interval_factor(n_samples, sample_rate, model.intervals(n_samples / sample_rate), model.depth)


def interval_factor(n_samples, sample_rate, intervals, depth):
    """Multiplier ``1 - depth`` on samples whose instant lies in any ``[start, end)`` interval."""
    factor = np.ones(n_samples)
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.size == 0 or n_samples == 0:
        return factor
    lo = np.clip(np.ceil(iv[:, 0] * sample_rate - 1e-9), 0, n_samples).astype(np.int64)
    hi = np.clip(np.ceil(iv[:, 1] * sample_rate - 1e-9), 0, n_samples).astype(np.int64)
    mark = np.zeros(n_samples + 1, dtype=np.int64)
    np.add.at(mark, lo, 1)
    np.add.at(mark, hi, -1)
    inside = np.cumsum(mark[:-1]) > 0
    factor[inside] = 1.0 - depth
    return factor


def apply_vibration(trace, model):
    """Apply seeded dropout fading to any trace; the identity when the rate is zero."""
    if model.is_identity:
        return trace
    return trace.replace(samples=trace.samples * dropout_factor(len(trace), trace.sample_rate, model))
