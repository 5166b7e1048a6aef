"""Attacker-side receivers for exfiltration: frame-integrating camera and avalanche photodetector."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .codec import PREAMBLE, SYNC_THRESHOLD, as_bits, auto_threshold, ook_decode
from .errors import ConfigurationError, SyncError
from .optics import SpectrumWindow, first_order_lowpass
from .trace import OPTICAL_WATTS, VOLTS, SignalTrace

CAMERA_MIN_OVERSAMPLING = 10
CAMERA_OFFSET_STEPS = 512
CONTRAST_MARGIN = 0.01


@dataclass(frozen=True)
class CameraProfile:
    """Frame-integrating video camera."""

    fps: float
    exposure_fraction: float = 1.0
    luminance_noise_sigma: float = 0.0
    sensitivity_floor: float = 0.0

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigurationError("fps must be positive")
        if not 0 < self.exposure_fraction <= 1:
            raise ConfigurationError("exposure_fraction must lie in (0, 1]")
        if self.luminance_noise_sigma < 0 or self.sensitivity_floor < 0:
            raise ConfigurationError("noise sigma and sensitivity floor must be non-negative")


@dataclass(frozen=True)
class ApdProfile:
    """Avalanche photodetector with transimpedance output.

    ``responsivity`` is a spectral window whose peak is in A/W with the
    avalanche gain already included; ``nep`` is in W/sqrt(Hz).
    """

    responsivity: SpectrumWindow
    gain_M: float
    f_3db: float
    nep: float
    transimpedance: float

    def __post_init__(self):
        if self.responsivity.peak_response <= 0:
            raise ConfigurationError("peak responsivity must be positive")
        if self.f_3db <= 0 or self.transimpedance <= 0:
            raise ConfigurationError("f_3db and transimpedance must be positive")
        if self.nep < 0:
            raise ConfigurationError("nep must be non-negative")

    @property
    def noise_sigma(self):
        """Output noise standard deviation in volts."""
        return self.nep * math.sqrt(self.f_3db) * self.responsivity.peak_response * self.transimpedance

    def volts_per_watt(self, wavelength_nm):
        return self.responsivity.response(wavelength_nm) * self.transimpedance


@dataclass(frozen=True)
class FrameSeries:
    """Per-frame luminance with the capture geometry needed to interpret it."""

    values: np.ndarray
    fps: float
    phase: float = 0.0
    exposure_fraction: float = 1.0

    def __len__(self):
        return self.values.size


def nyquist_limit(fps):
    """Highest OOK bit rate a camera at ``fps`` can resolve."""
    if fps <= 0:
        raise ConfigurationError("fps must be positive")
    return fps / 2.0


def _window_means(light, starts, width):
    """Mean of the zero-order-hold signal over ``[s, s + width)`` for each start."""
    fs = light.sample_rate
    integral = np.concatenate(([0.0], np.cumsum(light.samples))) / fs
    grid = np.arange(integral.size) / fs
    lo = np.interp(starts, grid, integral)
    hi = np.interp(starts + width, grid, integral)
    return (hi - lo) / width


def camera_capture(light, cam, seed=0, phase=None):
    """Integrate ``light`` into video frames.

    Frame ``k`` exposes ``[phase + k / fps, phase + (k + e) / fps)``. The
    phase between the camera clock and the signal is drawn from the seed
    unless given. Relative Gaussian noise is applied per frame and values
    below the sensitivity floor are raised to it.
    """
    light.require_unit(OPTICAL_WATTS, "camera input")
    if light.sample_rate < CAMERA_MIN_OVERSAMPLING * cam.fps * (1 - 1e-9):
        raise ConfigurationError(
            f"light sample rate {light.sample_rate:g} Hz is below {CAMERA_MIN_OVERSAMPLING}x fps"
        )
    rng = np.random.default_rng(seed)
    frame_period = 1.0 / cam.fps
    if phase is None:
        phase = float(rng.uniform(0.0, frame_period))
    width = cam.exposure_fraction * frame_period
    n = int(math.floor((light.duration - phase - width) * cam.fps + 1e-9)) + 1
    if len(light) == 0 or n <= 0:
        return FrameSeries(np.zeros(0), cam.fps, phase, cam.exposure_fraction)
    starts = phase + np.arange(n) * frame_period
    frames = _window_means(light, starts, width)
    if cam.luminance_noise_sigma > 0:
        frames = frames * (1.0 + cam.luminance_noise_sigma * rng.standard_normal(n))
    frames = np.maximum(frames, cam.sensitivity_floor)
    return FrameSeries(frames, cam.fps, phase, cam.exposure_fraction)


def _bit_levels(frames, offset, bit_rate, n_bits, guard):
    """Mean of the frames lying inside each bit period with ``guard`` to spare; NaN where none does."""
    f = frames.values
    fp = 1.0 / frames.fps
    tb = 1.0 / bit_rate
    width = frames.exposure_fraction * fp
    starts = np.arange(f.size) * fp - offset
    bit = np.floor(starts / tb).astype(np.int64)
    rel = starts - bit * tb
    ok = (rel >= guard) & (rel + width <= tb - guard) & (bit >= 0) & (bit < n_bits)
    sums = np.bincount(bit[ok], weights=f[ok], minlength=n_bits)
    counts = np.bincount(bit[ok], minlength=n_bits)
    with np.errstate(invalid="ignore", divide="ignore"):
        levels = sums / counts
    return levels


def camera_decode(frames, bit_rate, fps=None, preamble=PREAMBLE, min_score=SYNC_THRESHOLD):
    """Recover an OOK stream from frame luminances.

    The unknown offset between bit clock and frame clock is searched on a
    grid of ``CAMERA_OFFSET_STEPS`` candidates per bit; among offsets that
    reveal the preamble, the one with the most decisive bit levels wins. Only frames that sit inside one bit period with half a
    grid step to spare are trusted, so a trusted frame is guaranteed not to
    straddle a bit edge whatever the true offset. A bit without a trusted
    frame is an erasure and decodes as 0. Returns the bit stream starting at
    the preamble.
    """
    if not isinstance(frames, FrameSeries):
        frames = FrameSeries(np.asarray(frames, dtype=float), fps)
    if fps is not None and not math.isclose(fps, frames.fps):
        raise ConfigurationError("fps does not match the frame series")
    if bit_rate <= 0:
        raise ConfigurationError("bit_rate must be positive")
    f = frames.values
    if f.size == 0:
        raise SyncError("no frames")
    lo, hi = np.percentile(f, [10, 90])
    half = 0.5 * (hi - lo)
    if not half > CONTRAST_MARGIN * max(abs(hi), abs(lo), 1e-300):
        raise SyncError("frame contrast below separability margin")
    thr = auto_threshold(f)
    pre = 2.0 * as_bits(preamble).astype(float) - 1.0
    tb = 1.0 / bit_rate
    n_bits = int(math.floor(f.size / frames.fps * bit_rate))
    if n_bits < pre.size:
        raise SyncError("capture shorter than the preamble")
    guard = 0.5 * tb / CAMERA_OFFSET_STEPS
    best = None
    for step in range(CAMERA_OFFSET_STEPS):
        offset = step * tb / CAMERA_OFFSET_STEPS
        levels = _bit_levels(frames, offset, bit_rate, n_bits, guard)
        v = np.nan_to_num((levels - thr) / half, nan=0.0)
        v = np.clip(v, -1.0, 1.0)
        score = np.correlate(v, pre, mode="valid") / pre.size
        above = np.flatnonzero(score >= min_score)
        if above.size == 0:
            continue
        # Prefer the offset whose bit levels are most decisive over the whole capture.
        confidence = float(np.mean(np.abs(v)))
        first = int(above[0])
        pos = first + int(np.argmax(score[first : first + 3]))
        if best is None or confidence > best[0]:
            best = (confidence, pos, levels)
    if best is None:
        raise SyncError("preamble not found in frame series")
    _, pos, levels = best
    bits = np.where(np.isnan(levels), 0, levels >= thr).astype(np.uint8)
    return bits[pos:]


def apd_capture(light, apd, wavelength_nm, seed=0, noise=True):
    """APD output voltage: band-limited photocurrent times transimpedance plus white noise."""
    light.require_unit(OPTICAL_WATTS, "APD input")
    resp = apd.responsivity.response(wavelength_nm)
    if resp == 0:
        warnings.warn(
            f"{wavelength_nm} nm is outside the APD responsivity band; signal is zero",
            stacklevel=2,
        )
    v = first_order_lowpass(light.samples * resp, apd.f_3db, light.sample_rate) * apd.transimpedance
    sigma = apd.noise_sigma
    if noise and sigma > 0 and v.size:
        rng = np.random.default_rng(seed)
        v = v + rng.normal(0.0, sigma, v.size)
    return SignalTrace(v, light.sample_rate, VOLTS)


def apd_receive(light, apd, timing, wavelength_nm, seed=0, preamble=PREAMBLE):
    """Capture with the APD and OOK-decode with the automatic threshold."""
    volts = apd_capture(light, apd, wavelength_nm, seed)
    return ook_decode(volts, timing, threshold=None, preamble=preamble)
