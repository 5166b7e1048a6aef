import math

import numpy as np
import pytest

from ledlink.codec import OokTiming, bit_error_rate, deframe, frame_payload, ook_encode
from ledlink.errors import ConfigurationError, SyncError
from ledlink.optics import SpectrumWindow
from ledlink.presets import load_presets
from ledlink.receivers import (
    ApdProfile,
    CameraProfile,
    apd_capture,
    apd_receive,
    camera_capture,
    camera_decode,
    nyquist_limit,
)
from ledlink.trace import OPTICAL_WATTS, SignalTrace

LIB = load_presets()
CAM = CameraProfile(240.0)
P = 1e-6


def light(bits, rate, fs, level=P, lead=0):
    bits = np.concatenate((np.zeros(lead, dtype=np.uint8), np.asarray(bits, dtype=np.uint8), np.zeros(lead, dtype=np.uint8)))
    drive = ook_encode(bits, OokTiming(rate), fs)
    return SignalTrace(drive.samples * level, fs, OPTICAL_WATTS)


def alternating(n):
    return np.arange(n) % 2 == 0


# --- camera ------------------------------------------------------------------------

def test_nyquist_limit():
    assert nyquist_limit(240) == 120
    assert nyquist_limit(480) == 240
    with pytest.raises(ConfigurationError):
        nyquist_limit(0)


def test_camera_profile_validation():
    with pytest.raises(ConfigurationError):
        CameraProfile(240, exposure_fraction=0)


def test_camera_constant_light():
    frames = camera_capture(SignalTrace(np.full(96_000, P), 9600 * 10, OPTICAL_WATTS), CAM, phase=0.0)
    assert len(frames) > 0
    np.testing.assert_allclose(frames.values, P, rtol=1e-9)


def test_camera_at_half_fps_aligned_sees_full_amplitude():
    bits = alternating(60)
    frames = camera_capture(light(bits, 120, 24_000), CAM, phase=0.0)
    expected = np.repeat(bits.astype(float), 2)[: len(frames)] * P
    np.testing.assert_allclose(frames.values, expected, atol=1e-9 * P)


def test_camera_at_fps_straddles_and_collapses_contrast():
    bits = alternating(240)
    frames = camera_capture(light(bits, 240, 48_000), CAM, phase=0.5 / 240)
    np.testing.assert_allclose(frames.values, 0.5 * P, rtol=1e-6)


def _contrast(rate):
    bits = alternating(int(rate * 2))
    frames = camera_capture(light(bits, rate, 100 * 240), CAM, phase=0.0)
    return float(np.mean(np.abs(2 * frames.values / P - 1)))


def test_camera_contrast_is_highest_at_nyquist():
    at_limit = _contrast(120)
    assert at_limit == pytest.approx(1.0)
    for rate in (121, 130, 150, 200, 240, 300):
        assert _contrast(rate) < at_limit


def test_camera_requires_oversampled_light():
    with pytest.raises(ConfigurationError):
        camera_capture(SignalTrace(np.zeros(100), 1000, OPTICAL_WATTS), CAM)


def test_camera_decodes_500_bytes_at_119_bps():
    payload = np.random.default_rng(8).bytes(500)
    frame = frame_payload(payload)
    tr = light(frame, 119, 9600, lead=16)
    frames = camera_capture(tr, CAM, seed=3)
    out = camera_decode(frames, 119)
    assert deframe(out) == payload


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_camera_above_nyquist_fails(seed):
    frame = frame_payload(np.random.default_rng(seed).bytes(64))
    tr = light(frame, 150, 15_000, lead=16)
    try:
        out = camera_decode(camera_capture(tr, CAM, seed=seed), 150)
    except SyncError:
        return
    assert bit_error_rate(frame, out[: frame.size]) > 0.10


def test_camera_dark_video_is_sync_error():
    frames = camera_capture(SignalTrace(np.zeros(48_000), 9600, OPTICAL_WATTS), CAM)
    with pytest.raises(SyncError):
        camera_decode(frames, 100)


def test_camera_noise_is_seeded():
    cam = CameraProfile(240.0, luminance_noise_sigma=0.05)
    tr = light(alternating(40), 100, 24_000)
    a = camera_capture(tr, cam, seed=5)
    b = camera_capture(tr, cam, seed=5)
    assert a.values.tobytes() == b.values.tobytes()
    assert a.phase == b.phase


# --- APD ---------------------------------------------------------------------------

APD = LIB.apd("apd")
GREEN = LIB.led("yealink-green").emission_wavelength_nm


def test_apd_noise_sigma_formula():
    expected = APD.nep * math.sqrt(APD.f_3db) * APD.responsivity.peak_response * APD.transimpedance
    assert APD.noise_sigma == pytest.approx(expected)


def test_apd_dark_output_is_noise_floor():
    out = apd_capture(SignalTrace(np.zeros(1_000_000), 4e6, OPTICAL_WATTS), APD, GREEN, seed=1)
    assert out.samples.std() == pytest.approx(APD.noise_sigma, rel=0.10)
    assert abs(out.samples.mean()) < 5 * APD.noise_sigma / 1000


def test_apd_minus_3db_at_cutoff():
    fs = 100 * APD.f_3db
    n = 100
    x = np.tile(np.concatenate((np.ones(n // 2), np.zeros(n // 2))), 300) * P
    out = apd_capture(SignalTrace(x, fs, OPTICAL_WATTS), APD, GREEN, noise=False).samples
    skip = 100 * n
    t = np.arange(x.size - skip) / fs

    def fundamental(v):
        return 2 * abs(np.mean((v - v.mean()) * np.exp(-2j * np.pi * APD.f_3db * t)))

    gain = fundamental(out[skip:]) / fundamental(x[skip:] * APD.volts_per_watt(GREEN))
    assert gain == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_apd_is_linear_without_noise():
    tr = light(np.random.default_rng(1).integers(0, 2, 50), 1e3, 4e4)
    a = apd_capture(tr, APD, GREEN, noise=False).samples
    b = apd_capture(tr.replace(samples=2 * tr.samples), APD, GREEN, noise=False).samples
    np.testing.assert_allclose(b, 2 * a, rtol=1e-12)


def test_apd_noise_is_seeded():
    tr = SignalTrace(np.zeros(1000), 1e6, OPTICAL_WATTS)
    a = apd_capture(tr, APD, GREEN, seed=4).samples
    assert a.tobytes() == apd_capture(tr, APD, GREEN, seed=4).samples.tobytes()
    assert not np.array_equal(a, apd_capture(tr, APD, GREEN, seed=5).samples)


def test_apd_blue_response_is_weaker_than_green():
    blue = LIB.led("yealink-display").emission_wavelength_nm
    assert 0 < APD.volts_per_watt(blue) < APD.volts_per_watt(GREEN)


def test_apd_warns_outside_band():
    with pytest.warns(UserWarning, match="outside"):
        apd_capture(SignalTrace(np.ones(10), 1e6, OPTICAL_WATTS), APD, 2000.0, noise=False)


def test_apd_profile_validation():
    with pytest.raises(ConfigurationError):
        ApdProfile(SpectrumWindow(700, 400, 1000, 0.0), 50, 1e5, 1e-15, 1e6)


def test_apd_receive_strong_signal():
    payload = np.random.default_rng(2).bytes(100)
    frame = frame_payload(payload)
    timing = OokTiming(1e3)
    level = 10 * APD.noise_sigma / APD.volts_per_watt(GREEN)
    tr = light(frame, 1e3, 4e4, level=level, lead=16)
    assert deframe(apd_receive(tr, APD, timing, GREEN, seed=0)) == payload
