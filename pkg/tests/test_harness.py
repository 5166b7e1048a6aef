import math

import numpy as np
import pytest

from ledlink.codec import OokTiming, PwmTiming, bit_error_rate, frame_payload, pwm_worst_case_rate
from ledlink.errors import ConfigurationError, FitError, TraceFormatError
from ledlink.harness import (
    ScenarioConfig,
    fit_path_model,
    fit_reference_level,
    format_results_csv,
    read_results_csv,
    run_exfiltration,
    run_infiltration,
    run_many,
    sweep,
    write_results_csv,
)
from ledlink.optics import apply_vibration, induced_current, spectral_coupling
from ledlink.presets import load_presets
from ledlink.target import target_receive_report
from ledlink.trace import read_trace_csv, write_trace_csv

LIB = load_presets()


def infil(device, distance, **kw):
    kw.setdefault("payload_bytes", 100)
    return ScenarioConfig("infiltrate", device, distance, **kw)


def exfil(distance, **kw):
    kw.setdefault("payload_bytes", 100)
    return ScenarioConfig("exfiltrate", "yealink", distance, **kw)


# --- configuration ------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        ScenarioConfig("sideways", "rpi", 1.0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig("infiltrate", "rpi", 0.0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig("infiltrate", "rpi", 1.0, repetitions=0)
    with pytest.raises(ConfigurationError):
        ScenarioConfig("infiltrate", "rpi", 1.0, timing=OokTiming(100))
    with pytest.raises(ConfigurationError):
        ScenarioConfig("exfiltrate", "yealink", 1.0, timing=PwmTiming.from_us(40, 15, 15))
    with pytest.raises(ConfigurationError):
        ScenarioConfig("exfiltrate", "yealink", 1.0, drive_current=0.1)


def test_with_param():
    base = exfil(5.0)
    assert base.with_param("distance_m", 10).distance_m == 10.0
    assert base.with_param("bit_rate", 5e4).bit_rate == 5e4
    assert base.with_param("dropout_rate", 3).dropout_rate == 3.0
    with pytest.raises(ConfigurationError):
        infil("rpi", 1.0).with_param("bit_rate", 100)
    with pytest.raises(ConfigurationError):
        base.with_param("colour", 1)


def test_payload_is_seeded():
    assert exfil(5.0, seed=3).payload_data() == exfil(5.0, seed=3).payload_data()
    assert exfil(5.0, payload=b"abc").payload_data() == b"abc"


# --- infiltration ---------------------------------------------------------------------

def test_infiltration_25m_is_error_free():
    res = run_infiltration(infil("tl-wr1043nd", 25.0, seed=7))
    assert res.ber == 0.0
    assert not res.decode_failed
    assert res.decoded_payload == res.config.payload_data()
    assert res.metrics["induced_current_a"] == pytest.approx(20e-6)


def test_capacitor_at_40m_is_error_free():
    res = run_infiltration(infil("rpi-capacitor", 40.0, payload_bytes=30, seed=1))
    assert res.ber == 0.0
    assert res.effective_rate_bps == pytest.approx(res.nominal_rate_bps)


def test_red_laser_cannot_reach_green_led():
    res = run_infiltration(infil("tl-mr3020", 1.0, emitter="red-650"))
    assert res.ber == 1.0
    assert res.decode_failed
    assert "no signal" in res.diagnostics
    assert any("no spectral overlap" in d for d in res.diagnostics)


def test_all_ones_rate_matches_worst_case():
    timing = LIB.device("tl-mr3020").pwm_timing
    res = run_infiltration(infil("tl-mr3020", 0.3, payload=b"\xff" * 200))
    assert res.ber == 0.0
    assert res.effective_rate_bps == pytest.approx(pwm_worst_case_rate(timing), rel=1e-3)


def test_composition_through_trace_files_matches_one_shot(tmp_path):
    """The harness output can be rebuilt stage by stage from a stored trace."""
    cfg = infil("rpi", 40.0, payload_bytes=40, seed=5, keep_traces=True)
    res = run_infiltration(cfg)
    write_trace_csv(res.traces["at_target"], tmp_path / "at_target.csv")
    at_target = read_trace_csv(tmp_path / "at_target.csv")
    assert at_target.equals(res.traces["at_target"])
    dev = LIB.device("rpi")
    laser = LIB.laser(LIB.infiltration.reference_laser)
    eta = spectral_coupling(laser.wavelength_nm, dev.receive_led.absorption_window)
    faded = apply_vibration(at_target, LIB.infiltration.vibration_at(40.0, cfg.seed))
    current = induced_current(faded, eta, dev.receive_led)
    timing = LIB.infiltration.timing_for(40.0, "resistor")
    report = target_receive_report(current, dev, cfg.seed, timing)
    frame = frame_payload(cfg.payload_data())
    assert bit_error_rate(frame, report.bits) == pytest.approx(res.ber)
    assert np.array_equal(current.samples, res.traces["current"].samples)


# --- exfiltration ---------------------------------------------------------------------

def test_apd_5m_is_error_free():
    res = run_exfiltration(exfil(5.0, timing=OokTiming(1e3)))
    assert res.ber == 0.0
    assert res.decoded_payload == res.config.payload_data()
    assert res.effective_rate_bps == 1e3


def test_apd_30m_is_dead():
    res = run_exfiltration(exfil(30.0))
    assert res.decode_failed
    assert res.effective_rate_bps == 0.0
    assert any("decode floor" in d for d in res.diagnostics)


def test_camera_40m_at_nyquist():
    res = run_exfiltration(exfil(40.0, receiver="camera", timing=OokTiming(119)))
    assert res.ber == 0.0


def test_bit_rate_above_led_bandwidth_is_dead():
    res = run_exfiltration(ScenarioConfig("exfiltrate", "yealink-display", 5.0, timing=OokTiming(2e5),
                                          payload_bytes=20))
    assert res.decode_failed
    assert any("exceeds LED bandwidth" in d for d in res.diagnostics)


# --- sweeps and results -------------------------------------------------------------

def test_empty_sweep():
    assert sweep(exfil(5.0), "distance_m", []) == []
    assert format_results_csv([]).strip() == "scenario_id,direction,device,distance_m,rate_bps,ber,diagnostics"


def test_sweep_keeps_value_order():
    values = [20.0, 5.0, 10.0]
    res = sweep(exfil(5.0, payload_bytes=20), "distance_m", values, jobs=1)
    assert [r.config.distance_m for r in res] == values


def test_run_many_parallel_matches_serial():
    cfgs = [exfil(d, payload_bytes=20, seed=2) for d in (25.0, 5.0)]
    serial = run_many(cfgs, jobs=1)
    parallel = run_many(cfgs, jobs=2)
    assert format_results_csv(serial) == format_results_csv(parallel)


def test_results_are_byte_identical_across_runs(tmp_path):
    cfgs = [infil("rpi", 40.0, payload_bytes=20, seed=3), exfil(20.0, timing=OokTiming(1e5), seed=3)]
    write_results_csv(run_many(cfgs, jobs=1), tmp_path / "a.csv")
    write_results_csv(run_many(cfgs, jobs=1), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_results_csv_round_trip(tmp_path):
    res = run_many([exfil(5.0, payload_bytes=20), exfil(30.0, payload_bytes=20)], jobs=1)
    write_results_csv(res, tmp_path / "r.csv")
    rows = read_results_csv(tmp_path / "r.csv")
    assert [r["distance_m"] for r in rows] == [5.0, 30.0]
    assert rows[0]["ber"] == 0.0
    assert "link dead" in rows[1]["diagnostics"]


def test_results_csv_errors(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("a,b\n")
    with pytest.raises(TraceFormatError, match="line 1"):
        read_results_csv(p)
    p.write_text("scenario_id,direction,device,distance_m,rate_bps,ber,diagnostics\nx,y,z,1,2\n")
    with pytest.raises(TraceFormatError, match="line 2"):
        read_results_csv(p)


# --- fitting ------------------------------------------------------------------------

def test_inverse_square_fit():
    pts = [(d, 3.0 / d**2) for d in (1, 2, 4, 8)]
    fit = fit_path_model(pts)
    assert fit.alpha == pytest.approx(2.0, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.model.reference_gain == pytest.approx(3.0)


def test_fit_needs_three_points():
    with pytest.raises(FitError):
        fit_path_model([(1, 1.0), (2, 0.25)])
    with pytest.raises(FitError):
        fit_path_model([(1, 1.0), (1, 0.5), (1, 0.2)])


def test_fit_reference_level_with_fixed_exponent():
    pts = [(d, 0.5 * (5 / d) ** 1.8) for d in (5, 10, 20)]
    assert fit_reference_level(pts, 1.8, 5.0) == pytest.approx(0.5)
    assert math.isclose(fit_reference_level(pts, 1.8, 10.0), 0.5 * 0.5**1.8)
