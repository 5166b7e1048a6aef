"""Scenario composition, sweeps, path-model fitting and results persistence."""

from __future__ import annotations

import csv
import io
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .codec import (
    PREAMBLE,
    OokTiming,
    PwmTiming,
    bit_error_rate,
    bytes_to_bits,
    deframe,
    frame_payload,
    ook_decode,
    pwm_encode,
)
from .errors import ConfigurationError, DecodeError, FitError, SyncError, TraceFormatError
from .optics import (
    PathModel,
    apply_vibration,
    induced_current,
    laser_emit,
    propagate,
    spectral_coupling,
)
from .presets import load_presets
from .receivers import ApdProfile, CameraProfile, apd_capture, camera_capture, camera_decode, nyquist_limit
from .target import target_receive_report, target_transmit
from .trace import OPTICAL_WATTS, SignalTrace

DIRECTIONS = ("infiltrate", "exfiltrate")
SWEEP_PARAMETERS = ("distance_m", "bit_rate", "drive_current", "dropout_rate")
RESULT_COLUMNS = ("scenario_id", "direction", "device", "distance_m", "rate_bps", "ber", "diagnostics")

PWM_SAMPLES_PER_SHORTEST_RUN = 100
APD_SAMPLES_PER_SECOND = 4e6
APD_MIN_SAMPLES_PER_BIT = 20
APD_MAX_SAMPLES_PER_BIT = 80
CAMERA_OVERSAMPLING = 40
DEFAULT_APD_RATE = 1000.0


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulated transmission, repeated ``repetitions`` times with seeds ``seed + r``.

    ``emitter`` names a laser preset for infiltration or an LED preset that
    replaces the device's transmit LED for exfiltration. ``payload=None``
    draws ``payload_bytes`` random bytes from ``seed``.
    """

    direction: str
    device: str
    distance_m: float
    emitter: str | None = None
    receiver: str | None = None
    timing: PwmTiming | OokTiming | None = None
    payload: bytes | None = None
    payload_bytes: int = 1000
    repetitions: int = 1
    seed: int = 0
    drive_current: float | None = None
    dropout_rate: float | None = None
    keep_traces: bool = False

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ConfigurationError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not self.distance_m > 0:
            raise ConfigurationError("distance_m must be positive")
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be at least 1")
        if self.payload is None and self.payload_bytes < 0:
            raise ConfigurationError("payload_bytes must be non-negative")
        if self.direction == "infiltrate":
            if self.timing is not None and not isinstance(self.timing, PwmTiming):
                raise ConfigurationError("infiltration needs PWM timing")
            if self.receiver is not None:
                raise ConfigurationError("infiltration has no attacker-side receiver")
        else:
            if self.timing is not None and not isinstance(self.timing, OokTiming):
                raise ConfigurationError("exfiltration needs OOK timing")
            if self.drive_current is not None:
                raise ConfigurationError("drive_current applies to infiltration only")

    @property
    def bit_rate(self):
        return self.timing.bit_rate if isinstance(self.timing, OokTiming) else None

    def with_param(self, parameter, value):
        """Copy with one sweepable parameter changed."""
        if parameter == "distance_m":
            return replace(self, distance_m=float(value))
        if parameter == "bit_rate":
            if self.direction != "exfiltrate":
                raise ConfigurationError("bit_rate sweeps apply to exfiltration; infiltration uses PWM timing")
            return replace(self, timing=OokTiming(float(value)))
        if parameter == "drive_current":
            return replace(self, drive_current=float(value))
        if parameter == "dropout_rate":
            return replace(self, dropout_rate=float(value))
        raise ConfigurationError(f"parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")

    def payload_data(self):
        if self.payload is not None:
            return bytes(self.payload)
        return np.random.default_rng(self.seed).bytes(self.payload_bytes)


@dataclass
class ScenarioResult:
    """Outcome of a scenario, averaged over its repetitions."""

    config: ScenarioConfig
    ber: float
    effective_rate_bps: float
    decoded_payload: bytes | None
    repetition_bers: list
    diagnostics: list = field(default_factory=list)
    decode_failed: bool = False
    nominal_rate_bps: float = 0.0
    metrics: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    @property
    def scenario_id(self):
        return scenario_id(self.config, self.nominal_rate_bps)

    def row(self):
        cfg = self.config
        return {
            "scenario_id": self.scenario_id,
            "direction": cfg.direction,
            "device": cfg.device,
            "distance_m": f"{cfg.distance_m:g}",
            "rate_bps": f"{self.effective_rate_bps:.10g}",
            "ber": f"{self.ber:.10g}",
            "diagnostics": "; ".join(self.diagnostics),
        }


def scenario_id(cfg, rate_bps):
    return f"{cfg.direction}:{cfg.device}:{cfg.distance_m:g}m:{rate_bps:.6g}bps:seed{cfg.seed}"


def pwm_sample_rate(timing):
    """Simulation rate giving ``PWM_SAMPLES_PER_SHORTEST_RUN`` samples on the shortest run, rounded up to 1 kHz."""
    fs = PWM_SAMPLES_PER_SHORTEST_RUN / min(timing.t_zero, timing.t_off)
    return float(math.ceil(fs / 1e3 - 1e-9) * 1e3)


def apd_sample_rate(bit_rate):
    spb = int(round(APD_SAMPLES_PER_SECOND / bit_rate))
    spb = min(max(spb, APD_MIN_SAMPLES_PER_BIT), APD_MAX_SAMPLES_PER_BIT)
    return spb * bit_rate


def _payload_airtime(payload_bits, timing):
    ones = int(np.count_nonzero(payload_bits))
    zeros = payload_bits.size - ones
    return ones * timing.t_one + zeros * timing.t_zero + payload_bits.size * timing.t_off


def _try_deframe(bits, diagnostics):
    try:
        return deframe(bits)
    except DecodeError as exc:
        diagnostics.append(f"frame: {exc}")
        return None


def _mean(values):
    return float(np.mean(values)) if values else 0.0


@dataclass(frozen=True)
class InfiltrationSetup:
    """Resolved components of an infiltration scenario."""

    device: object
    laser: object
    timing: PwmTiming
    drive_current: float
    path: PathModel | None
    eta: float
    pinned_current: float


def infiltration_setup(cfg, presets=None):
    """Resolve presets, operating point and calibrated path gain for ``cfg``."""
    lib = presets or load_presets()
    device = lib.device(cfg.device)
    links = lib.infiltration
    circuit = "capacitor" if device.uses_capacitor else "resistor"
    d = cfg.distance_m
    row = links.row_for(d)
    long_range = row is not None
    if long_range:
        ref_laser = lib.laser(links.reference_laser)
        ref_current = row.laser_current_a
    else:
        ref_laser = lib.laser(device.laser)
        ref_current = ref_laser.max_current_a
    laser = lib.laser(cfg.emitter) if cfg.emitter else ref_laser
    timing = cfg.timing
    if timing is None:
        timing = (links.timing_for(d, circuit) if long_range else None) or device.pwm_timing
    drive = ref_current if cfg.drive_current is None else cfg.drive_current
    if laser is not ref_laser and cfg.drive_current is None:
        drive = min(drive, laser.max_current_a)
    led = device.receive_led
    pinned = links.current_at(d)
    eta_ref = spectral_coupling(ref_laser.wavelength_nm, led.absorption_window)
    denom = ref_laser.power(ref_current) * eta_ref * led.photo_responsivity
    gain = pinned / denom if denom > 0 else 0.0
    path = PathModel(d, 2.0, gain) if gain > 0 else None
    eta = spectral_coupling(laser.wavelength_nm, led.absorption_window)
    return InfiltrationSetup(device, laser, timing, drive, path, eta, pinned)


def run_infiltration(cfg, presets=None):
    """Laser to LED to GPIO: frame, PWM, emit, propagate, fade, induce, sample, decode."""
    if cfg.direction != "infiltrate":
        raise ConfigurationError("run_infiltration needs an infiltrate config")
    lib = presets or load_presets()
    s = infiltration_setup(cfg, lib)
    payload = cfg.payload_data()
    bits = frame_payload(payload)
    fs = pwm_sample_rate(s.timing)
    drive = pwm_encode(bits, s.timing, fs)
    emitted = laser_emit(drive, s.laser, s.drive_current)
    if s.path is None:
        at_target = emitted.replace(samples=np.zeros(len(emitted)))
    else:
        at_target = propagate(emitted, s.path, cfg.distance_m)
    diagnostics = []
    if s.eta == 0:
        diagnostics.append(f"no spectral overlap between {s.laser.name} and {s.device.receive_led.name}")
    bers, traces, decoded = [], {}, None
    failed = False
    for r in range(cfg.repetitions):
        seed = cfg.seed + r
        vib = lib.infiltration.vibration_at(cfg.distance_m, seed, cfg.dropout_rate)
        faded = apply_vibration(at_target, vib)
        current = induced_current(faded, s.eta, s.device.receive_led)
        report = target_receive_report(current, s.device, seed, s.timing)
        if report.durations.size == 0:
            ber = 1.0
            failed = True
            if "no signal" not in diagnostics:
                diagnostics.append("no signal")
        else:
            ber = bit_error_rate(bits, report.bits)
        bers.append(ber)
        for note in report.diagnostics:
            if note != "no signal":
                diagnostics.append(f"rep {r}: {note}")
        if r == 0:
            decoded = _try_deframe(report.bits, diagnostics) if report.durations.size else None
            if cfg.keep_traces:
                traces = {"drive": drive, "emitted": emitted, "at_target": at_target,
                          "faded": faded, "current": current}
    ber = _mean(bers)
    pbits = bytes_to_bits(payload)
    airtime = _payload_airtime(pbits, s.timing)
    rate = 0.0 if failed or airtime == 0 else pbits.size * (1.0 - ber) / airtime
    nominal = pbits.size / airtime if airtime else 0.0
    metrics = {
        "induced_current_a": s.pinned_current if s.path is not None else 0.0,
        "coupling": s.eta,
        "drive_current_a": s.drive_current,
        "laser_power_w": s.laser.power(s.drive_current),
    }
    return ScenarioResult(cfg, ber, rate, decoded, bers, diagnostics, failed, nominal, metrics, traces)


def _exfil_components(cfg, lib):
    device = lib.device(cfg.device)
    if cfg.emitter:
        device = replace(device, transmit_led=lib.led(cfg.emitter))
    receiver = lib.receiver(cfg.receiver or "apd")
    if isinstance(receiver, CameraProfile):
        default_rate = nyquist_limit(receiver.fps)
    else:
        default_rate = DEFAULT_APD_RATE
    timing = cfg.timing or OokTiming(default_rate)
    return device, receiver, timing


def run_exfiltration(cfg, presets=None):
    """LED to attacker: frame, OOK, LED emission, propagate, capture, decode."""
    if cfg.direction != "exfiltrate":
        raise ConfigurationError("run_exfiltration needs an exfiltrate config")
    lib = presets or load_presets()
    link = lib.exfiltration
    device, receiver, timing = _exfil_components(cfg, lib)
    payload = cfg.payload_data()
    frame = frame_payload(payload)
    pad = np.zeros(link.lead_in_bits, dtype=np.uint8)
    bits = np.concatenate((pad, frame, pad))
    led = device.transmit_led
    wavelength = led.emission_wavelength_nm
    is_camera = isinstance(receiver, CameraProfile)
    fs = max(20 * timing.bit_rate, CAMERA_OVERSAMPLING * receiver.fps) if is_camera \
        else apd_sample_rate(timing.bit_rate)
    diagnostics = []
    if timing.bit_rate > led.emit_bandwidth_3db:
        # The LED cannot follow the drive at all; report a dead link instead of raising.
        emitted = SignalTrace(np.zeros(0), fs, OPTICAL_WATTS)
        diagnostics.append(
            f"link dead: bit rate {timing.bit_rate:g} bps exceeds LED bandwidth {led.emit_bandwidth_3db:g} Hz"
        )
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            emitted = target_transmit(bits, device, timing, fs)
        diagnostics.extend(str(w.message) for w in caught)
    received = propagate(emitted, link.path, cfg.distance_m)
    gain = link.path.gain(cfg.distance_m)
    metrics = {"path_gain": gain}
    dead = len(emitted) == 0
    if gain == 0:
        dead = True
        diagnostics.append("link dead: beyond maximum distance")
    if isinstance(receiver, ApdProfile):
        level = led.emit_power_burst * gain * receiver.volts_per_watt(wavelength)
        floor = link.decode_floor_snr * receiver.noise_sigma
        metrics.update(high_level_v=level, decode_floor_v=floor, noise_sigma_v=receiver.noise_sigma)
        if not dead and level < floor:
            dead = True
            diagnostics.append(f"link dead: level {level:.4g} V below decode floor {floor:.4g} V")
    bers, traces, decoded = [], {}, None
    sync_failures = 0
    for r in range(cfg.repetitions):
        seed = cfg.seed + r
        out = None
        captured = None
        if not dead:
            try:
                if is_camera:
                    captured = camera_capture(received, receiver, seed)
                    out = camera_decode(captured, timing.bit_rate)
                else:
                    captured = apd_capture(received, receiver, wavelength, seed)
                    out = ook_decode(captured, timing, threshold=None, preamble=PREAMBLE)
            except SyncError as exc:
                sync_failures += 1
                diagnostics.append(f"rep {r}: sync failure ({exc})")
        if out is None:
            bers.append(1.0)
        else:
            bers.append(bit_error_rate(frame, out[: frame.size]))
        if r == 0:
            if out is not None:
                decoded = _try_deframe(out, diagnostics)
            if cfg.keep_traces:
                traces = {"drive_bits": bits, "emitted": emitted, "received": received}
                if captured is not None:
                    traces["captured"] = captured
    ber = _mean(bers)
    failed = dead or sync_failures > 0 or ber > link.max_decoded_ber
    if failed and not dead and sync_failures == 0:
        diagnostics.append(f"decode failure: BER {ber:.3g} above {link.max_decoded_ber:g}")
    rate = 0.0 if failed else timing.bit_rate * (1.0 - ber)
    return ScenarioResult(cfg, ber, rate, decoded, bers, diagnostics, failed, timing.bit_rate,
                          metrics, traces)


def run_scenario(cfg, presets=None):
    if cfg.direction == "infiltrate":
        return run_infiltration(cfg, presets)
    return run_exfiltration(cfg, presets)


def default_jobs():
    return os.cpu_count() or 1


def run_many(configs, jobs=None):
    """Run scenarios, concurrently when ``jobs > 1``; results keep the input order."""
    configs = list(configs)
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(configs) <= 1:
        return [run_scenario(c) for c in configs]
    with ProcessPoolExecutor(max_workers=min(jobs, len(configs))) as pool:
        return list(pool.map(run_scenario, configs))


def sweep(base, parameter, values, jobs=None):
    """One result per value of ``parameter``, in the order the values were given."""
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigurationError(f"parameter must be one of {SWEEP_PARAMETERS}, got {parameter!r}")
    configs = [base.with_param(parameter, v) for v in values]
    return run_many(configs, jobs)


def format_results_csv(results):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for res in results:
        writer.writerow(res.row())
    return buf.getvalue()


def write_results_csv(results, path):
    Path(path).write_text(format_results_csv(results))


def read_results_csv(path):
    """Parse a results table back into a list of row dicts with numeric fields converted."""
    text = Path(path).read_text()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("empty results file", line=1)
    if tuple(header) != RESULT_COLUMNS:
        raise TraceFormatError(f"bad header {header!r}, expected {','.join(RESULT_COLUMNS)}", line=1)
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(RESULT_COLUMNS):
            raise TraceFormatError(f"expected {len(RESULT_COLUMNS)} fields, got {len(rec)}", line=lineno)
        row = dict(zip(RESULT_COLUMNS, rec))
        try:
            for key in ("distance_m", "rate_bps", "ber"):
                row[key] = float(row[key])
        except ValueError:
            raise TraceFormatError("non-numeric field", line=lineno)
        rows.append(row)
    return rows


@dataclass(frozen=True)
class PathFit:
    """Power-law fit of level against distance."""

    model: PathModel
    r_squared: float
    residuals: tuple
    n_points: int

    @property
    def alpha(self):
        return self.model.attenuation_exponent


def fit_path_model(measurements, reference_distance_m=None):
    """Least-squares fit of ``log(level) = log(a) - alpha * log(d)``.

    The returned model's reference gain is the fitted level at
    ``reference_distance_m`` (default: the smallest measured distance).
    Residuals are in natural-log units.
    """
    pts = [(float(d), float(v)) for d, v in measurements]
    if len(pts) < 3:
        raise FitError(f"need at least 3 measurements, got {len(pts)}")
    d = np.array([p[0] for p in pts])
    v = np.array([p[1] for p in pts])
    if np.any(d <= 0) or np.any(v <= 0):
        raise FitError("distances and levels must all be positive")
    if np.unique(d).size < 2:
        raise FitError("need at least two distinct distances")
    x = np.log(d)
    y = np.log(v)
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_tot = float(np.sum((y - ym) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    alpha = -slope
    if alpha < 0:
        raise FitError(f"levels increase with distance (alpha = {alpha:.3g})")
    d_ref = float(d.min()) if reference_distance_m is None else float(reference_distance_m)
    level_ref = math.exp(intercept + slope * math.log(d_ref))
    model = PathModel(d_ref, alpha, level_ref)
    return PathFit(model, r2, tuple(float(e) for e in resid), len(pts))


def fit_reference_level(measurements, alpha, reference_distance_m):
    """Level at ``reference_distance_m`` that best fits the points in log space for a fixed exponent."""
    pts = [(float(d), float(v)) for d, v in measurements if v is not None and v > 0]
    if not pts:
        raise FitError("no positive measurements")
    logs = [math.log(v) + alpha * math.log(d / reference_distance_m) for d, v in pts]
    return math.exp(sum(logs) / len(logs))


def reproduce_paper_tables(presets=None, jobs=None, repetitions=10, quick=False):
    """Replay the published tables against the simulator; see :mod:`ledlink.regression`."""
    from .regression import reproduce_tables

    return reproduce_tables(presets=presets, jobs=jobs, repetitions=repetitions, quick=quick)
