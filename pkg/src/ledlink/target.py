"""Target-device side: GPIO input circuits, firmware sampling loops and LED transmit."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .codec import PwmDecodeReport, PwmTiming, classify_pulses, high_runs, ook_encode
from .errors import ConfigurationError, NoChargeError
from .optics import LedProfile, led_emit
from .trace import AMPERES

SUPPLY_RAIL_V = 3.3
OOK_SAMPLES_PER_BIT = 20


@dataclass(frozen=True)
class ResistorCircuit:
    """LED tied to the GPIO with a pull-down resistor; the pin reads high once I*R crosses the threshold."""

    pulldown_ohms: float
    v_threshold: float
    series_ohms: float = 0.0

    def __post_init__(self):
        if self.pulldown_ohms <= 0:
            raise ConfigurationError("pulldown_ohms must be positive")
        if self.v_threshold < 0:
            raise ConfigurationError("v_threshold must be non-negative")


@dataclass(frozen=True)
class CapacitorCircuit:
    """LED charging a capacitor between GPIO and ground; needs charge/read/discharge sampling."""

    capacitance_f: float
    v_threshold: float
    discharge_time: float
    supply_v: float = SUPPLY_RAIL_V

    def __post_init__(self):
        if self.capacitance_f <= 0:
            raise ConfigurationError("capacitance_f must be positive")
        if self.v_threshold < 0:
            raise ConfigurationError("v_threshold must be non-negative")
        if self.discharge_time <= 0:
            raise ConfigurationError("discharge_time must be positive")


@dataclass(frozen=True)
class FirmwareTiming:
    """GPIO polling loop: nominal period plus uniform jitter of up to ``jitter_bound`` either way."""

    sample_period: float
    jitter_bound: float = 0.0

    def __post_init__(self):
        if self.sample_period <= 0:
            raise ConfigurationError("sample_period must be positive")
        if not 0 <= self.jitter_bound < self.sample_period / 2:
            raise ConfigurationError("jitter_bound must lie in [0, sample_period / 2)")


@dataclass(frozen=True)
class DeviceProfile:
    """A target device: input circuit, LEDs, firmware loop and proven PWM operating point."""

    name: str
    circuit: ResistorCircuit | CapacitorCircuit
    receive_led: LedProfile
    transmit_led: LedProfile
    firmware: FirmwareTiming
    pwm_timing: PwmTiming
    processor: str = ""
    laser: str = ""

    @property
    def uses_capacitor(self):
        return isinstance(self.circuit, CapacitorCircuit)


@dataclass
class SampleStream:
    """Firmware GPIO reads with the instant each read was taken."""

    times: np.ndarray
    values: np.ndarray
    discharge_time: float = 0.0
    poll_period: float = 0.0
    duration: float = 0.0

    def __len__(self):
        return self.values.size


@dataclass
class ReceiveReport(PwmDecodeReport):
    """PWM decode diagnostics plus the raw sample stream they came from."""

    stream: SampleStream | None = None
    diagnostics: list = field(default_factory=list)


def threshold_current(circuit):
    """Induced current at which the pull-down voltage reaches the logic threshold."""
    return circuit.v_threshold / circuit.pulldown_ohms


def rc_charge_time(circuit, induced):
    """Constant-current time to charge the capacitor to its threshold, ``C * U / I``."""
    if induced <= 0:
        raise NoChargeError(f"induced current {induced} A cannot charge the capacitor")
    return circuit.capacitance_f * circuit.v_threshold / induced


def _hold(current, t):
    """Zero-order-hold lookup of ``current`` at instants ``t``."""
    x = current.samples
    idx = np.floor(np.asarray(t) * current.sample_rate + 1e-9).astype(np.int64)
    return x[np.clip(idx, 0, x.size - 1)]


def gpio_sample_immediate(current, circuit, fw, seed=0):
    """Poll the pin at jittered instants ``k * T + U(-j, j)``; read 1 iff ``I * R >= U``."""
    current.require_unit(AMPERES, "GPIO input")
    duration = current.duration
    n = int(math.ceil(duration / fw.sample_period - 1e-9))
    if n == 0 or len(current) == 0:
        return SampleStream(np.zeros(0), np.zeros(0, dtype=np.uint8), 0.0, fw.sample_period, duration)
    t = np.arange(n) * fw.sample_period
    if fw.jitter_bound > 0:
        rng = np.random.default_rng(seed)
        t = t + rng.uniform(-fw.jitter_bound, fw.jitter_bound, n)
    t = np.clip(t, 0.0, np.nextafter(duration, 0))
    volts = _hold(current, t) * circuit.pulldown_ohms
    values = (volts >= circuit.v_threshold * (1 - 1e-12)).astype(np.uint8)
    return SampleStream(t, values, 0.0, fw.sample_period, duration)


def default_charge_window(timing, circuit):
    """Charge window that guarantees a flushing 0-read inside every off gap."""
    return timing.t_off - circuit.discharge_time


def gpio_sample_delayed(current, circuit, fw, seed=0, charge_window=None):
    """Charge / read / discharge sampling of a capacitor-coupled pin.

    The capacitor integrates the induced current (``dV = I dt / C``, clamped
    at the supply rail). Each cycle the firmware polls until either the pin
    reads high, yielding a 1 and forcing a discharge for ``discharge_time``,
    or ``charge_window`` elapses, yielding a 0. A 0 that follows a 1 also
    discharges the capacitor so that residual charge from a pulse never leaks
    into the next one; a 0 while idle leaves the charge in place.
    """
    current.require_unit(AMPERES, "GPIO input")
    duration = current.duration
    window = circuit.discharge_time * 50 if charge_window is None else charge_window
    if window <= 0:
        raise ConfigurationError("charge window must be positive")
    empty = SampleStream(np.zeros(0), np.zeros(0, dtype=np.uint8), circuit.discharge_time,
                         fw.sample_period, duration)
    if len(current) == 0:
        return empty
    fs = current.sample_rate
    dt = 1.0 / fs
    # charge[i] is the charge delivered up to time i / fs
    charge = np.concatenate(([0.0], np.cumsum(np.clip(current.samples, 0, None)) * dt))
    C = circuit.capacitance_f
    v_cap = circuit.supply_v
    thr = circuit.v_threshold
    T = fw.sample_period
    rng = np.random.default_rng(seed)

    def q_at(t):
        u = t * fs
        i = min(int(u), charge.size - 2)
        return charge[i] + (u - i) * (charge[i + 1] - charge[i])

    def crossing(q_target, lo_t):
        """Earliest time >= lo_t at which the delivered charge reaches q_target."""
        i = int(np.searchsorted(charge, q_target * (1 - 1e-12), side="left"))
        if i >= charge.size:
            return math.inf
        if i == 0:
            return lo_t
        dq = charge[i] - charge[i - 1]
        frac = 1.0 if dq <= 0 else (q_target - charge[i - 1]) / dq
        return max(lo_t, (i - 1 + min(max(frac, 0.0), 1.0)) * dt)

    def next_poll(t):
        k = math.ceil(t / T - 1e-9)
        jit = rng.uniform(-fw.jitter_bound, fw.jitter_bound) if fw.jitter_bound > 0 else 0.0
        return max(t, k * T + jit)

    times, values = [], []
    start = 0.0
    v0 = 0.0
    last_one = False
    while start < duration:
        q0 = q_at(start)
        need = C * (thr - v0)
        deadline = start + window
        hit = start if need <= 0 else crossing(q0 + need, start)
        if hit <= deadline * (1 + 1e-12) and hit < duration:
            t_read = min(next_poll(hit), duration)
            if t_read > deadline * (1 + 1e-12):
                t_read = deadline
            times.append(t_read)
            values.append(1)
            last_one = True
            v0 = 0.0
            start = t_read + circuit.discharge_time
            continue
        if deadline >= duration:
            break
        times.append(deadline)
        values.append(0)
        if last_one:
            v0 = 0.0
            start = deadline + circuit.discharge_time
        else:
            v0 = min(v_cap, v0 + (q_at(deadline) - q0) / C)
            start = deadline
        last_one = False
    return SampleStream(np.asarray(times), np.asarray(values, dtype=np.uint8),
                        circuit.discharge_time, T, duration)


def immediate_durations(stream):
    """High-run durations (s) from an immediate-sampling stream, and whether the last run is cut off."""
    starts, lengths = high_runs(stream.values)
    if starts.size == 0:
        return np.zeros(0), False
    first = stream.times[starts]
    last = stream.times[starts + lengths - 1]
    durations = last - first + stream.poll_period
    partial = bool(starts[-1] + lengths[-1] == stream.values.size)
    return durations, partial


def delayed_durations(stream):
    """Pulse durations (s) reconstructed from runs of consecutive capacitor reads.

    Every 1-read marks one full charge. The charge time ``tau`` is estimated
    as the in-run read spacing minus the discharge time (falling back to the
    median over all runs for single-read runs); a run covers from one charge
    time before its first read to half a cycle after its last read.
    """
    starts, lengths = high_runs(stream.values)
    if starts.size == 0:
        return np.zeros(0), False
    t = stream.times
    D = stream.discharge_time
    ones = stream.values == 1
    spacing = np.diff(t)
    inner = ones[:-1] & ones[1:]
    taus = spacing[inner] - D
    fallback = float(np.median(taus)) if taus.size else 0.0
    durations = np.empty(starts.size)
    for r, (s, n) in enumerate(zip(starts, lengths)):
        if n > 1:
            tau = float(np.min(np.diff(t[s : s + n]))) - D
        elif fallback > 0:
            tau = fallback
        else:
            tau = t[s] - (t[s - 1] if s > 0 else 0.0)
        tau = max(tau, 0.0)
        durations[r] = t[s + n - 1] - t[s] + tau + 0.5 * (tau + D)
    partial = bool(starts[-1] + lengths[-1] == stream.values.size)
    return durations, partial


def target_receive_report(current, device, seed=0, timing=None, charge_window=None):
    """Sample, reconstruct pulses and PWM-decode them; never raises on bad signals."""
    timing = device.pwm_timing if timing is None else timing
    if device.uses_capacitor:
        window = default_charge_window(timing, device.circuit) if charge_window is None else charge_window
        if window <= 0:
            raise ConfigurationError(
                f"{device.name}: off gap {timing.t_off} s leaves no charge window after discharge"
            )
        stream = gpio_sample_delayed(current, device.circuit, device.firmware, seed, window)
        durations, partial = delayed_durations(stream)
    else:
        stream = gpio_sample_immediate(current, device.circuit, device.firmware, seed)
        durations, partial = immediate_durations(stream)
    base = classify_pulses(durations, timing, last_is_partial=partial)
    report = ReceiveReport(
        bits=base.bits,
        glitches=base.glitches,
        stuck_runs=base.stuck_runs,
        trailing_discarded=base.trailing_discarded,
        durations=base.durations,
        stream=stream,
    )
    if durations.size == 0:
        report.diagnostics.append("no signal")
    if base.stuck_runs:
        report.diagnostics.append(f"{base.stuck_runs} stuck-high run(s)")
    if base.glitches:
        report.diagnostics.append(f"{base.glitches} glitch(es)")
    return report


def target_receive(current, device, seed=0, timing=None):
    """Bits recovered by the device firmware from an induced-current trace."""
    return target_receive_report(current, device, seed, timing).bits


def target_transmit(bits, device, timing, sample_rate=None):
    """OOK-flash ``bits`` on the device's transmit LED."""
    bandwidth = device.transmit_led.emit_bandwidth_3db
    if timing.bit_rate > bandwidth:
        raise ConfigurationError(
            f"bit rate {timing.bit_rate:g} bps exceeds the LED bandwidth {bandwidth:g} Hz"
        )
    if timing.bit_rate > bandwidth / 10:
        warnings.warn(
            f"bit rate {timing.bit_rate:g} bps is above a tenth of the LED bandwidth; "
            "expect visible pulse distortion",
            stacklevel=2,
        )
    fs = OOK_SAMPLES_PER_BIT * timing.bit_rate if sample_rate is None else sample_rate
    drive = ook_encode(bits, timing, fs)
    return led_emit(drive, device.transmit_led)
