"""Line codes, framing and error accounting for both link directions.

Infiltration uses a pulse-width code: a long pulse carries a one, a short
pulse a zero, and every pulse is followed by a mandatory dark gap. The
exfiltration direction uses plain on-off keying. Both are wrapped in a small
self-describing frame (preamble, length, payload, CRC-32) so a receiver can
find and verify a transmission without out-of-band alignment.

All functions here are pure; they never touch channel physics.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import correlate

from .errors import (
    ConfigurationError,
    IntegrityError,
    StuckHighError,
    SyncError,
    TruncatedFrameError,
)
from .trace import BINARY, SignalTrace

PULSE_TOLERANCE = 0.25
MIN_SAMPLES_PER_RUN = 10
OOK_MIN_SAMPLES_PER_BIT = 20
SYNC_THRESHOLD = 0.25

PREAMBLE_WORD = 0x1ACFFC1D
LENGTH_BITS = 16
CRC_BITS = 32
MAX_PAYLOAD = (1 << LENGTH_BITS) - 1


def as_bits(bits):
    """Validate and convert a sequence of 0/1 values to a uint8 array."""
    arr = np.asarray(bits)
    if arr.size == 0:
        return np.zeros(0, dtype=np.uint8)
    arr = arr.reshape(-1)
    if not np.all((arr == 0) | (arr == 1)):
        raise ConfigurationError("bit streams may only contain 0 and 1")
    return arr.astype(np.uint8)


def bytes_to_bits(data):
    """MSB-first expansion of a byte string."""
    return np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8))


def bits_to_bytes(bits):
    """MSB-first packing; trailing bits that do not fill a byte are dropped."""
    bits = as_bits(bits)
    n = bits.size - bits.size % 8
    return np.packbits(bits[:n]).tobytes()


def _word_bits(value, width):
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


PREAMBLE = _word_bits(PREAMBLE_WORD, 32)


@dataclass(frozen=True)
class PwmTiming:
    """Pulse widths of the infiltration code, in seconds."""

    t_one: float
    t_zero: float
    t_off: float

    def __post_init__(self):
        if not (self.t_zero > 0 and self.t_one > self.t_zero):
            raise ConfigurationError(
                f"need t_one > t_zero > 0, got t_one={self.t_one:.6g} s, t_zero={self.t_zero:.6g} s"
            )
        if not self.t_off > 0:
            raise ConfigurationError(f"t_off must be positive, got {self.t_off}")
        # The longest admissible zero and the shortest admissible one must not overlap.
        if self.t_one - self.t_zero < 2 * PULSE_TOLERANCE * self.t_zero * (1 - 1e-9):
            raise ConfigurationError(
                "t_one and t_zero are too close to be told apart under the "
                f"±{PULSE_TOLERANCE:.0%} pulse tolerance"
            )

    @classmethod
    def from_us(cls, t_one_us, t_zero_us, t_off_us):
        return cls(t_one_us * 1e-6, t_zero_us * 1e-6, t_off_us * 1e-6)

    def as_us(self):
        return (self.t_one * 1e6, self.t_zero * 1e6, self.t_off * 1e6)

    @property
    def midpoint(self):
        return 0.5 * (self.t_one + self.t_zero)


@dataclass(frozen=True)
class OokTiming:
    """On-off keying bit clock."""

    bit_rate: float

    def __post_init__(self):
        if not self.bit_rate > 0:
            raise ConfigurationError(f"bit_rate must be positive, got {self.bit_rate}")

    @property
    def bit_period(self):
        return 1.0 / self.bit_rate


def _runs_to_trace(levels, durations, sample_rate):
    edges = np.rint(np.cumsum(durations) * sample_rate).astype(np.int64)
    lengths = np.diff(edges, prepend=0)
    return SignalTrace(np.repeat(levels, lengths).astype(float), sample_rate, BINARY)


def pwm_encode(bits, timing, sample_rate):
    """Render ``bits`` as a binary PWM trace.

    Each bit becomes a high run of ``t_one`` or ``t_zero`` followed by a low
    run of ``t_off``. Run boundaries are rounded on the cumulative time axis,
    so long streams do not drift.
    """
    bits = as_bits(bits)
    shortest = min(timing.t_zero, timing.t_off) * sample_rate
    if shortest < MIN_SAMPLES_PER_RUN * (1 - 1e-9):
        raise ConfigurationError(
            f"sample_rate {sample_rate:g} Hz gives only {shortest:.1f} samples on the "
            f"shortest run; at least {MIN_SAMPLES_PER_RUN} are required"
        )
    if bits.size == 0:
        return SignalTrace.empty(sample_rate, BINARY)
    high = np.where(bits == 1, timing.t_one, timing.t_zero)
    durations = np.empty(2 * bits.size)
    durations[0::2] = high
    durations[1::2] = timing.t_off
    levels = np.tile([1.0, 0.0], bits.size)
    return _runs_to_trace(levels, durations, sample_rate)


@dataclass
class PwmDecodeReport:
    """Outcome of run-length PWM decoding with its diagnostics."""

    bits: np.ndarray
    glitches: int = 0
    stuck_runs: int = 0
    trailing_discarded: int = 0
    durations: np.ndarray = field(default_factory=lambda: np.zeros(0))


def high_runs(binary):
    """Start indices and lengths of the runs of ones in a boolean array."""
    b = np.asarray(binary, dtype=np.int8)
    if b.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    d = np.diff(np.concatenate(([0], b, [0])))
    starts = np.flatnonzero(d == 1)
    ends = np.flatnonzero(d == -1)
    return starts, ends - starts


def classify_pulses(durations, timing, tolerance=PULSE_TOLERANCE, last_is_partial=False):
    """Turn measured high-run durations into bits.

    Runs nearer ``t_one`` than ``t_zero`` decode as 1. Runs shorter than
    ``t_zero * (1 - tolerance)`` are glitches and dropped; runs longer than
    ``t_one * (1 + tolerance)`` are stuck-high and skipped. When
    ``last_is_partial`` is set the final run was cut off by the end of the
    capture and is discarded if it is too short to classify.
    """
    durations = np.asarray(durations, dtype=float)
    lo = timing.t_zero * (1 - tolerance)
    hi = timing.t_one * (1 + tolerance)
    trailing = 0
    if last_is_partial and durations.size and durations[-1] < lo:
        durations = durations[:-1]
        trailing = 1
    glitch = durations < lo
    stuck = durations > hi
    keep = ~(glitch | stuck)
    bits = (durations[keep] >= timing.midpoint).astype(np.uint8)
    return PwmDecodeReport(
        bits=bits,
        glitches=int(glitch.sum()),
        stuck_runs=int(stuck.sum()),
        trailing_discarded=trailing,
        durations=durations,
    )


def pwm_decode_report(trace, timing, tolerance=PULSE_TOLERANCE):
    """Run-length decode a thresholded trace, collecting diagnostics instead of raising."""
    x = trace.samples
    starts, lengths = high_runs(x >= 0.5)
    partial = bool(lengths.size and starts[-1] + lengths[-1] == x.size)
    return classify_pulses(lengths / trace.sample_rate, timing, tolerance, partial)


def pwm_decode(trace, timing, tolerance=PULSE_TOLERANCE):
    """Decode a binary PWM trace back into bits.

    Raises :class:`StuckHighError` if any high run is longer than the
    longest admissible one-pulse.
    """
    report = pwm_decode_report(trace, timing, tolerance)
    if report.stuck_runs:
        raise StuckHighError(
            f"{report.stuck_runs} high run(s) longer than t_one*(1+{tolerance}) "
            f"= {timing.t_one * (1 + tolerance) * 1e6:.1f} us"
        )
    return report.bits


def pwm_worst_case_rate(timing):
    """Throughput when every bit is a one, i.e. the lower bound on the rate."""
    return 1.0 / (timing.t_one + timing.t_off)


def pwm_mean_bit_duration(timing):
    """Expected duration per bit for equiprobable random bits."""
    return 0.5 * (timing.t_one + timing.t_zero) + timing.t_off


def ook_encode(bits, timing, sample_rate):
    """Render ``bits`` as an on-off keyed binary trace, one bit period per bit."""
    bits = as_bits(bits)
    spb = sample_rate / timing.bit_rate
    if spb < OOK_MIN_SAMPLES_PER_BIT * (1 - 1e-9):
        raise ConfigurationError(
            f"sample_rate {sample_rate:g} Hz is below {OOK_MIN_SAMPLES_PER_BIT}x "
            f"the bit rate {timing.bit_rate:g} bps"
        )
    if bits.size == 0:
        return SignalTrace.empty(sample_rate, BINARY)
    durations = np.full(bits.size, timing.bit_period)
    return _runs_to_trace(bits.astype(float), durations, sample_rate)


def auto_threshold(samples):
    """Midpoint between the 10th and 90th percentile levels."""
    lo, hi = np.percentile(np.asarray(samples, dtype=float), [10, 90])
    return 0.5 * (lo + hi)


def _bit_edges(offset, n_bits, samples_per_bit):
    return offset + np.rint(np.arange(n_bits + 1) * samples_per_bit).astype(np.int64)


def _template(pattern, samples_per_bit):
    edges = _bit_edges(0, pattern.size, samples_per_bit)
    return np.repeat(2.0 * pattern - 1.0, np.diff(edges))


def find_preamble(samples, threshold, samples_per_bit, preamble=PREAMBLE, min_score=SYNC_THRESHOLD):
    """Sample offset at which ``preamble`` starts.

    The centred signal is correlated against a ±1 template of the preamble.
    Scores are normalised so a clean, full-contrast match scores 1. The first
    offset whose score clears ``min_score`` starts a local search over the next
    two bit periods; the best-scoring offset in that window wins.
    """
    x = np.asarray(samples, dtype=float)
    tmpl = _template(np.asarray(preamble, dtype=float), samples_per_bit)
    if x.size < tmpl.size:
        raise SyncError("signal shorter than the preamble")
    lo, hi = np.percentile(x, [10, 90])
    half_swing = 0.5 * (hi - lo)
    if not half_swing > 0:
        raise SyncError("no contrast in received signal")
    score = correlate(x - threshold, tmpl, mode="valid") / (tmpl.size * half_swing)
    above = np.flatnonzero(score >= min_score)
    if above.size == 0:
        raise SyncError(f"preamble not found (best score {score.max():.3f} < {min_score})")
    first = int(above[0])
    window = score[first : first + int(np.ceil(2 * samples_per_bit)) + 1]
    return first + int(np.argmax(window))


def majority_bits(samples, threshold, offset, samples_per_bit):
    """Per-bit majority vote over bit windows starting at ``offset``.

    Ties are broken by comparing the window mean against the threshold.
    """
    x = np.asarray(samples, dtype=float)
    n_bits = int(np.floor((x.size - offset) / samples_per_bit + 1e-9))
    if n_bits <= 0:
        return np.zeros(0, dtype=np.uint8)
    edges = _bit_edges(offset, n_bits, samples_per_bit)
    x = x[: edges[-1]]
    above = (x >= threshold).astype(np.int64)
    start = edges[:-1]
    lengths = np.diff(edges)
    ones = np.add.reduceat(above, start)
    sums = np.add.reduceat(x, start)
    bits = (2 * ones > lengths).astype(np.uint8)
    tie = 2 * ones == lengths
    bits[tie] = (sums[tie] >= threshold * lengths[tie]).astype(np.uint8)
    return bits


def ook_decode(trace, timing, threshold=None, preamble=None, min_score=SYNC_THRESHOLD):
    """Recover bits from an on-off keyed trace.

    Without ``preamble`` the first bit is assumed to start at sample 0. With
    a preamble the trace is first aligned by correlation and the returned
    stream starts at the preamble. ``threshold=None`` selects the automatic
    midpoint of the 10th/90th percentile levels.
    """
    spb = trace.sample_rate / timing.bit_rate
    if spb < 2 * (1 - 1e-9):
        raise ConfigurationError("trace sample rate must be at least twice the bit rate")
    x = trace.samples
    if x.size == 0:
        if preamble is not None:
            raise SyncError("empty trace")
        return np.zeros(0, dtype=np.uint8)
    thr = auto_threshold(x) if threshold is None else float(threshold)
    offset = 0
    if preamble is not None:
        offset = find_preamble(x, thr, spb, as_bits(preamble), min_score)
    return majority_bits(x, thr, offset, spb)


def frame_payload(payload):
    """Wrap ``payload`` as preamble | 16-bit length | payload | CRC-32 (MSB first)."""
    payload = bytes(payload)
    if len(payload) > MAX_PAYLOAD:
        raise ConfigurationError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    body = len(payload).to_bytes(2, "big") + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    return np.concatenate((PREAMBLE, bytes_to_bits(body + crc.to_bytes(4, "big"))))


def frame_bit_length(payload_len):
    return PREAMBLE.size + LENGTH_BITS + 8 * payload_len + CRC_BITS


def locate_preamble(bits, preamble=PREAMBLE):
    """Index of the first exact occurrence of ``preamble`` in ``bits``, or -1."""
    bits = as_bits(bits)
    hay = bits.tobytes()
    needle = as_bits(preamble).tobytes()
    return hay.find(needle)


def deframe(bits):
    """Extract and verify the payload of the first frame in ``bits``."""
    bits = as_bits(bits)
    start = locate_preamble(bits)
    if start < 0:
        raise SyncError("frame preamble not found")
    pos = start + PREAMBLE.size
    if bits.size < pos + LENGTH_BITS:
        raise TruncatedFrameError("stream ends inside the length field")
    length = int.from_bytes(bits_to_bytes(bits[pos : pos + LENGTH_BITS]), "big")
    end = pos + LENGTH_BITS + 8 * length + CRC_BITS
    if bits.size < end:
        raise TruncatedFrameError(
            f"frame announces {length} bytes but only {bits.size - start} bits are available"
        )
    raw = bits_to_bytes(bits[pos:end])
    body, crc = raw[:-4], int.from_bytes(raw[-4:], "big")
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise IntegrityError("CRC-32 mismatch")
    return body[2:]


def bit_error_rate(sent, received):
    """Fraction of ``sent`` bits not reproduced in ``received``.

    Positions are compared up to the shorter length; every bit of length
    difference counts as one more error. The result is capped at 1.
    """
    sent = as_bits(sent)
    received = as_bits(received)
    if sent.size == 0:
        return 0.0
    m = min(sent.size, received.size)
    errors = int(np.count_nonzero(sent[:m] != received[:m])) + abs(sent.size - received.size)
    return min(1.0, errors / sent.size)
