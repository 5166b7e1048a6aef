"""Uniformly sampled signal container and its CSV representation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, TraceFormatError, UnitMismatchError

OPTICAL_WATTS = "optical-watts"
AMPERES = "amperes"
VOLTS = "volts"
BINARY = "dimensionless-binary"
UNITS = (OPTICAL_WATTS, AMPERES, VOLTS, BINARY)

TRACE_HEADER = ("time_s", "value", "unit")


@dataclass(frozen=True, eq=False)
class SignalTrace:
    """Real-valued time series with a fixed sample rate and a unit tag.

    Sample ``i`` sits at time ``i / sample_rate``. The sample array is stored
    read-only so traces can be shared between pipeline stages safely.
    """

    samples: np.ndarray
    sample_rate: float
    unit: str

    def __post_init__(self):
        if not np.isfinite(self.sample_rate) or self.sample_rate <= 0:
            raise ConfigurationError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.unit not in UNITS:
            raise ConfigurationError(f"unknown unit {self.unit!r}; expected one of {UNITS}")
        arr = np.array(self.samples, dtype=float).reshape(-1)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    @property
    def dt(self):
        return 1.0 / self.sample_rate

    def times(self):
        return np.arange(self.samples.size) / self.sample_rate

    def replace(self, samples=None, unit=None):
        """Return a new trace at the same rate with new samples and/or unit."""
        return SignalTrace(
            self.samples if samples is None else samples,
            self.sample_rate,
            self.unit if unit is None else unit,
        )

    def require_unit(self, unit, what="trace"):
        if self.unit != unit:
            raise UnitMismatchError(f"{what} must be in {unit}, got {self.unit}")
        return self

    def equals(self, other):
        """Bit-exact comparison of samples, rate and unit."""
        return (
            isinstance(other, SignalTrace)
            and self.unit == other.unit
            and self.sample_rate == other.sample_rate
            and self.samples.shape == other.samples.shape
            and np.array_equal(self.samples, other.samples)
        )

    @classmethod
    def empty(cls, sample_rate, unit):
        return cls(np.zeros(0), sample_rate, unit)


def write_trace_csv(trace, path):
    """Write ``trace`` as ``time_s,value,unit`` rows."""
    text = format_trace_csv(trace)
    Path(path).write_text(text)


def format_trace_csv(trace):
    buf = io.StringIO()
    buf.write(",".join(TRACE_HEADER) + "\n")
    n = len(trace)
    if n:
        t = np.arange(n) / trace.sample_rate
        body = np.char.add(
            np.char.add(np.char.mod("%.12g", t), ","),
            np.char.add(np.char.mod("%.17g", trace.samples), "," + trace.unit),
        )
        buf.write("\n".join(body.tolist()))
        buf.write("\n")
    return buf.getvalue()


def read_trace_csv(path, default_sample_rate=1.0):
    """Parse a trace CSV written by :func:`write_trace_csv`.

    The sample rate is recovered from the time step. A file with fewer than
    two rows carries no step, so ``default_sample_rate`` is used instead.
    """
    text = Path(path).read_text()
    return parse_trace_csv(text, default_sample_rate)


def parse_trace_csv(text, default_sample_rate=1.0):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TraceFormatError("empty file, expected header 'time_s,value,unit'", line=1)
    if tuple(h.strip() for h in header) != TRACE_HEADER:
        raise TraceFormatError(f"bad header {header!r}, expected 'time_s,value,unit'", line=1)
    times, values = [], []
    unit = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise TraceFormatError(f"expected 3 fields, got {len(row)}", line=lineno)
        try:
            t = float(row[0])
            v = float(row[1])
        except ValueError:
            raise TraceFormatError(f"non-numeric field in {row!r}", line=lineno)
        u = row[2].strip()
        if u not in UNITS:
            raise TraceFormatError(f"unknown unit {u!r}", line=lineno)
        if unit is None:
            unit = u
        elif u != unit:
            raise TraceFormatError(f"unit changed from {unit} to {u}", line=lineno)
        times.append(t)
        values.append(v)
    if unit is None:
        return SignalTrace.empty(default_sample_rate, BINARY)
    t = np.asarray(times)
    if t.size < 2:
        return SignalTrace(np.asarray(values), default_sample_rate, unit)
    steps = np.diff(t)
    step = (t[-1] - t[0]) / (t.size - 1)
    if step <= 0:
        raise TraceFormatError("time column must increase", line=3)
    bad = np.flatnonzero(np.abs(steps - step) > 1e-6 * step + 1e-12)
    if bad.size:
        raise TraceFormatError("time column is not uniformly spaced", line=int(bad[0]) + 3)
    return SignalTrace(np.asarray(values), float(f"{1.0 / step:.9g}"), unit)
