"""Loading of device, emitter, receiver and channel presets from YAML documents.

Every physical quantity is stored under a key whose suffix names its unit
(``capacitance_nf``, ``sample_period_us``, ``f_3db_khz``); values are
converted to SI on load. Documents are searched first in the directory named
by ``LEDLINK_PRESET_DIR`` and then in the presets shipped with the package.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .codec import PwmTiming
from .errors import ConfigurationError
from .optics import LaserProfile, LedProfile, PathModel, SpectrumWindow, VibrationModel
from .receivers import ApdProfile, CameraProfile
from .target import CapacitorCircuit, DeviceProfile, FirmwareTiming, ResistorCircuit

PRESET_ENV = "LEDLINK_PRESET_DIR"
DOCUMENTS = ("lasers", "leds", "devices", "receivers", "links")

SCALES = {
    "a": {"a": 1.0, "ma": 1e-3, "ua": 1e-6},
    "w": {"w": 1.0, "mw": 1e-3, "uw": 1e-6},
    "s": {"s": 1.0, "ms": 1e-3, "us": 1e-6},
    "hz": {"hz": 1.0, "khz": 1e3, "mhz": 1e6},
    "ohm": {"ohm": 1.0, "kohm": 1e3, "mohm": 1e6},
    "f": {"f": 1.0, "uf": 1e-6, "nf": 1e-9, "pf": 1e-12},
    "v": {"v": 1.0, "mv": 1e-3},
    "m": {"m": 1.0, "cm": 1e-2},
    "nm": {"nm": 1.0},
}


def quantity(doc, stem, family, default=None, where=""):
    """Read ``stem_<unit>`` from ``doc`` for any unit of ``family`` and convert to SI."""
    found = [(k, s) for k, s in SCALES[family].items() if f"{stem}_{k}" in doc]
    if len(found) > 1:
        keys = ", ".join(f"{stem}_{k}" for k, _ in found)
        raise ConfigurationError(f"{where}: conflicting keys {keys}")
    if not found:
        if default is not None:
            return default
        units = "|".join(SCALES[family])
        raise ConfigurationError(f"{where}: missing {stem}_<{units}>")
    unit, scale = found[0]
    value = doc[f"{stem}_{unit}"]
    if isinstance(value, (list, tuple)):
        return tuple(float(v) * scale for v in value)
    return float(value) * scale


def preset_dirs():
    """Directories searched for preset documents, highest priority first."""
    dirs = []
    env = os.environ.get(PRESET_ENV)
    if env:
        dirs.append(Path(env))
    dirs.append(Path(str(resources.files("ledlink") / "data" / "presets")))
    return tuple(dirs)


def load_document(name, dirs=None):
    for d in preset_dirs() if dirs is None else dirs:
        path = Path(d) / f"{name}.yaml"
        if path.is_file():
            with open(path) as fh:
                return yaml.safe_load(fh) or {}
    raise ConfigurationError(f"preset document {name}.yaml not found in {', '.join(map(str, dirs or preset_dirs()))}")


def load_reference_tables():
    """Published measurements used by the regression report."""
    text = (resources.files("ledlink") / "data" / "reference_tables.yaml").read_text()
    return yaml.safe_load(text)


def _window(doc, peak=1.0):
    return SpectrumWindow(float(doc["center_nm"]), float(doc["low_nm"]), float(doc["high_nm"]), peak)


def _laser(name, doc):
    w = f"laser {name}"
    return LaserProfile(
        name=name,
        wavelength_nm=quantity(doc, "wavelength", "nm", where=w),
        current_points_a=quantity(doc, "current_points", "a", where=w),
        power_points_w=quantity(doc, "power_points", "w", where=w),
        max_current_a=quantity(doc, "max_current", "a", where=w),
        modulation_bandwidth_hz=quantity(doc, "modulation_bandwidth", "hz", where=w),
    )


def _led(name, doc):
    w = f"LED {name}"
    return LedProfile(
        name=name,
        emission_window=_window(doc["emission"]),
        absorption_window=_window(doc["absorption"]),
        photo_responsivity=float(doc["photo_responsivity_a_per_w"]),
        emit_power_burst=quantity(doc, "emit_power_burst", "w", where=w),
        emit_bandwidth_3db=quantity(doc, "emit_bandwidth_3db", "hz", where=w),
    )


def _circuit(doc, where):
    kind = doc.get("type")
    if kind == "resistor":
        return ResistorCircuit(
            pulldown_ohms=quantity(doc, "pulldown", "ohm", where=where),
            v_threshold=quantity(doc, "v_threshold", "v", where=where),
            series_ohms=quantity(doc, "series", "ohm", default=0.0, where=where),
        )
    if kind == "capacitor":
        return CapacitorCircuit(
            capacitance_f=quantity(doc, "capacitance", "f", where=where),
            v_threshold=quantity(doc, "v_threshold", "v", where=where),
            discharge_time=quantity(doc, "discharge_time", "s", where=where),
        )
    raise ConfigurationError(f"{where}: circuit type must be 'resistor' or 'capacitor', got {kind!r}")


def timing_from_us(values):
    return None if values is None else PwmTiming.from_us(*values)


@dataclass(frozen=True)
class InfiltrationRow:
    distance_m: float
    circuit: str
    laser_current_a: float
    power_at_target_w: float
    current_at_target_a: float
    timing: PwmTiming | None


@dataclass(frozen=True)
class InfiltrationLinks:
    """Measured long-range operating points plus the vibration regime."""

    reference_laser: str
    rows: tuple
    short_range_distance_m: float
    short_range_current_a: float
    vibration: VibrationModel
    vibration_min_distance_m: float

    def current_at(self, distance_m):
        """Induced current pinned for ``distance_m``, log-log interpolated between rows.

        Beyond the farthest row the current falls off with the inverse square.
        """
        d = {self.short_range_distance_m: self.short_range_current_a}
        for r in self.rows:
            d.setdefault(r.distance_m, r.current_at_target_a)
        xs = np.array(sorted(d))
        ys = np.array([d[x] for x in xs])
        if distance_m <= xs[0]:
            return float(ys[0])
        if distance_m >= xs[-1]:
            return float(ys[-1] * (xs[-1] / distance_m) ** 2)
        return float(np.exp(np.interp(math.log(distance_m), np.log(xs), np.log(ys))))

    def row_for(self, distance_m, circuit=None):
        """The measured row at or nearest below ``distance_m`` (optionally of one circuit type)."""
        rows = [r for r in self.rows if circuit is None or r.circuit == circuit]
        rows = [r for r in rows if r.distance_m <= distance_m + 1e-9]
        if not rows:
            return None
        best = max(r.distance_m for r in rows)
        return next(r for r in rows if r.distance_m == best)

    def timing_for(self, distance_m, circuit):
        """PWM operating point used at ``distance_m``: the closest measured row at or below it."""
        rows = [r for r in self.rows if r.circuit == circuit and r.timing is not None
                and r.distance_m <= distance_m + 1e-9]
        if not rows:
            return None
        return max(rows, key=lambda r: r.distance_m).timing

    def vibration_at(self, distance_m, seed, dropout_rate=None):
        model = replace(self.vibration, rng_seed=seed)
        if dropout_rate is not None:
            return replace(model, dropout_rate=dropout_rate)
        if distance_m < self.vibration_min_distance_m:
            return replace(model, dropout_rate=0.0)
        return model


@dataclass(frozen=True)
class ExfiltrationLink:
    path: PathModel
    decode_floor_snr: float
    max_decoded_ber: float
    lead_in_bits: int


class PresetLibrary:
    """All named presets, resolved into model objects."""

    def __init__(self, dirs=None):
        self.dirs = tuple(preset_dirs() if dirs is None else dirs)
        docs = {name: load_document(name, self.dirs) for name in DOCUMENTS}
        self.lasers = {k: _laser(k, v) for k, v in docs["lasers"].items()}
        self.leds = {k: _led(k, v) for k, v in docs["leds"].items()}
        self.devices = {k: self._device(k, v) for k, v in docs["devices"].items()}
        rec = docs["receivers"]
        self.cameras = {k: self._camera(k, v) for k, v in (rec.get("cameras") or {}).items()}
        self.apds = {k: self._apd(k, v) for k, v in (rec.get("apds") or {}).items()}
        self.infiltration = self._infiltration(docs["links"]["infiltration"])
        self.exfiltration = self._exfiltration(docs["links"]["exfiltration"])

    @staticmethod
    def _pick(kind, table, name):
        if name not in table:
            raise ConfigurationError(
                f"unknown {kind} preset {name!r}; available: {', '.join(sorted(table))}"
            )
        return table[name]

    def laser(self, name):
        return self._pick("laser", self.lasers, name)

    def led(self, name):
        return self._pick("LED", self.leds, name)

    def device(self, name):
        return self._pick("device", self.devices, name)

    def camera(self, name):
        return self._pick("camera", self.cameras, name)

    def apd(self, name):
        return self._pick("APD", self.apds, name)

    def receiver(self, name):
        if name in self.cameras:
            return self.cameras[name]
        if name in self.apds:
            return self.apds[name]
        available = sorted(self.cameras) + sorted(self.apds)
        raise ConfigurationError(f"unknown receiver preset {name!r}; available: {', '.join(available)}")

    def listing(self):
        """Preset names grouped by kind."""
        return {
            "devices": sorted(self.devices),
            "lasers": sorted(self.lasers),
            "leds": sorted(self.leds),
            "cameras": sorted(self.cameras),
            "apds": sorted(self.apds),
        }

    def _device(self, name, doc):
        w = f"device {name}"
        fw = doc["firmware"]
        return DeviceProfile(
            name=name,
            circuit=_circuit(doc["circuit"], w),
            receive_led=self.led(doc["receive_led"]),
            transmit_led=self.led(doc["transmit_led"]),
            firmware=FirmwareTiming(
                quantity(fw, "sample_period", "s", where=w),
                quantity(fw, "jitter_bound", "s", default=0.0, where=w),
            ),
            pwm_timing=timing_from_us(doc["pwm_timing_us"]),
            processor=str(doc.get("processor", "")),
            laser=str(doc.get("laser", "")),
        )

    @staticmethod
    def _camera(name, doc):
        return CameraProfile(
            fps=float(doc["fps"]),
            exposure_fraction=float(doc.get("exposure_fraction", 1.0)),
            luminance_noise_sigma=float(doc.get("luminance_noise_sigma", 0.0)),
            sensitivity_floor=quantity(doc, "sensitivity_floor", "w", default=0.0, where=f"camera {name}"),
        )

    @staticmethod
    def _apd(name, doc):
        w = f"APD {name}"
        return ApdProfile(
            responsivity=_window(doc["responsivity"], float(doc["peak_responsivity_a_per_w"])),
            gain_M=float(doc.get("gain_m", 1.0)),
            f_3db=quantity(doc, "f_3db", "hz", where=w),
            nep=float(doc["nep_w_per_sqrt_hz"]),
            transimpedance=float(doc["transimpedance_v_per_a"]),
        )

    def _infiltration(self, doc):
        w = "infiltration link"
        rows = tuple(
            InfiltrationRow(
                distance_m=quantity(r, "distance", "m", where=w),
                circuit=r["circuit"],
                laser_current_a=quantity(r, "laser_current", "a", where=w),
                power_at_target_w=quantity(r, "power_at_target", "w", where=w),
                current_at_target_a=quantity(r, "current_at_target", "a", where=w),
                timing=timing_from_us(r.get("pwm_timing_us")),
            )
            for r in doc["rows"]
        )
        self.laser(doc["reference_laser"])
        sr = doc["short_range"]
        vib = doc["vibration"]
        return InfiltrationLinks(
            reference_laser=doc["reference_laser"],
            rows=rows,
            short_range_distance_m=quantity(sr, "distance", "m", where=w),
            short_range_current_a=quantity(sr, "current_at_target", "a", where=w),
            vibration=VibrationModel(
                dropout_rate=float(vib["dropout_rate_per_s"]),
                dropout_duration=quantity(vib, "dropout_duration", "s", where=w),
                depth=float(vib["depth"]),
            ),
            vibration_min_distance_m=quantity(vib, "min_distance", "m", where=w),
        )

    @staticmethod
    def _exfiltration(doc):
        p = doc["path"]
        w = "exfiltration link"
        return ExfiltrationLink(
            path=PathModel(
                reference_distance_m=quantity(p, "reference_distance", "m", where=w),
                attenuation_exponent=float(p["attenuation_exponent"]),
                reference_gain=float(p["reference_gain"]),
                max_distance_m=quantity(p, "max_distance", "m", default=math.inf, where=w),
            ),
            decode_floor_snr=float(doc["decode_floor_snr"]),
            max_decoded_ber=float(doc["max_decoded_ber"]),
            lead_in_bits=int(doc.get("lead_in_bits", 16)),
        )


@lru_cache(maxsize=8)
def _cached(dirs):
    return PresetLibrary(dirs)


def load_presets(directory=None):
    """Preset library from ``directory`` (falling back to the packaged presets)."""
    if directory is not None:
        dirs = (Path(directory),) + preset_dirs()[-1:]
    else:
        dirs = preset_dirs()
    return _cached(tuple(dirs))
