import math
import re
from importlib import resources

import pytest
import yaml

from ledlink.errors import ConfigurationError
from ledlink.presets import PRESET_ENV, DOCUMENTS, PresetLibrary, load_presets, preset_dirs, quantity

LIB = load_presets()
UNIT_SUFFIX = re.compile(r"_(a|ma|ua|w|mw|uw|s|ms|us|hz|khz|mhz|ohm|kohm|f|nf|v|mv|m|nm|per_s|a_per_w|v_per_a|w_per_sqrt_hz)$")
UNITLESS = {"type", "circuit", "receive_led", "transmit_led", "processor", "laser", "reference_laser", "fps",
            "exposure_fraction", "luminance_noise_sigma", "gain_m", "depth", "attenuation_exponent",
            "reference_gain", "decode_floor_snr", "max_decoded_ber", "lead_in_bits", "emission", "absorption",
            "responsivity", "firmware", "rows", "short_range", "vibration", "path", "cameras", "apds",
            "infiltration", "exfiltration", "pwm_timing_us", "center_nm", "low_nm", "high_nm"}


def _keys(node):
    if isinstance(node, dict):
        for k, v in node.items():
            yield k
            yield from _keys(v)
    elif isinstance(node, list):
        for v in node:
            yield from _keys(v)


@pytest.mark.parametrize("name", DOCUMENTS)
def test_physical_keys_carry_unit_suffixes(name):
    path = resources.files("ledlink") / "data" / "presets" / f"{name}.yaml"
    doc = yaml.safe_load(path.read_text())
    top = set(doc)
    for key in _keys(doc):
        if key in top and name in ("lasers", "leds", "devices"):
            continue  # preset names
        if key in LIB.cameras or key in LIB.apds:
            continue
        assert key in UNITLESS or UNIT_SUFFIX.search(key), f"{name}.yaml: key {key!r} has no unit suffix"


def test_quantity_converts_units():
    assert quantity({"t_us": 5}, "t", "s") == pytest.approx(5e-6)
    assert quantity({"c_nf": [1, 2]}, "c", "f") == pytest.approx((1e-9, 2e-9))
    assert quantity({}, "x", "m", default=3.0) == 3.0


def test_quantity_conflicts_and_missing():
    with pytest.raises(ConfigurationError, match="conflicting"):
        quantity({"t_us": 1, "t_ms": 1}, "t", "s")
    with pytest.raises(ConfigurationError, match="missing"):
        quantity({}, "t", "s")


def test_devices_are_lowercase_and_complete():
    names = LIB.listing()["devices"]
    assert names == [n.lower() for n in names]
    for n in ("tl-mr3020", "tl-wr1043nd", "rpi", "yealink", "rpi-capacitor", "yealink-display"):
        assert n in names


def test_device_presets_resolve():
    d = LIB.device("tl-mr3020")
    assert d.circuit.pulldown_ohms == pytest.approx(10e3)
    assert d.pwm_timing.as_us() == pytest.approx((200, 100, 100))
    y = LIB.device("yealink")
    assert y.uses_capacitor
    assert y.circuit.capacitance_f == pytest.approx(10e-9)


def test_unknown_preset_lists_available():
    with pytest.raises(ConfigurationError, match="available: .*yealink"):
        LIB.device("nokia")
    with pytest.raises(ConfigurationError, match="available: .*apd"):
        LIB.receiver("telescope")


def test_env_var_overrides_search_path(tmp_path, monkeypatch):
    doc = yaml.safe_load((resources.files("ledlink") / "data" / "presets" / "receivers.yaml").read_text())
    doc["cameras"]["fast-camera"] = {"fps": 960}
    (tmp_path / "receivers.yaml").write_text(yaml.safe_dump(doc))
    monkeypatch.setenv(PRESET_ENV, str(tmp_path))
    assert preset_dirs()[0] == tmp_path
    lib = PresetLibrary()
    assert lib.camera("fast-camera").fps == 960
    assert "yealink" in lib.devices  # other documents fall back to the packaged ones


def test_load_presets_with_directory(tmp_path):
    (tmp_path / "leds.yaml").write_text(
        "solo:\n  emission: {center_nm: 520, low_nm: 470, high_nm: 580}\n"
        "  absorption: {center_nm: 470, low_nm: 380, high_nm: 580}\n"
        "  photo_responsivity_a_per_w: 1.0e-3\n  emit_power_burst_uw: 10\n  emit_bandwidth_3db_mhz: 1\n"
    )
    with pytest.raises(ConfigurationError, match="unknown LED"):
        load_presets(tmp_path)


def test_infiltration_link_interpolation():
    links = LIB.infiltration
    assert links.current_at(0.3) == pytest.approx(400e-6)
    assert links.current_at(25.0) == pytest.approx(20e-6)
    mid = links.current_at(27.0)
    assert 20e-6 < mid < 32e-6
    assert links.current_at(80.0) == pytest.approx(20e-6 * (40 / 80) ** 2)


def test_infiltration_rows_and_timings():
    links = LIB.infiltration
    assert links.row_for(33.0).distance_m == 30
    assert links.row_for(5.0) is None
    assert links.timing_for(40.0, "resistor").as_us() == pytest.approx((50, 15, 25))
    assert links.timing_for(40.0, "capacitor").as_us() == pytest.approx((3800, 2100, 1200))


def test_vibration_regime():
    links = LIB.infiltration
    assert links.vibration_at(10.0, 1).is_identity
    assert not links.vibration_at(40.0, 1).is_identity
    assert links.vibration_at(10.0, 1, dropout_rate=50.0).dropout_rate == 50.0


def test_exfiltration_floor_between_last_live_and_first_dead_level():
    link = LIB.exfiltration
    apd = LIB.apd("apd")
    led = LIB.led("yealink-green")
    floor = link.decode_floor_snr * apd.noise_sigma
    level = lambda d: led.emit_power_burst * link.path.gain(d) * apd.volts_per_watt(led.emission_wavelength_nm)
    assert level(30) < floor < level(25)
    assert math.isinf(link.path.max_distance_m)
