import re

import numpy as np
import pytest

from ledlink.cli import main
from ledlink.harness import read_results_csv
from ledlink.trace import read_trace_csv


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.mark.parametrize("mode", ["pwm", "ook"])
def test_encode_decode_round_trip(tmp_path, capsys, mode):
    data = np.random.default_rng(1).bytes(1000)
    src, trace, dst = tmp_path / "in.bin", tmp_path / "t.csv", tmp_path / "out.bin"
    src.write_bytes(data)
    assert run(capsys, "encode", mode, str(src), str(trace))[0] == 0
    assert len(read_trace_csv(trace)) > 0
    assert run(capsys, "decode", mode, str(trace), str(dst))[0] == 0
    assert dst.read_bytes() == data


def test_framed_round_trip(tmp_path, capsys):
    (tmp_path / "in.bin").write_bytes(b"hello")
    run(capsys, "encode", "ook", str(tmp_path / "in.bin"), str(tmp_path / "t.csv"), "--framed")
    code, _, _ = run(capsys, "decode", "ook", str(tmp_path / "t.csv"), str(tmp_path / "o.bin"), "--framed")
    assert code == 0
    assert (tmp_path / "o.bin").read_bytes() == b"hello"


def test_decode_empty_trace_warns(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("time_s,value,unit\n")
    code, _, err = run(capsys, "decode", "pwm", str(tmp_path / "t.csv"), str(tmp_path / "o.bin"))
    assert code == 0
    assert "empty trace" in err
    assert (tmp_path / "o.bin").read_bytes() == b""


def test_decode_bad_header_reports_line(tmp_path, capsys):
    (tmp_path / "t.csv").write_text("when,what\n0,1\n")
    code, _, err = run(capsys, "decode", "pwm", str(tmp_path / "t.csv"), str(tmp_path / "o.bin"))
    assert code == 1
    assert "line 1" in err


def test_invalid_pwm_timing_is_usage_error(tmp_path, capsys):
    (tmp_path / "in.bin").write_bytes(b"a")
    with pytest.raises(SystemExit) as exc:
        main(["encode", "pwm", str(tmp_path / "in.bin"), str(tmp_path / "t.csv"), "--t-zero-us", "50"])
    assert exc.value.code == 2


def test_missing_input_file_is_error(tmp_path, capsys):
    code, _, err = run(capsys, "encode", "pwm", str(tmp_path / "nope.bin"), str(tmp_path / "t.csv"))
    assert code == 1
    assert err.startswith("ledlink: error:")


def test_simulate_infiltration(tmp_path, capsys):
    out_csv = tmp_path / "r.csv"
    code, out, _ = run(capsys, "simulate", "infiltrate", "--device", "tl-wr1043nd", "--distance-m", "25",
                       "--seed", "7", "--payload-bytes", "200", "--out", str(out_csv))
    assert code == 0
    assert "BER 0 " in out
    rows = read_results_csv(out_csv)
    assert rows[0]["ber"] == 0.0 and rows[0]["device"] == "tl-wr1043nd"


def test_simulate_exfiltration_dead_link(capsys):
    code, out, _ = run(capsys, "simulate", "exfiltrate", "--distance-m", "30", "--seed", "1",
                       "--payload-bytes", "50")
    assert code == 0
    assert "link dead" in out


def test_simulate_writes_traces(tmp_path, capsys):
    code, _, _ = run(capsys, "simulate", "exfiltrate", "--receiver", "camera", "--rate", "119", "--seed", "1",
                     "--payload-bytes", "20", "--distance-m", "40", "--trace-dir", str(tmp_path))
    assert code == 0
    files = sorted(p.name for p in tmp_path.glob("*.csv"))
    assert "received.csv" in files
    assert len(read_trace_csv(tmp_path / "received.csv")) > 0


def test_random_seed_is_printed(capsys):
    code, _, err = run(capsys, "simulate", "exfiltrate", "--payload-bytes", "10")
    assert code == 0
    seed = int(re.search(r"seed: (\d+)", err).group(1))
    assert f"--seed {seed}" in err


def test_unknown_preset_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "infiltrate", "--device", "nokia", "--seed", "1"])
    assert exc.value.code == 2
    assert "tl-mr3020" in capsys.readouterr().err


def test_sweep_rows(tmp_path, capsys):
    out_csv = tmp_path / "s.csv"
    code, _, _ = run(capsys, "sweep", "--param", "distance_m", "--values", "5,10,15,20,25,30",
                     "--seed", "1", "--payload-bytes", "50", "--jobs", "1", "--out", str(out_csv))
    assert code == 0
    rows = read_results_csv(out_csv)
    assert [r["distance_m"] for r in rows] == [5, 10, 15, 20, 25, 30]
    assert "link dead" in rows[-1]["diagnostics"]


def test_sweep_bad_parameter_for_direction(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--direction", "infiltrate", "--device", "rpi", "--param", "bit_rate",
              "--values", "100", "--seed", "1"])
    assert exc.value.code == 2


def test_calibrate(tmp_path, capsys):
    src = tmp_path / "m.csv"
    src.write_text("distance_m,level_v\n" + "".join(f"{d},{0.3 * (5 / d) ** 1.7}\n" for d in (5, 10, 20, 25)))
    code, out, _ = run(capsys, "calibrate", "--from", str(src), "--led", "yealink-green")
    assert code == 0
    assert re.search(r"alpha 1\.7000", out)
    assert "attenuation_exponent: 1.7000" in out
    code, out, _ = run(capsys, "calibrate", "--from", str(src), "--alpha", "1.7", "--reference-distance-m", "10")
    assert code == 0
    assert f"level at 10 m: {0.3 * 0.5 ** 1.7:.6g}" in out


def test_calibrate_too_few_points(tmp_path, capsys):
    src = tmp_path / "m.csv"
    src.write_text("5,0.3\n10,0.1\n")
    code, _, err = run(capsys, "calibrate", "--from", str(src))
    assert code == 1
    assert "at least 3" in err


def test_reproduce_tables_quick(tmp_path, capsys):
    code, out, _ = run(capsys, "reproduce-tables", "--quick", "--jobs", "1", "--out", str(tmp_path / "c.csv"))
    assert code == 0
    assert "0 exact failure(s)" in out
    assert (tmp_path / "c.csv").read_text().startswith("table,row,column,published")


def test_list_presets(capsys):
    code, out, _ = run(capsys, "list-presets")
    assert code == 0
    assert "yealink" in out and "apd" in out and "camera" in out
