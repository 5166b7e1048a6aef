"""Command-line entry point: ``ledlink <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import secrets
import sys
from pathlib import Path

import numpy as np

from .codec import (
    MIN_SAMPLES_PER_RUN,
    PREAMBLE,
    OokTiming,
    PwmTiming,
    bits_to_bytes,
    bytes_to_bits,
    deframe,
    frame_payload,
    ook_decode,
    ook_encode,
    pwm_decode_report,
    pwm_encode,
)
from .errors import ConfigurationError, LedlinkError
from .harness import (
    SWEEP_PARAMETERS,
    ScenarioConfig,
    fit_path_model,
    fit_reference_level,
    format_results_csv,
    reproduce_paper_tables,
    run_scenario,
    sweep,
    write_results_csv,
)
from .presets import load_presets
from .receivers import FrameSeries
from .trace import BINARY, OPTICAL_WATTS, SignalTrace, read_trace_csv, write_trace_csv

OOK_CLI_SAMPLES_PER_BIT = 20
DEFAULT_DISTANCE_M = {"infiltrate": 0.3, "exfiltrate": 5.0}


class UsageError(Exception):
    """Bad invocation; reported with exit status 2."""


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _pwm_timing(args):
    try:
        return PwmTiming.from_us(args.t_one_us, args.t_zero_us, args.t_off_us)
    except ConfigurationError as exc:
        raise UsageError(f"invalid PWM timing: {exc}")


def _ook_timing(rate):
    try:
        return OokTiming(rate)
    except ConfigurationError as exc:
        raise UsageError(f"invalid rate: {exc}")


def _line_sample_rate(args, timing):
    if args.sample_rate_hz is not None:
        return args.sample_rate_hz
    if args.mode == "pwm":
        shortest = min(timing.t_zero, timing.t_off)
        return float(np.ceil(MIN_SAMPLES_PER_RUN / shortest / 1e3 - 1e-9) * 1e3)
    return OOK_CLI_SAMPLES_PER_BIT * timing.bit_rate


def _line_timing(args):
    return _pwm_timing(args) if args.mode == "pwm" else _ook_timing(args.rate)


def cmd_encode(args):
    timing = _line_timing(args)
    payload = Path(args.input).read_bytes()
    bits = frame_payload(payload) if args.framed else bytes_to_bits(payload)
    fs = _line_sample_rate(args, timing)
    try:
        trace = pwm_encode(bits, timing, fs) if args.mode == "pwm" else ook_encode(bits, timing, fs)
    except ConfigurationError as exc:
        raise UsageError(str(exc))
    write_trace_csv(trace, args.output)
    print(f"wrote {len(trace)} samples at {fs:g} Hz ({bits.size} bits) to {args.output}")
    return 0


def cmd_decode(args):
    timing = _line_timing(args)
    trace = read_trace_csv(args.input, default_sample_rate=_line_sample_rate(args, timing))
    trace.require_unit(BINARY, "decoder input")
    if len(trace) == 0:
        print("warning: empty trace, no sync; writing empty payload", file=sys.stderr)
        Path(args.output).write_bytes(b"")
        return 0
    if args.mode == "pwm":
        report = pwm_decode_report(trace, timing)
        bits = report.bits
        for note, count in (("glitch(es)", report.glitches), ("stuck-high run(s)", report.stuck_runs)):
            if count:
                print(f"warning: {count} {note}", file=sys.stderr)
    else:
        bits = ook_decode(trace, timing, preamble=PREAMBLE if args.framed else None)
    if args.framed:
        payload = deframe(bits)
    else:
        usable = bits.size - bits.size % 8
        if usable != bits.size:
            print(f"warning: dropping {bits.size - usable} trailing bit(s)", file=sys.stderr)
        payload = bits_to_bytes(bits[:usable])
    Path(args.output).write_bytes(payload)
    print(f"decoded {len(payload)} bytes to {args.output}")
    return 0


def _seed(args):
    if args.seed is not None:
        return args.seed
    seed = secrets.randbelow(2**31)
    print(f"seed: {seed} (pass --seed {seed} to reproduce)", file=sys.stderr)
    return seed


def _base_config(args, seed):
    lib = load_presets()
    direction = args.direction
    try:
        lib.device(args.device)
        if args.receiver is not None:
            lib.receiver(args.receiver)
        if args.emitter is not None:
            (lib.laser if direction == "infiltrate" else lib.led)(args.emitter)
    except ConfigurationError as exc:
        raise UsageError(str(exc))
    timing = None
    if direction == "infiltrate":
        if args.rate is not None:
            raise UsageError("--rate applies to exfiltration; use --timing T_ONE,T_ZERO,T_OFF (us)")
        if args.timing is not None:
            if len(args.timing) != 3:
                raise UsageError("--timing needs three values: T_ONE,T_ZERO,T_OFF in microseconds")
            try:
                timing = PwmTiming.from_us(*args.timing)
            except ConfigurationError as exc:
                raise UsageError(f"invalid PWM timing: {exc}")
    else:
        if args.timing is not None:
            raise UsageError("--timing applies to infiltration; use --rate for exfiltration")
        if args.rate is not None:
            timing = _ook_timing(args.rate)
    distance = DEFAULT_DISTANCE_M[direction] if args.distance_m is None else args.distance_m
    try:
        return ScenarioConfig(
            direction,
            args.device,
            distance,
            emitter=args.emitter,
            receiver=args.receiver if direction == "exfiltrate" else None,
            timing=timing,
            payload_bytes=args.payload_bytes,
            repetitions=args.repetitions,
            seed=seed,
            drive_current=args.drive_current_a,
            dropout_rate=args.dropout_rate,
            keep_traces=bool(getattr(args, "trace_dir", None)),
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc))


def _dump_traces(traces, directory):
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, value in traces.items():
        if isinstance(value, FrameSeries):
            value = SignalTrace(value.values, value.fps, OPTICAL_WATTS)
        if isinstance(value, SignalTrace):
            write_trace_csv(value, out / f"{name}.csv")


def cmd_simulate(args):
    seed = _seed(args)
    cfg = _base_config(args, seed)
    res = run_scenario(cfg)
    print(f"scenario {res.scenario_id}")
    print(f"BER {res.ber:.6g}  effective rate {res.effective_rate_bps:.6g} bps"
          + ("  (decode failed)" if res.decode_failed else ""))
    for note in res.diagnostics:
        print(f"  {note}")
    if args.out:
        write_results_csv([res], args.out)
    if args.trace_dir:
        _dump_traces(res.traces, args.trace_dir)
    return 0


def cmd_sweep(args):
    seed = _seed(args)
    cfg = _base_config(args, seed)
    try:
        results = sweep(cfg, args.param, args.values, jobs=args.jobs)
    except ConfigurationError as exc:
        raise UsageError(str(exc))
    text = format_results_csv(results)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {len(results)} rows to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _read_measurements(path):
    text = Path(path).read_text()
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise UsageError(f"{path}: no measurements")
    points = []
    for lineno, row in enumerate(rows, start=1):
        try:
            d, v = float(row[0]), float(row[1])
        except (ValueError, IndexError):
            if lineno == 1:
                continue  # header
            raise UsageError(f"{path}: line {lineno}: expected two numeric columns")
        points.append((d, v))
    return points


def cmd_calibrate(args):
    points = _read_measurements(args.source)
    if args.alpha is None:
        fit = fit_path_model(points, reference_distance_m=args.reference_distance_m)
        alpha, d_ref, level = fit.alpha, fit.model.reference_distance_m, fit.model.reference_gain
        print(f"alpha {alpha:.4f}  R^2 {fit.r_squared:.4f}  points {fit.n_points}")
    else:
        alpha = args.alpha
        d_ref = args.reference_distance_m or min(d for d, _ in points)
        level = fit_reference_level(points, alpha, d_ref)
        print(f"alpha {alpha:.4f} (fixed)  points {len(points)}")
    print(f"level at {d_ref:g} m: {level:.6g}")
    if args.led:
        lib = load_presets()
        try:
            led = lib.led(args.led)
            apd = lib.apd(args.apd)
        except ConfigurationError as exc:
            raise UsageError(str(exc))
        gain = level / (led.emit_power_burst * apd.volts_per_watt(led.emission_wavelength_nm))
        print("path:")
        print(f"  reference_distance_m: {d_ref:g}")
        print(f"  attenuation_exponent: {alpha:.4f}")
        print(f"  reference_gain: {gain:.5g}")
    return 0


def cmd_reproduce_tables(args):
    report = reproduce_paper_tables(jobs=args.jobs, repetitions=args.repetitions, quick=args.quick)
    print(report.format())
    if args.out:
        buf = io.StringIO()
        fields = ("table", "row", "column", "published", "simulated", "tier", "passed", "note")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(fields)
        for c in report.cells:
            writer.writerow([getattr(c, f) for f in fields])
        Path(args.out).write_text(buf.getvalue())
    return 0 if report.ok else 1


def cmd_list_presets(args):
    for kind, names in load_presets().listing().items():
        print(f"{kind}: {', '.join(names)}")
    return 0


def _add_line_code(p):
    p.add_argument("mode", choices=("pwm", "ook"))
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--t-one-us", type=float, default=40.0)
    p.add_argument("--t-zero-us", type=float, default=15.0)
    p.add_argument("--t-off-us", type=float, default=15.0)
    p.add_argument("--rate", type=float, default=1000.0, help="OOK bit rate in bps")
    p.add_argument("--sample-rate-hz", type=float)
    p.add_argument("--framed", action="store_true", help="wrap the payload in a preamble/length/CRC frame")


def _add_scenario(p, with_direction_arg):
    if with_direction_arg:
        p.add_argument("direction", choices=("infiltrate", "exfiltrate"))
    else:
        p.add_argument("--direction", choices=("infiltrate", "exfiltrate"), default="exfiltrate")
    p.add_argument("--device", default="yealink")
    p.add_argument("--receiver", help="camera or APD preset (exfiltration)")
    p.add_argument("--emitter", help="laser preset (infiltration) or LED preset (exfiltration)")
    p.add_argument("--distance-m", type=float)
    p.add_argument("--rate", type=float, help="OOK bit rate in bps (exfiltration)")
    p.add_argument("--timing", type=_floats, help="T_ONE,T_ZERO,T_OFF in microseconds (infiltration)")
    p.add_argument("--seed", type=int)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--payload-bytes", type=int, default=1000)
    p.add_argument("--drive-current-a", type=float)
    p.add_argument("--dropout-rate", type=float, help="vibration dropouts per second")
    p.add_argument("--out", help="results CSV path")


def build_parser():
    parser = argparse.ArgumentParser(prog="ledlink", description="LED/laser optical covert channel simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="payload file to line-coded trace CSV")
    _add_line_code(p)
    p.set_defaults(func=cmd_encode)
    p = sub.add_parser("decode", help="line-coded trace CSV to payload file")
    _add_line_code(p)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("simulate", help="run one scenario")
    _add_scenario(p, True)
    p.add_argument("--trace-dir", help="write intermediate traces here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run a scenario over a list of parameter values")
    _add_scenario(p, False)
    p.add_argument("--param", choices=SWEEP_PARAMETERS, required=True)
    p.add_argument("--values", type=_floats, required=True)
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("calibrate", help="fit the path model to distance,level measurements")
    p.add_argument("--from", dest="source", required=True, help="CSV of distance_m,level rows")
    p.add_argument("--reference-distance-m", type=float)
    p.add_argument("--alpha", type=float, help="hold the exponent fixed and fit only the reference level")
    p.add_argument("--led", help="emitter LED preset; prints the matching path block")
    p.add_argument("--apd", default="apd")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("reproduce-tables", help="grade the simulator against published tables")
    p.add_argument("--repetitions", type=int, default=10)
    p.add_argument("--quick", action="store_true")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="per-cell report CSV")
    p.set_defaults(func=cmd_reproduce_tables)

    p = sub.add_parser("list-presets", help="list available preset names")
    p.set_defaults(func=cmd_list_presets)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (LedlinkError, OSError) as exc:
        print(f"ledlink: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
