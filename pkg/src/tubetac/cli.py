"""Command-line entry point: ``tubetac {synth,process,calibrate,validate,demo}``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .calibration import (CalibrationError, FitError, PalpationRecord, SelectionError,
                          extract_linear_calibration, fit_force_deflection,
                          fit_length_frequency, select_amplitude_threshold)
from .config import ArrayConfig, ConfigError, load_config, save_config, validate_document
from .dsp import BandError, EmptySpectrogramError, spectrogram
from .estimator import (ConfigurationError, StreamingEstimator, TaringError, analysis_range,
                        process_spectrogram, process_stream, with_bands)
from .io import (FormatError, atomic_write_text, iter_wav_chunks, read_traces, read_wav,
                 reading_record, write_readings, write_sidecar, write_spectrogram,
                 write_traces, write_wav)
from .model import ModelDomainError, ModelRangeError
from .svg import line_chart
from .synth import SynthConfig, SynthesisError, ground_truth, synthesize

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_CONFIG = 4
EXIT_NUMERIC = 5

log = logging.getLogger("tubetac")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    try:
        traces = read_traces(args.traces)
    except FormatError as exc:
        if "empty" in str(exc) or "at least two" in str(exc):
            raise UsageError(str(exc)) from None
        raise
    scfg = SynthConfig(cfg.sample_rate, args.snr, args.loudness, args.seed)
    audio = synthesize(traces, cfg.taxels, scfg)
    sidecar = Path(args.sidecar) if args.sidecar else Path(args.out).with_suffix(".truth.csv")
    gt = ground_truth(traces, cfg.taxels, len(audio), cfg.sample_rate, cfg.dsp)
    write_wav(args.out, audio)
    write_sidecar(sidecar, gt)
    log.info("wrote %s (%.1f s) and %s", args.out, audio.duration, sidecar)
    return EXIT_OK


def _tare(args):
    return tuple(args.tare_window) if args.tare_window else None


def cmd_process(args) -> int:
    cfg = load_config(args.config)
    missing = [tx.id for tx in cfg.taxels if tx.linear is None]
    if missing:
        raise ConfigurationError(f"no linear calibration for taxel(s) {', '.join(missing)}")
    if args.stream:
        return _process_stream_mode(args, cfg)
    if args.out is None:
        raise UsageError("an output CSV path is required unless --stream is given")
    audio = read_wav(args.wav)
    if audio.sample_rate != cfg.sample_rate:
        log.warning("WAV rate %d Hz differs from config rate %d Hz", audio.sample_rate, cfg.sample_rate)
    array = with_bands(cfg.taxels, cfg.guard_hz)
    fmin, fmax = analysis_range(array, audio.sample_rate, cfg.dsp)
    spec = spectrogram(audio, cfg.dsp, fmin=fmin, fmax=fmax)
    result = process_spectrogram(spec, array, cfg.dsp, tare_window=_tare(args), guard=cfg.guard_hz)
    for key, msg in result.errors.items():
        log.error("taxel %s: %s", key, msg)
    write_readings(args.out, result)
    if args.dump_spec:
        write_spectrogram(args.dump_spec, spec)
    if args.plot:
        series = {k: (tr.times, tr.force) for k, tr in sorted(result.tracks.items())}
        atomic_write_text(args.plot, line_chart(series, title="Estimated normal force",
                                                xlabel="time [s]", ylabel="force [N]"))
    if result.errors and not result.tracks:
        return EXIT_NUMERIC
    return EXIT_OK


def _process_stream_mode(args, cfg: ArrayConfig) -> int:
    est = None
    rows = []
    out = sys.stdout
    for rate, chunk in iter_wav_chunks(args.wav, args.chunk):
        if est is None:
            est = StreamingEstimator(cfg.taxels, rate, cfg.dsp, tare_window=_tare(args),
                                     guard=cfg.guard_hz)
        for key, r in est.feed(chunk):
            rows.append(reading_record(r.time, key, r))
            out.write(json.dumps(_record(key, r)) + "\n")
    if est is not None:
        for key, r in est.flush():
            rows.append(reading_record(r.time, key, r))
            out.write(json.dumps(_record(key, r)) + "\n")
    out.flush()
    if args.out:
        from .io import READINGS_COLUMNS, write_csv
        rows.sort(key=lambda row: (row[0], row[1]))
        write_csv(args.out, READINGS_COLUMNS, rows)
    return EXIT_OK


def _record(key, r) -> dict:
    return {"time_s": round(r.time, 6), "taxel_id": key, "freq_hz": float(f"{r.freq:.6g}"),
            "amplitude": float(f"{r.amplitude:.6g}"),
            "force_n": None if r.force is None else float(f"{r.force:.6g}"),
            "contact": str(r.contact), "warning": r.warning}


def _read_length_points(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        if "L_mm" not in cols or "freq_hz" not in cols:
            raise FormatError(f"{path}: length calibration needs columns L_mm, freq_hz")
        return [(float(r["L_mm"]) * 1e-3, float(r["freq_hz"])) for r in reader]


def _plain(obj):
    """Recursively convert numpy scalars so the YAML safe dumper accepts them."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_calibrate(args) -> int:
    fragment: dict = {}
    diag: dict = {}
    if args.model == "length":
        res = fit_length_frequency(_read_length_points(args.palpation))
        fragment["fits"] = {"length": {"b1": res.fit.b1, "b2": res.fit.b2, "b3": res.fit.b3,
                                       "L_unit": "m"}}
        diag = {"rms_hz": res.rms}
    else:
        try:
            rec = PalpationRecord.from_csv(args.palpation)
        except ValueError as exc:
            raise FormatError(str(exc)) from None
        if args.model == "cap":
            loaded = rec.force > 0
            res = fit_force_deflection(zip(rec.deflection[loaded], rec.force[loaded]))
            f = res.fit
            fragment["fits"] = {"force": {"beta1": f.beta1, "beta2": f.beta2, "beta3": f.beta3,
                                          "F_max": f.F_max, "delta_unit": "mm"}}
            diag = {"rms_n": res.rms, "iterations": res.iterations,
                    "residual_history": [float(h) for h in res.history]}
        else:
            sel = select_amplitude_threshold(rec, args.tol)
            diag = {"threshold": sel.threshold, "retained": len(sel.record),
                    "F_min": float(sel.record.force.min())}
            if args.model == "threshold":
                fragment["threshold"] = sel.threshold
            else:
                lin = extract_linear_calibration(rec, sel.threshold)
                fragment["linear"] = {"f0": lin.f0, "S": lin.sensitivity_S, "F_min": lin.F_min,
                                      "F_max": lin.F_max, "threshold": lin.amplitude_threshold}
    text = yaml.safe_dump(_plain({**fragment, "diagnostics": diag}), sort_keys=False)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        doc = yaml.safe_load(Path(args.config).read_text())
    except yaml.YAMLError as exc:
        print(f"[syntax] {args.config}: {exc}")
        return EXIT_CONFIG
    _, violations = validate_document(doc)
    if violations:
        for v in violations:
            print(v)
        return EXIT_CONFIG
    print(f"{args.config}: valid")
    return EXIT_OK


def cmd_demo(args) -> int:
    from .demo import TARE_WINDOW, calibrate_array, demo_array, demo_traces
    out = Path(args.outdir)
    array = demo_array()
    if args.calibrate:
        array = with_bands(calibrate_array(array, SynthConfig(seed=args.seed)))
    cfg = ArrayConfig(array)
    traces = demo_traces()
    save_config(cfg, out / "demo.yaml")
    write_traces(out / "traces.csv", traces)
    scfg = SynthConfig(cfg.sample_rate, args.snr, seed=args.seed)
    audio = synthesize(traces, cfg.taxels, scfg)
    write_wav(out / "demo.wav", audio)
    gt = ground_truth(traces, cfg.taxels, len(audio), cfg.sample_rate, cfg.dsp)
    write_sidecar(out / "demo.truth.csv", gt)
    result = process_stream(audio, cfg.taxels, cfg.dsp, tare_window=TARE_WINDOW)
    write_readings(out / "readings.csv", result)
    series = {}
    for key, tr in sorted(result.tracks.items()):
        series[f"{key} est"] = (tr.times, tr.force)
        series[f"{key} true"] = (gt.times, np.where(gt.force[key] > 0, gt.force[key], np.nan))
    atomic_write_text(out / "force.svg", line_chart(series, title="Demo round trip",
                                                    xlabel="time [s]", ylabel="force [N]"))
    for key, tr in sorted(result.tracks.items()):
        lin = cfg.taxel(key).linear
        F = gt.force[key]
        sel = (F >= lin.F_min) & (F <= lin.F_max)
        est = np.where(np.isnan(tr.force), 0.0, tr.force)
        rms = float(np.sqrt(np.mean((est[sel] - F[sel]) ** 2))) if sel.any() else float("nan")
        print(f"taxel {key}: f0 {tr.f0:.2f} Hz, RMS force error {rms:.3f} N over {int(sel.sum())} frames")
    print(f"wrote demo files to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubetac", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize taxel audio from force traces")
    s.add_argument("config")
    s.add_argument("traces", help="wide CSV: time_s, then one force column per taxel id")
    s.add_argument("out", help="output WAV")
    s.add_argument("--snr", type=float, default=None, help="white-noise SNR in dB")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--loudness", type=float, default=SynthConfig.loudness)
    s.add_argument("--sidecar", help="ground-truth CSV (default: <out>.truth.csv)")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("process", help="convert audio to per-taxel force readings")
    s.add_argument("config")
    s.add_argument("wav")
    s.add_argument("out", nargs="?", help="readings CSV")
    s.add_argument("--tare-window", nargs=2, type=float, metavar=("T0", "T1"))
    s.add_argument("--dump-spec", metavar="CSV")
    s.add_argument("--plot", metavar="SVG")
    s.add_argument("--stream", action="store_true", help="line-delimited JSON records on stdout")
    s.add_argument("--chunk", type=int, default=4410, help="samples per chunk in --stream mode")
    s.set_defaults(func=cmd_process)

    s = sub.add_parser("calibrate", help="fit calibration constants")
    s.add_argument("palpation", help="palpation CSV (or L_mm,freq_hz CSV for --model length)")
    s.add_argument("--model", choices=("length", "cap", "threshold", "linear"), required=True)
    s.add_argument("--tol", type=float, default=2.5, help="monotonicity tolerance [Hz]")
    s.add_argument("-o", "--out", help="fragment YAML (default: stdout)")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("validate", help="check a configuration file")
    s.add_argument("config")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("demo", help="write and run the four-taxel demonstration")
    s.add_argument("outdir")
    s.add_argument("--snr", type=float, default=30.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--calibrate", action="store_true",
                   help="calibrate each taxel on synthetic palpation instead of tabulated values")
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ConfigError as exc:
        for v in exc.violations:
            print(f"configuration error: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, BandError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, SelectionError, CalibrationError, TaringError, EmptySpectrogramError,
            ModelDomainError, ModelRangeError, SynthesisError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
