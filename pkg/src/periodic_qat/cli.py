"""Command-line front end: train, quantize, eval, sweep, landscape."""

import argparse
import csv
import json
import os
import platform
import sys
from dataclasses import replace

import numpy as np

from . import __version__, _backend
from .data import DataError, dataset_from_config
from .metrics import quantization_report
from .model_io import (
    ModelIOError,
    export_quantized,
    load_any,
    load_checkpoint,
    read_header,
    save_checkpoint,
)
from .quantizer import DomainError, bits_to_frequency, frequency_to_bits
from .regularizer import KINDS, RegularizerConfig, penalty_terms
from .trainer import (
    AmplitudeSchedule,
    ConfigError,
    DivergenceError,
    evaluate,
    load_config,
    train,
    write_records_csv,
)

EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_DIVERGED = 5
ZERO_TOLERANCE = 1e-12  # relative to amplitude

MANIFEST_VERSION = 1
EVAL_SCHEMA = "periodic-qat/eval/1"


def _family(kind):
    return "cosine" if kind == "cosine" else "sine_or_hat"


def _manifest(command, argv, **extra):
    return {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "argv": list(argv),
        "versions": {"periodic_qat": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "backend": _backend.current(),
        **extra,
    }


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_frequency(args, kind):
    """``(t, frequency)`` from mutually exclusive --bits / --frequency."""
    family = _family(kind)
    if args.frequency is not None:
        return frequency_to_bits(args.frequency, family), args.frequency
    return args.bits, bits_to_frequency(args.bits, family)


def cmd_train(args, argv):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    config.check_guidance()
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = _manifest("train", argv, config=config.to_dict(), seed=config.seed)
    _write_json(os.path.join(args.out_dir, "manifest.json"), manifest)
    model, records = train(config)
    save_checkpoint(model, os.path.join(args.out_dir, "checkpoint.pqck"))
    write_records_csv(records, os.path.join(args.out_dir, "epochs.csv"))
    last = records[-1]
    print(f"epochs={len(records)} test_error={last.test_error:.2f} penalty={last.penalty:.6g} "
          f"lattice_distance={last.lattice_distance:.4f}")
    return 0


def cmd_quantize(args, argv):
    t, frequency = _resolve_frequency(args, args.kind)
    model = load_checkpoint(args.checkpoint)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    summary = export_quantized(model, t, args.kind, args.out)
    _write_json(args.out + ".manifest.json",
                _manifest("quantize", argv, source=os.path.abspath(args.checkpoint), **summary))
    if args.json:
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(f"bits={summary['t']} frequency={summary['frequency']} lattice={summary['lattice']}")
        for name, n in summary["levels"].items():
            print(f"  {name}: {n} levels")
        print(f"payload {summary['payload_bytes']} bytes vs float32 {summary['checkpoint_payload_bytes']} "
              f"bytes (ratio {summary['size_ratio']:.4f})")
    return 0


def cmd_eval(args, argv):
    config = load_config(args.config)
    _, test_set = dataset_from_config(config.dataset)
    fmt = read_header(args.path)["format"]
    model = load_any(args.path)
    err, loss = evaluate(model, test_set)
    result = {"schema": EVAL_SCHEMA, "path": os.path.abspath(args.path), "format": fmt,
              "test_error": err, "test_loss": loss, "report": None}
    if args.bits is not None or args.frequency is not None:
        t, _ = _resolve_frequency(args, args.kind)
        result["report"] = quantization_report(model, test_set, t, _family(args.kind)).to_dict()
    if args.out_dir:
        os.makedirs(args.out_dir, exist_ok=True)
        _write_json(os.path.join(args.out_dir, "eval.json"), result)
        _write_json(os.path.join(args.out_dir, "manifest.json"), _manifest("eval", argv, config=config.to_dict()))
    if args.json:
        print(json.dumps(result, indent=2, sort_keys=True))
    else:
        print(f"{fmt}: test_error={err:.2f} loss={loss:.6f}")
        rep = result["report"]
        if rep:
            print(f"  {rep['t']}-bit lattice (frequency {rep['frequency']}): "
                  f"error {rep['quantized_error']:.2f}, drop {rep['drop']:+.2f} points")
    return 0


def _quantized_error(config, test_set, datasets, t):
    model, _ = train(config, datasets=datasets)
    rep = quantization_report(model, test_set, t, _family(config.regularizer.kind))
    return rep.baseline_error, rep.quantized_error


SWEEP_COLUMNS = ("amplitude", "bits", "frequency", "seeds", "baseline_error",
                 "fixed_quantized_error", "dynamic_quantized_error", "dynamic_start_amplitude")


def cmd_sweep(args, argv):
    config = load_config(args.config)
    kind = config.regularizer.kind
    t = args.bits if args.bits is not None else frequency_to_bits(config.regularizer.frequency, _family(kind))
    config = replace(config, regularizer=replace(config.regularizer, frequency=bits_to_frequency(t, _family(kind))))
    seeds = args.seeds if args.seeds else [config.seed]
    os.makedirs(args.out_dir, exist_ok=True)
    _write_json(os.path.join(args.out_dir, "manifest.json"),
                _manifest("sweep", argv, config=config.to_dict(), seeds=seeds, amplitudes=args.amplitudes, bits=t))
    sched = config.schedule
    baseline, results = [], {a: {"fixed": [], "dynamic": []} for a in args.amplitudes}
    for seed in seeds:
        cfg = replace(config, seed=seed)
        datasets = dataset_from_config(cfg.dataset)
        base = replace(cfg, schedule=AmplitudeSchedule(0.0, sched.step_factor, sched.step_period_epochs, "fixed"))
        baseline.append(_quantized_error(base, datasets[1], datasets, t)[0])
        for amp in args.amplitudes:
            for mode in ("fixed", "dynamic"):
                s = AmplitudeSchedule.ending_at(amp, cfg.epochs, sched.step_factor, sched.step_period_epochs, mode)
                results[amp][mode].append(_quantized_error(replace(cfg, schedule=s), datasets[1], datasets, t)[1])
    path = os.path.join(args.out_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_COLUMNS)
        for amp in args.amplitudes:
            start = AmplitudeSchedule.ending_at(amp, config.epochs, sched.step_factor, sched.step_period_epochs)
            writer.writerow([repr(amp), t, bits_to_frequency(t, _family(kind)), len(seeds),
                             repr(float(np.median(baseline))),
                             repr(float(np.median(results[amp]["fixed"]))),
                             repr(float(np.median(results[amp]["dynamic"]))),
                             repr(start.start_amplitude)])
    print(f"wrote {path}")
    return 0


def landscape(kind, frequency, amplitude=1.0, samples=None):
    """Grid ``w/c`` over ``[-1, 1]`` and the penalty there; default grid hits every zero."""
    if samples is None:
        samples = 200 * frequency + 1
    if samples < 2:
        raise ValueError("need at least 2 samples")
    half = samples - 1
    u = (2.0 * np.arange(samples) - half) / half
    cfg = RegularizerConfig(kind, amplitude, frequency)
    return u, penalty_terms(u, cfg, c=1.0)


def count_zeros(values, amplitude):
    return int(np.sum(values <= ZERO_TOLERANCE * amplitude))


def cmd_landscape(args, argv):
    if args.bits is not None:
        frequency = bits_to_frequency(args.bits, _family(args.kind))
    else:
        frequency = args.frequency if args.frequency is not None else 1
    u, r = landscape(args.kind, frequency, args.amplitude, args.samples)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("w_over_c", "penalty"))
        for a, b in zip(u, r):
            writer.writerow((repr(float(a)), repr(float(b))))
    _write_json(args.out + ".manifest.json", _manifest("landscape", argv, kind=args.kind, frequency=frequency,
                                                       amplitude=args.amplitude, samples=len(u)))
    zeros = u[r <= ZERO_TOLERANCE * args.amplitude]
    print(f"kind={args.kind} frequency={frequency} samples={len(u)} zeros={zeros.size}")
    if zeros.size <= 16:
        print("  zeros at " + ", ".join(f"{z:g}" for z in zeros))
    return 0


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text):
    return [int(x) for x in text.split(",") if x.strip()]


def _add_bits_or_frequency(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--bits", type=int, help="bit-width t (converted to a frequency)")
    g.add_argument("--frequency", type=int, help="regularizer frequency (converted to bits)")


def build_parser():
    parser = argparse.ArgumentParser(prog="periodic-qat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON config (or a run manifest)")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", help="export a checkpoint as lattice-quantized integer codes")
    p.add_argument("checkpoint")
    _add_bits_or_frequency(p)
    p.add_argument("--kind", choices=KINDS, default="sine")
    p.add_argument("--out", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("eval", help="evaluate a checkpoint or quantized export on the config's test set")
    p.add_argument("path")
    p.add_argument("--config", required=True)
    _add_bits_or_frequency(p, required=False)
    p.add_argument("--kind", choices=KINDS, default="sine")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="final quantized error for fixed and dynamic schedules per final amplitude")
    p.add_argument("--config", required=True)
    p.add_argument("--amplitudes", type=_floats, required=True, help="comma-separated final amplitudes")
    p.add_argument("--bits", type=int)
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds; medians are reported")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("landscape", help="sample the penalty over w/c in [-1, 1] as CSV")
    p.add_argument("--kind", choices=KINDS, default="sine")
    _add_bits_or_frequency(p, required=False)
    p.add_argument("--amplitude", type=float, default=1.0)
    p.add_argument("--samples", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_landscape)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, DomainError, DataError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelIOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: {exc}; diagnostic={json.dumps(exc.diagnostic)}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
