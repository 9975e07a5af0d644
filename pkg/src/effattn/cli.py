"""Command-line front end: ``effattn {bench,verify,demo,report}``.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import bench
from .core_math import ContractError, Rng
from .mechanisms import MechanismConfig, MechanismKind, check_mode
from .pipeline import PipelineConfig, init_model, load_config, model_forward, synth_features

EXIT_OK, EXIT_VERIFY_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(flag):
    def parse(text):
        try:
            values = [int(part) for part in text.split(",") if part.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"{flag} expects comma-separated integers, got {text!r}") from None
        if not values:
            raise argparse.ArgumentTypeError(f"{flag} is empty")
        return values
    return parse


def _kind(text):
    try:
        return MechanismKind.parse(text)
    except ContractError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _kind_list(text):
    return [_kind(part) for part in text.split(",") if part.strip()]


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="effattn", description="Efficient attention benchmark toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{bench,verify,demo,report}")

    b = sub.add_parser("bench", help="run the latency/memory sweep and write CSV plus plot data")
    b.add_argument("--config", help="key = value file; explicit flags override it")
    b.add_argument("--mechanisms", type=_kind_list, help="comma list, e.g. sa,kda (default: all six)")
    b.add_argument("--mode", help="parallel, recurrent, auto (default) or all")
    b.add_argument("--lengths", type=_int_list("--lengths"), help="ascending comma list of sequence lengths")
    b.add_argument("--dim", type=_positive, help="model width D (default 256)")
    b.add_argument("--heads", type=_positive, help="number of heads (default 4)")
    b.add_argument("--slots", type=_positive, help="GSA slot count (default 64)")
    b.add_argument("--repeats", type=int, help="timed runs per point, at least 3 (default 5)")
    b.add_argument("--warmup", type=int, help="untimed runs per point (default 2)")
    b.add_argument("--seed", type=int, help="master seed (default 0)")
    b.add_argument("--out", help="CSV path (default results.csv)")
    b.add_argument("--max-length-cap", type=_positive, help="skip quadratic modes above this length")

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--mechanism", type=_kind, help="only properties scoped to this mechanism")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--include-timing", action="store_true",
                   help="also run wall-clock scaling properties (slow, needs an idle machine)")

    d = sub.add_parser("demo", help="one end-to-end forward pass on synthetic features")
    d.add_argument("--mechanism", type=_kind, default=MechanismKind.SA)
    d.add_argument("--mode", help="parallel or recurrent (default depends on the mechanism)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--speech-len", type=_positive, default=200)
    d.add_argument("--text-len", type=_positive, default=30)
    d.add_argument("--dim", type=_positive, default=256)
    d.add_argument("--heads", type=_positive, default=4)
    d.add_argument("--slots", type=_positive, default=64)

    r = sub.add_parser("report", help="summarize an existing bench CSV")
    r.add_argument("csv", help="raw records CSV written by bench")
    return parser


_BENCH_FLAGS = {"mechanisms": "mechanisms", "mode": "mode", "lengths": "lengths", "dim": "model_dim",
                "heads": "num_heads", "slots": "slots", "repeats": "repeats", "warmup": "warmup",
                "seed": "seed", "max_length_cap": "max_length_cap", "gate_rank": "gate_rank"}


def _bench_config(args) -> tuple[bench.BenchConfig, str]:
    settings = load_config(args.config) if args.config else {}
    if "mechanism" in settings:
        settings.setdefault("mechanisms", [settings.pop("mechanism")])
    for key in ("speech_len", "text_len", "mechanism"):
        settings.pop(key, None)
    for key in _BENCH_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    out = args.out or settings.pop("out", "results.csv")
    settings.pop("out", None)
    lengths = settings.get("lengths")
    if lengths is not None and any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise UsageError(f"--lengths must be strictly ascending, got {','.join(map(str, lengths))}")
    kwargs = {_BENCH_FLAGS[k]: v for k, v in settings.items()}
    if "mechanisms" in kwargs:
        kwargs["mechanisms"] = tuple(kwargs["mechanisms"])
    if "lengths" in kwargs:
        kwargs["lengths"] = tuple(kwargs["lengths"])
    return bench.BenchConfig(**kwargs), out


def _print_fits(fits) -> None:
    print(f"{'mechanism':<10}{'mode':<11}{'slope':>8}{'r2':>8}  class")
    for f in fits:
        print(f"{f.mechanism:<10}{f.mode:<11}{f.slope:>8.3f}{f.r2:>8.4f}  {f.classification}")


def cmd_bench(args) -> int:
    try:
        config, out = _bench_config(args)
    except ContractError as exc:
        raise UsageError(str(exc)) from None

    def progress(name, mode, L, median_ms, peak):
        print(f"{name}/{mode} L={L}: median {median_ms:.3f} ms, peak {peak} B", file=sys.stderr, flush=True)

    result = bench.run_sweep(config, progress=progress)
    fits = bench.fits_from_records(result.records)
    raw, fitted = bench.emit_csv(result.records, fits, out)
    panels = bench.emit_plot_data(result.records, out) if result.records else []
    _print_fits(fits)
    for failure in result.failures:
        print(f"skipped {failure.mechanism}/{failure.mode} at L={failure.seq_len}: {failure.reason}")
    print("wrote " + ", ".join(str(p) for p in (raw, fitted, *panels)))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_properties

    results = run_properties(args.mechanism, seed=args.seed, include_timing=args.include_timing,
                             stream=sys.stdout)
    failed = [r for r in results if r.status == "FAIL"]
    skipped = sum(r.status == "SKIP" for r in results)
    print(f"{len(results) - len(failed) - skipped} passed, {len(failed)} failed, {skipped} skipped")
    return EXIT_VERIFY_FAILED if failed else EXIT_OK


def cmd_demo(args) -> int:
    try:
        mode = check_mode(args.mechanism, args.mode) if args.mode else None
        mcfg = MechanismConfig(model_dim=args.dim, num_heads=args.heads, slots=args.slots, seed=args.seed)
        config = PipelineConfig(speech_len=args.speech_len, text_len=args.text_len, model_dim=args.dim,
                                mechanism=args.mechanism, mechanism_config=mcfg, mode=mode, seed=args.seed)
    except ContractError as exc:
        raise UsageError(str(exc)) from None
    rng = Rng(args.seed).child("demo")
    S = synth_features(rng.child("speech"), config.speech_len, config.model_dim)
    E = synth_features(rng.child("text"), config.text_len, config.model_dim)
    logits, label = model_forward(S, E, config, init_model(config))
    print(f"mechanism {config.mechanism.value} seed {args.seed} length {config.seq_len}")
    print("logits " + " ".join(f"{x:.6f}" for x in logits))
    print(f"class {label}")
    return EXIT_OK if np.all(np.isfinite(logits)) else EXIT_RUNTIME


def cmd_report(args) -> int:
    records = bench.read_csv(args.csv)
    if not records:
        print(f"no records in {args.csv}")
        return EXIT_OK
    summary = bench.summarize(records)
    _print_fits(summary.fits)
    if summary.ratios:
        print()
        print(f"{'vs SA':<10}{'mode':<11}{'L':>7}{'latency':>10}{'memory':>11}")
        for r in summary.ratios:
            print(f"{r['mechanism']:<10}{r['mode']:<11}{r['seq_len']:>7}"
                  f"{r['latency_ratio']:>9.2f}x{r['memory_ratio']:>10.1f}x")
    for note in summary.notes:
        print()
        print("note: " + note)
    return EXIT_OK


COMMANDS = {"bench": cmd_bench, "verify": cmd_verify, "demo": cmd_demo, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for bad usage
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"effattn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except bench.CsvFormatError as exc:
        print(f"effattn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ContractError, MemoryError, ValueError) as exc:
        print(f"effattn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
