"""Command-line entry point: run, sweep, report, trace.

Exit codes: 0 success, 1 validation failure (bad arguments, profile, trace or
input CSV), 2 I/O failure while reading or writing outputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from ._kernels import USE_NUMBA
from .optimizer import JointWeights
from .profile_io import load_profile_document, profile_from_dict
from .reporting import write_csv, write_json
from .runtime import STEP_COLUMNS, run_trace, write_steps_csv
from .scenario import (
    DEFAULT_SCENARIO,
    DEFAULT_SCENARIO_SEED,
    generate_trace,
    load_trace,
    materialize_detections,
    parse_segments,
    save_trace,
    trace_to_jsonl,
)
from .types import ConfigurationError

OUT_ENV = "CTXFUSE_OUT"
GATES = ("knowledge", "estimator", "oracle")
PARETO_COLUMNS = ("gate", "lambda_e", "avg_loss", "avg_energy_j", "avg_latency_s")
SCENARIO_COLUMNS = ("context", "n_steps", "avg_loss", "avg_energy_j", "avg_latency_s")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class InputError(Exception):
    """Validation failure reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    # usage errors are validation failures here, not argparse's exit 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _fail(msg: str, code: int) -> int:
    print(f"ctxfuse: error: {msg}", file=sys.stderr)
    return code


def _out_dir(args) -> Path:
    return Path(args.out if args.out is not None else os.environ.get(OUT_ENV, "out"))


def _load_profile(name):
    try:
        doc, raw = load_profile_document(name)
        return profile_from_dict(doc, name=str(name)), hashlib.sha256(raw).hexdigest()
    except ConfigurationError as e:
        raise InputError(str(e)) from None


def _load_trace(args, profile):
    if args.trace is not None and args.generate is not None:
        raise InputError("--trace and --generate are mutually exclusive")
    if args.trace is not None:
        path = Path(args.trace)
        if not path.is_file():
            raise InputError(f"trace not found: {path}")
        try:
            trace = load_trace(path)
        except ConfigurationError as e:
            raise InputError(str(e)) from None
        return trace, hashlib.sha256(path.read_bytes()).hexdigest()
    spec = args.generate if args.generate is not None else DEFAULT_SCENARIO
    seed = args.trace_seed if args.trace_seed is not None else (DEFAULT_SCENARIO_SEED if args.generate is None else args.seed)
    try:
        trace = generate_trace(parse_segments(spec), objects_per_frame=args.objects, seed=seed)
    except ValueError as e:
        raise InputError(str(e)) from None
    return trace, hashlib.sha256(trace_to_jsonl(trace).encode()).hexdigest()


def _check_common(args):
    if args.tc < 1:
        raise InputError("--tc must be >= 1")
    if args.gamma is not None and not args.gamma >= 0:
        raise InputError("--gamma must be >= 0")
    if args.objects < 0:
        raise InputError("--objects must be >= 0")


def _manifest(command, args, profile_hash, trace_hash) -> dict:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}
    return {
        "tool": "ctxfuse",
        "version": __version__,
        "command": command,
        "args": resolved,
        "seed": args.seed,
        "profile_hash": profile_hash,
        "trace_hash": trace_hash,
        "kernel_backend": "numba" if USE_NUMBA else "numpy",
    }


def _finite(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def cmd_run(args) -> int:
    _check_common(args)
    try:
        weights = JointWeights(args.lambda_e)
    except ValueError as e:
        raise InputError(str(e)) from None
    profile, phash = _load_profile(args.profile)
    trace, thash = _load_trace(args, profile)
    try:
        records, summary = run_trace(trace, profile, args.gate, weights, gamma=args.gamma, t_c=args.tc, seed=args.seed)
    except ConfigurationError as e:
        raise InputError(str(e)) from None
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    write_steps_csv(records, out / "steps.csv")
    if args.format == "json":
        write_json(out / "steps.json", [{c: r.row()[c] for c in STEP_COLUMNS} for r in records])
    write_json(out / "summary.json", _finite(summary))
    write_json(out / "manifest.json", _manifest("run", args, phash, thash))
    print(
        f"{summary['n_steps']} steps, {summary['n_context_id_steps']} context-ID, {summary['switch_count']} switches | "
        f"avg loss {summary['avg_loss']:.4f}  avg energy {summary['avg_energy_j']:.4f} J -> {out}"
    )
    return EXIT_OK


def _csv_list(text: str, conv, flag: str) -> list:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise InputError(f"{flag} is empty")
    try:
        return [conv(s) for s in items]
    except ValueError as e:
        raise InputError(f"{flag}: {e}") from None


def cmd_sweep(args) -> int:
    _check_common(args)
    lambdas = _csv_list(args.lambdas, float, "--lambdas")
    gates = _csv_list(args.gates, str, "--gates")
    for lam in lambdas:
        try:
            JointWeights(lam)
        except ValueError as e:
            raise InputError(f"--lambdas: {e}") from None
    bad = [g for g in gates if g not in GATES]
    if bad:
        raise InputError(f"unknown gate {bad[0]!r}; choose from {', '.join(GATES)}")
    profile, phash = _load_profile(args.profile)
    trace, thash = _load_trace(args, profile)
    try:
        trace = materialize_detections(trace, profile)
    except ConfigurationError as e:
        raise InputError(str(e)) from None
    jobs = [(g, lam) for g in gates for lam in lambdas]

    def one(job):
        g, lam = job
        _, s = run_trace(trace, profile, g, JointWeights(lam), gamma=args.gamma, t_c=args.tc, seed=args.seed)
        return {"gate": g, "lambda_e": lam, "avg_loss": s["avg_loss"], "avg_energy_j": s["avg_energy_j"], "avg_latency_s": s["avg_latency_s"]}

    workers = args.workers if args.workers else min(len(jobs), os.cpu_count() or 1)
    try:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as ex:
                rows = list(ex.map(one, jobs))  # map keeps job order
        else:
            rows = [one(j) for j in jobs]
    except ConfigurationError as e:
        raise InputError(str(e)) from None
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "pareto.csv", PARETO_COLUMNS, rows)
    if args.format == "json":
        write_json(out / "pareto.json", rows)
    write_json(out / "manifest.json", _manifest("sweep", args, phash, thash))
    for r in rows:
        print(f"{r['gate']:9s} lambda_e={r['lambda_e']:<8g} loss {r['avg_loss']:.4f}  energy {r['avg_energy_j']:.4f} J")
    return EXIT_OK


def read_steps_csv(path) -> list:
    """Parse a steps.csv written by ``run``; raises InputError on malformed content."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise InputError(f"{path}: empty file")
        missing = [c for c in ("context", "loss", "energy_j", "latency_s") if c not in reader.fieldnames]
        if missing:
            raise InputError(f"{path}: missing column {missing[0]!r}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            try:
                rows.append((row["context"], float(row["loss"]), float(row["energy_j"]), float(row["latency_s"])))
            except (TypeError, ValueError):
                raise InputError(f"{path}:{lineno}: malformed row") from None
            if not row["context"]:
                raise InputError(f"{path}:{lineno}: empty context")
    if not rows:
        raise InputError(f"{path}: no step rows")
    return rows


def aggregate_by_context(rows: list) -> list:
    acc = {}
    for ctx, loss, energy, lat in rows:
        a = acc.setdefault(ctx, [0, 0.0, 0.0, 0.0])
        a[0] += 1
        a[1] += loss
        a[2] += energy
        a[3] += lat
    return [
        {"context": c, "n_steps": n, "avg_loss": sl / n, "avg_energy_j": se / n, "avg_latency_s": st / n}
        for c, (n, sl, se, st) in sorted(acc.items())
    ]


def cmd_report(args) -> int:
    path = Path(args.steps)
    if path.is_dir():
        path = path / "steps.csv"
    if not path.is_file():
        raise InputError(f"steps file not found: {path}")
    rows = aggregate_by_context(read_steps_csv(path))
    out = Path(args.out) if args.out is not None else path.parent
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "scenario.csv", SCENARIO_COLUMNS, rows)
    for r in rows:
        print(f"{r['context']:10s} n={r['n_steps']:<5d} loss {r['avg_loss']:.4f}  energy {r['avg_energy_j']:.4f} J")
    return EXIT_OK


def cmd_trace(args) -> int:
    if args.objects < 0:
        raise InputError("--objects must be >= 0")
    try:
        trace = generate_trace(parse_segments(args.generate), objects_per_frame=args.objects, seed=args.seed)
    except ValueError as e:
        raise InputError(str(e)) from None
    if args.profile is not None:
        profile, _ = _load_profile(args.profile)
        trace = materialize_detections(trace, profile)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_trace(trace, out)
    print(f"wrote {len(trace)} steps -> {out}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="default", help="profile JSON path or bundled name (default, radiate-table1)")
    p.add_argument("--trace", default=None, help="JSONL trace file")
    p.add_argument("--generate", default=None, metavar="SPEC", help='generate a trace, e.g. "fog:30,snow:60"')
    p.add_argument("--trace-seed", type=int, default=None, help="seed for --generate (default: --seed)")
    p.add_argument("--objects", type=float, default=3.0, help="mean objects per generated frame")
    p.add_argument("--gamma", type=float, default=None, help="candidate margin (default: profile value)")
    p.add_argument("--tc", type=int, default=30, help="steps between context identifications")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./out)")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="json also writes JSON copies of tables")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ctxfuse", description="Context- and energy-aware sensor fusion simulator")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate one trace with one gate and lambda_e")
    _add_common(p)
    p.add_argument("--gate", choices=GATES, default="estimator")
    p.add_argument("--lambda-e", type=float, default=0.0)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="Pareto sweep over lambda_e values and gates")
    _add_common(p)
    p.add_argument("--lambdas", default="0,0.0001,0.001,0.01,0.1,1")
    p.add_argument("--gates", default="estimator")
    p.add_argument("--workers", type=int, default=0, help="concurrent runs (0: one per job up to CPU count)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="per-context aggregation of a steps.csv")
    p.add_argument("steps", help="steps.csv or a run output directory")
    p.add_argument("--out", default=None, help="directory for scenario.csv (default: next to the input)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("trace", help="generate a JSONL trace")
    p.add_argument("--generate", default=DEFAULT_SCENARIO, metavar="SPEC")
    p.add_argument("--objects", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=DEFAULT_SCENARIO_SEED)
    p.add_argument("--profile", default=None, help="materialize branch detections with this profile")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_trace)
    return ap


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_INVALID
    try:
        return args.func(args)
    except (InputError, ValueError, ConfigurationError) as e:
        return _fail(str(e), EXIT_INVALID)
    except OSError as e:
        return _fail(str(e), EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
