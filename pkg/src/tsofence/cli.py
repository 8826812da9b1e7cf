"""Command-line driver: verify, trace, bench."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import corpus_dir
from .explore import (
    BudgetExceeded,
    DEFAULT_BUDGET,
    ReplayError,
    UnsafeSC,
    UnsafeTSO,
    fixed_point_search,
)
from .fences import synthesize
from .model import ValidationError
from .parser import ParseError, parse_program, parse_spec_clause
from .report import (
    EXIT_CODES,
    RunReport,
    read_events_file,
    render_text,
    verdict_fields,
    write_bench_files,
    write_run_files,
)
from .semantics import Machine

EXIT_INPUT_ERROR = 4


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="tsofence",
        description="Safety verification and fence synthesis for store-buffer "
                    "(TSO) semantics over finite-data concurrent programs.",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    v = sub.add_parser("verify", help="verify a program, optionally inserting fences")
    v.add_argument("path")
    v.add_argument("--k-max", type=int, default=16, help="largest buffer bound to try")
    v.add_argument("--fence", action="store_true",
                   help="on a buffered-only counterexample, synthesize fences and re-verify")
    v.add_argument("--spec", help="override the program's specification clause")
    v.add_argument("--budget-states", type=int, default=DEFAULT_BUDGET)
    v.add_argument("--format", choices=("text", "structured"), default="text")
    v.add_argument("--report-dir", help="also write json/tsv/figures here")

    t = sub.add_parser("trace", help="replay an event file against a program")
    t.add_argument("path")
    t.add_argument("--k", type=int, required=True)
    t.add_argument("--events-file", required=True)

    b = sub.add_parser("bench", help="run a corpus directory and tabulate results")
    b.add_argument("corpus", nargs="?", default=None,
                   help="directory of .tso programs (default: the shipped corpus)")
    b.add_argument("--k-max", type=int, default=16)
    b.add_argument("--budget-states", type=int, default=DEFAULT_BUDGET)
    b.add_argument("--format", choices=("text", "structured"), default="text")
    b.add_argument("--report-dir")
    b.add_argument("--no-fence", action="store_true",
                   help="verify only; do not synthesize fences")

    args = ap.parse_args(argv)
    if args.cmd == "verify":
        return cmd_verify(args)
    if args.cmd == "trace":
        return cmd_trace(args)
    return cmd_bench(args)


def _load_program(path: str, spec_override: str | None = None):
    text = Path(path).read_text()
    program = parse_program(text)
    if spec_override:
        program.spec = parse_spec_clause(spec_override, program)
    if program.spec is None:
        raise ValidationError(["program has no specification clause (use --spec)"])
    return program


def cmd_verify(args) -> int:
    name = Path(args.path).stem
    if args.k_max < 1:
        print("error: --k-max must be at least 1", file=sys.stderr)
        return EXIT_INPUT_ERROR
    try:
        program = _load_program(args.path, args.spec)
    except (OSError, ParseError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    try:
        report = _run_one(name, program, k_max=args.k_max, fence=args.fence,
                          budget=args.budget_states)
    except BudgetExceeded as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CODES["resource-exhausted"]

    if args.format == "structured":
        print(report.to_json())
    else:
        print(render_text(report))
    if args.report_dir:
        write_run_files(report, args.report_dir)
    return EXIT_CODES[report.verdict]


def _run_one(name: str, program, k_max: int, fence: bool, budget: int) -> RunReport:
    if fence:
        result = synthesize(program, k_max=k_max, budget=budget)
        verdict, per_k = result.verdict, result.stats
        vname, k, k0 = verdict_fields(verdict)
        cex = verdict.trace.events if isinstance(verdict, (UnsafeSC, UnsafeTSO)) else []
        note = None
        if result.unfixable:
            note = result.note
        elif result.rounds:
            lines = []
            for rnd in result.rounds:
                lines.append(f"round at k={rnd.k}: {len(rnd.cycles)} critical cycle(s), "
                             f"fences at {', '.join(f'{t} after {l}' for t, l in rnd.positions)}")
                lines.extend("  cycle: " + " -> ".join(c) for c in rnd.cycles)
            note = "\n".join(lines)
        return RunReport(name, vname, k, k0, list(result.fences), list(cex),
                         per_k, note=note)
    verdict, per_k = fixed_point_search(Machine(program), k_max=k_max, budget=budget)
    vname, k, k0 = verdict_fields(verdict)
    cex = verdict.trace.events if isinstance(verdict, (UnsafeSC, UnsafeTSO)) else []
    return RunReport(name, vname, k, k0, [], list(cex), per_k)


def cmd_trace(args) -> int:
    # replay needs no specification, so the plain parse is enough
    try:
        program = parse_program(Path(args.path).read_text())
        events = read_events_file(args.events_file)
    except (OSError, ParseError, ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    machine = Machine(program)
    from .explore import replay
    try:
        final = replay(machine, args.k, events)
    except ReplayError as e:
        print(f"replay failed: event {e.index} not enabled: {e.event.render()}",
              file=sys.stderr)
        return 1
    print(machine.render_state(final))
    return 0


def cmd_bench(args) -> int:
    if args.k_max < 1:
        print("error: --k-max must be at least 1", file=sys.stderr)
        return EXIT_INPUT_ERROR
    cdir = Path(args.corpus) if args.corpus else corpus_dir()
    if not cdir.is_dir():
        print(f"error: {cdir} is not a directory", file=sys.stderr)
        return EXIT_INPUT_ERROR

    rows = []
    reports = []
    for path in sorted(cdir.glob("*.tso")):
        name = path.stem
        t0 = time.perf_counter()
        try:
            program = _load_program(str(path))
            report = _run_one(name, program, k_max=args.k_max,
                              fence=not args.no_fence, budget=args.budget_states)
        except (ParseError, ValidationError, BudgetExceeded, OSError) as e:
            print(f"{name}: ERROR: {e}", file=sys.stderr)
            rows.append({"program": name, "verdict": "error", "k": "", "k0": "",
                         "fences": "", "states": "", "millis": ""})
            continue
        millis = (time.perf_counter() - t0) * 1000.0
        reports.append(report)
        rows.append({
            "program": name,
            "verdict": report.verdict,
            "k": report.k if report.k is not None else "",
            "k0": report.k0 if report.k0 is not None else "",
            "fences": len(report.fences),
            "states": sum(r.visited for r in report.per_k),
            "millis": round(millis, 1),
        })

    if args.format == "structured":
        import json
        print(json.dumps([r.to_dict() for r in reports], indent=2))
    else:
        cols = ["program", "verdict", "k", "k0", "fences", "states", "millis"]
        widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows)) if rows else len(c)
                  for c in cols}
        print("  ".join(c.ljust(widths[c]) for c in cols))
        for r in rows:
            print("  ".join(str(r.get(c, "")).ljust(widths[c]) for c in cols))

    if args.report_dir:
        write_bench_files(rows, args.report_dir)
        for rep in reports:
            write_run_files(rep, args.report_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
