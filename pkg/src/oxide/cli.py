"""Command-line front end: check, run, trace, erase-run, diff, equiv."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .erasure import correspondence, run_erased
from .harness import load_suite, run_suite
from .interp import run
from .parser import SourceProgram, parse
from .syntax import OxideError
from .typeck import check_program, explain_trace, trace_json

EXIT_OK, EXIT_IO, EXIT_TYPE, EXIT_DYNAMIC, EXIT_FUEL = 0, 1, 2, 3, 4
PARSE_CODES = {"E-PARSE", "E-NO-LEVEL", "E-UNKNOWN-PRIM"}


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False)


def load_program(path: str, level: int | None) -> SourceProgram:
    p = parse(Path(path).read_text())
    cap = os.environ.get("OXIDE_LEVEL_MAX")
    if level is not None and level < p.level:
        p = SourceProgram(p.defs, p.body, level)
    if cap is not None and p.level > int(cap):
        raise OxideError("E-LEVEL-VIOLATION", f"level {p.level} exceeds OXIDE_LEVEL_MAX={cap}")
    return p


def _outcome_exit(kind: str) -> int:
    return {"value": EXIT_OK, "error": EXIT_DYNAMIC, "fuel": EXIT_FUEL}.get(kind, EXIT_DYNAMIC)


def cmd_check(args, out) -> int:
    code = EXIT_OK
    for path in args.files:
        args.current = path
        p = load_program(path, args.level)
        r = check_program(p)
        if args.json:
            out.append(_dump({"file": path, "type": str(r.ty), "trace": trace_json(r)}) if len(args.files) > 1
                       else _dump(trace_json(r)))
        else:
            if len(args.files) > 1:
                out.append(f"== {path}")
            out.append(explain_trace(r))
    return code


def cmd_run(args, out) -> int:
    worst = EXIT_OK
    for path in args.files:
        args.current = path
        p = load_program(path, args.level)
        typed = check_program(p)
        res = run(p, args.fuel, strict=args.strict, typed=typed, trace=args.command == "trace")
        if args.command == "trace":
            out.extend(res.trace)
        if args.json:
            out.append(_dump({"file": path, "outcome": res.outcome.to_json(), "steps": res.steps,
                              "violations": res.violations}))
        else:
            out.append(f"{path}: {res.outcome}" if len(args.files) > 1 else str(res.outcome))
            out.extend(f"violation: {v}" for v in res.violations)
        code = _outcome_exit(res.outcome.kind)
        if res.violations and code == EXIT_OK:
            code = EXIT_DYNAMIC
        worst = max(worst, code)
    return worst


def cmd_erase_run(args, out) -> int:
    worst = EXIT_OK
    for path in args.files:
        args.current = path
        p = load_program(path, args.level)
        check_program(p)
        res = run_erased(p, args.fuel)
        if args.json:
            out.append(_dump({"file": path, "outcome": res.outcome.to_json(), "steps": res.steps}))
        else:
            out.append(f"{path}: {res.outcome}" if len(args.files) > 1 else str(res.outcome))
        worst = max(worst, _outcome_exit(res.outcome.kind))
    return worst


def cmd_diff(args, out) -> int:
    reports = []
    for path in args.files:
        args.current = path
        p = load_program(path, args.level)
        reports.append(correspondence(p, args.fuel, name=path))
    ok = all(r.ok and not r.store_violations for r in reports)
    if args.json:
        out.append(_dump({"verdict": "PASS" if ok else "FAIL", "programs": [r.to_json() for r in reports]}))
    else:
        for r in reports:
            flag = "PASS" if r.ok and not r.store_violations else "FAIL"
            out.append(f"{flag}  {r.program}: instrumented {r.instrumented} | erased {r.erased}")
            out.extend(f"  {m}" for m in r.state_mismatches + r.store_violations)
        out.append(f"diff: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_DYNAMIC


def cmd_equiv(args, out) -> int:
    report = run_suite(load_suite(args.files), args.fuel)
    out.append(report.dumps() if args.json else report.table())
    return EXIT_OK if report.ok else EXIT_DYNAMIC


COMMANDS = {"check": cmd_check, "run": cmd_run, "trace": cmd_run, "erase-run": cmd_erase_run,
            "diff": cmd_diff, "equiv": cmd_equiv}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oxide", description="Rust-like core languages L0-L3.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("files", nargs="+")
    ap.add_argument("--level", type=int, choices=range(4), help="lower the declared level of each file")
    ap.add_argument("--fuel", type=int, default=10000)
    ap.add_argument("--json", action="store_true")
    ap.add_argument("--strict", action="store_true", help="check the store after every step")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.fuel < 0:
        print("error: --fuel must be non-negative", file=sys.stderr)
        return EXIT_IO
    out: list[str] = []
    try:
        code = COMMANDS[args.command](args, out)
    except OSError as err:
        code = EXIT_IO
        out.append(f"error: {err}")
    except OxideError as err:
        code = EXIT_IO if err.code in PARSE_CODES else EXIT_TYPE
        out.append(_dump(err.to_json()) if args.json else err.render(getattr(args, "current", args.files[0])))
    print("\n".join(out))
    return code


if __name__ == "__main__":
    sys.exit(main())
