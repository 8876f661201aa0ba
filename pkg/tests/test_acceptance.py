"""The eight acceptance criteria, one test each; each prints a PASS/FAIL line."""

import json
import os
import subprocess
import sys
import time

from oxide.erasure import correspondence
from oxide.harness import (
    DISTINGUISHED, INDISTINGUISHED, ContextFile, distinguish, load_suite, run_suite,
)
from oxide.interp import DYNAMIC_ERRORS, Outcome, run
from oxide.parser import parse, pretty
from oxide.regions import conservation_check
from oxide.syntax import OxideError
from oxide.typeck import check_program, trace_json

from conftest import ACCEPTANCE_LINES, ACCEPTED, CORPUS, REJECTED, expectation, load

GOLDEN = CORPUS / "golden" / "l0_worked_example.trace.json"


def report(n: int, title: str, ok: bool, detail: str):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_1_golden_trace():
    t0 = time.perf_counter()
    r = check_program(load(CORPUS / "accepted" / "l0_worked_example.ox"))
    text = json.dumps(trace_json(r), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    elapsed = time.perf_counter() - t0
    ok = text == GOLDEN.read_text() and len(r.trace) == 4 and elapsed < 1.0
    report(1, "golden trace", ok, f"{len(r.trace)} snapshots, byte-exact={text == GOLDEN.read_text()}, "
                                  f"{elapsed * 1000:.1f} ms")


def test_2_conservation():
    t0 = time.perf_counter()
    levels = set()
    bad = []
    for path in ACCEPTED:
        p = load(path)
        levels.add(p.level)
        typed = check_program(p, debug=True)
        for _, P in typed.trace:
            bad += [f"{path.name}: {v}" for v in conservation_check(P)]
        bad += [f"{path.name}: {v}" for v in run(p, strict=True, typed=typed).violations]
    elapsed = time.perf_counter() - t0
    ok = len(ACCEPTED) >= 50 and levels == {0, 1, 2, 3} and not bad and elapsed < 30
    report(2, "conservation", ok, f"{len(ACCEPTED)} programs over levels {sorted(levels)}, "
                                  f"{len(bad)} violations, {elapsed:.2f} s")


def test_3_progress():
    bad = []
    for path in ACCEPTED:
        p = load(path)
        o = run(p).outcome
        fine = o.kind in ("value", "fuel") or (o.kind == "error" and o.detail in DYNAMIC_ERRORS and p.level >= 1)
        if not fine:
            bad.append(f"{path.name}: {o}")
    report(3, "progress", not bad, f"{len(ACCEPTED)} programs, none stuck" if not bad else "; ".join(bad))


def test_4_error_corpus():
    required = {"E-INSUFFICIENT-CAP", "E-CAP-NOT-WHOLE", "E-UNDROPPED-REGIONS", "E-LEVEL-VIOLATION",
                "E-ARM-MISMATCH"}
    wrong, seen = [], set()
    for path in REJECTED:
        want = expectation(path)
        try:
            check_program(load(path))
            got = "ACCEPTED"
        except OxideError as err:
            got = err.code
        seen.add(got)
        if got != want:
            wrong.append(f"{path.name}: want {want}, got {got}")
    names = {p.name for p in REJECTED}
    scenarios = {"insufficient_cap_shared_after_mut.ox", "cap_not_whole_drop_with_alias.ox",
                 "cap_not_whole_assign_under_alias.ox", "undropped_regions.ox", "level_vec_at_l0.ox",
                 "level_rc_at_l1.ox", "level_refcell_at_l2.ox", "arm_mismatch_if_types.ox"}
    ok = len(REJECTED) >= 12 and not wrong and required <= seen and scenarios <= names
    report(4, "error corpus", ok, f"{len(REJECTED)} programs, {len(wrong)} wrong codes"
           + ("" if not wrong else ": " + "; ".join(wrong)))


def test_5_erasure_correspondence():
    failing = []
    for path in ACCEPTED:
        rep = correspondence(load(path), name=path.name)
        if rep.instrumented != rep.erased:
            failing.append(path.name)
    agree = len(ACCEPTED) - len(failing)
    report(5, "erasure correspondence", not failing, f"{agree}/{len(ACCEPTED)} outcomes agree")


def test_6_level_dynamics():
    rc = run(load(CORPUS / "accepted" / "l2_rc_scenario.ox"), strict=True)
    # the scenario's first probe must see None and the second Some
    probes = []
    for _, c in rc.boundaries:
        for name in ("r", "s"):
            rec = c.rho.get(name)
            if rec is not None and name not in [n for n, _ in probes]:
                probes.append((name, rec.val.value))
    rc_ok = rc.outcome == Outcome("value", "true") and probes == [("r", 0), ("s", 1)] and not rc.violations
    cell = run(load(CORPUS / "accepted" / "l3_refcell_violation.ox"), strict=True)
    cell_ok = cell.outcome == Outcome("error", "D-REFCELL-VIOLATION") and not cell.violations
    report(6, "level dynamics", rc_ok and cell_ok,
           f"rc_get_mut None then Some: {rc_ok}; second borrow_mut -> {cell.outcome}")


def test_7_expressivity_harness():
    suite = run_suite(load_suite([CORPUS / "witnesses"]))
    witnesses = {"l1_to_l2_rc_alias", "l2_to_l3_refcell_alias"}
    present = witnesses <= {t.id for t in suite.triples}
    ctx = CORPUS / "contexts"
    one = "{ let a = alloc 'a 1; let c = copy 'c a; drop 'a; if eq(c, 1) { drop 'c; 1 } else { drop 'c; 0 } }"
    two = one.replace("1", "2")
    controls = [
        distinguish(ContextFile.load(ctx / "l0_observe_value.oxctx"), one, two).verdict == DISTINGUISHED,
        distinguish(ContextFile.load(ctx / "l0_observe_value.oxctx"), one, one).verdict == INDISTINGUISHED,
        distinguish(ContextFile.load(ctx / "l2_rc_alias.oxctx"), "borrow 'h imm x",
                    "borrow 'h imm x").verdict == INDISTINGUISHED,
    ]
    ok = suite.ok and present and all(controls)
    report(7, "expressivity harness", ok,
           f"suite {'PASS' if suite.ok else 'FAIL'} over {len(suite.triples)} triples, controls {sum(controls)}/3")


def _cli(*args):
    env = dict(os.environ)
    env.pop("OXIDE_LEVEL_MAX", None)
    p = subprocess.run([sys.executable, "-m", "oxide.cli", *map(str, args)], capture_output=True, env=env)
    return p.returncode, p.stdout


def test_8_round_trip_and_determinism():
    not_identity = []
    for path in ACCEPTED + [p for p in REJECTED if expectation(p) != "E-UNKNOWN-PRIM"]:
        p = load(path)
        if parse(pretty(p)) != p:
            not_identity.append(path.name)
    files = [str(p) for p in ACCEPTED]
    commands = [["check", *files], ["run", "--strict", *files], ["trace", *files], ["erase-run", *files],
                ["diff", "--json", *files], ["equiv", "--json", CORPUS / "witnesses"]]
    unstable = [c[0] for c in commands if _cli(*c) != _cli(*c)]
    ok = not not_identity and not unstable
    report(8, "round-trip and determinism", ok,
           f"{len(not_identity)} round-trip failures, {len(unstable)} nondeterministic commands of {len(commands)}")
