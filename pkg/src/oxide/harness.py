"""Plugging candidates into typed contexts and comparing what the runs show."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .interp import Outcome, run
from .parser import Parser, SourceProgram, parse_expr, parse_type
from .syntax import Arm, Hole, OxideError, RefT, RegionName, walk
from .typeck import check_expr, check_program

DISTINGUISHED = "DISTINGUISHED"
INDISTINGUISHED = "INDISTINGUISHED-AT-FUEL"
ILL_TYPED = "ILL-TYPED"


@dataclass
class ContextFile:
    id: str
    level: int
    hole_type: object
    env: tuple  # ((var, pointee type, region name), ...)
    program: SourceProgram  # body contains exactly one Hole

    @classmethod
    def parse(cls, text: str, id: str = "<context>") -> "ContextFile":
        level, hole, env, body = None, None, [], []
        for line in text.splitlines():
            s = line.strip()
            if body or not s.startswith("#"):
                body.append(line)
            elif s.startswith("#level"):
                level = int(s.split()[1])
            elif s.startswith("#hole"):
                hole = s[len("#hole"):].strip()
            elif s.startswith("#env"):
                decl, _, region = s[len("#env"):].rpartition("@")
                var, _, ty = decl.partition(":")
                env.append((var.strip(), ty.strip(), region.strip().lstrip("'")))
            else:
                body.append(line)
        if level is None:
            raise OxideError("E-NO-LEVEL", f"context {id} lacks a '#level n' header")
        if hole is None:
            raise OxideError("E-PARSE", f"context {id} lacks a '#hole τ' header")
        program = Parser(f"#level {level}\n" + "\n".join(body), allow_hole=True).program()
        holes = [n for n in walk(program.body) if isinstance(n, Hole)]
        if len(holes) != 1:
            raise OxideError("E-PARSE", f"context {id} must contain exactly one hole, found {len(holes)}")
        hole_type = parse_type(hole, program.defs)
        env = tuple((v, parse_type(t, program.defs), r) for v, t, r in env)
        return cls(id, level, hole_type, env, program)

    @classmethod
    def load(cls, path) -> "ContextFile":
        path = Path(path)
        return cls.parse(path.read_text(), path.stem)


def fill(e, candidate):
    """Replace the hole in ``e`` by ``candidate``, rebuilding only the spine above it."""
    if isinstance(e, Hole):
        return candidate
    if isinstance(e, tuple):
        return tuple(fill(x, candidate) for x in e)
    if not dataclasses.is_dataclass(e) or isinstance(e, RegionName):
        return e
    changes = {}
    for f in dataclasses.fields(e):
        old = getattr(e, f.name)
        if isinstance(old, (tuple, Arm)) or dataclasses.is_dataclass(old):
            new = fill(old, candidate)
            if new is not old:
                changes[f.name] = new
    return dataclasses.replace(e, **changes) if changes else e


def plug(c: ContextFile, text: str) -> SourceProgram:
    """Fill the hole with ``text`` and check the result, the hole type, and the declared environment."""
    try:
        cand = parse_expr(text, c.program.defs)
    except OxideError as err:
        raise OxideError("E-PLUG-ILLTYPED", f"candidate does not parse: {err.code}: {err.message}") from err
    p = SourceProgram(c.program.defs, fill(c.program.body, cand), c.level)
    try:
        typed = check_program(p, watch=cand)
    except OxideError as err:
        raise OxideError("E-PLUG-ILLTYPED", f"plugged program rejected: {err.code}: {err.message}",
                         err.span) from err
    if typed.hole_env is None:
        raise OxideError("E-PLUG-ILLTYPED", "the hole is never reached by the checker")
    P, G = typed.hole_env
    for var, ty, region in c.env:
        got = G.get(var)
        if not (isinstance(got, RefT) and got.region.name == region and got.ty == ty):
            raise OxideError("E-PLUG-ILLTYPED",
                             f"hole environment: {var} has type {got}, declared {ty} @ '{region}")
    ty = check_expr(c.program.defs, P, G, cand, c.level).ty
    if ty != c.hole_type:
        raise OxideError("E-PLUG-ILLTYPED", f"candidate has type {ty}, hole expects {c.hole_type}")
    return p


@dataclass
class Verdict:
    context: str
    verdict: str
    outcomes: tuple = ()
    error: str = ""

    def to_json(self) -> dict:
        out = {"context": self.context, "verdict": self.verdict,
               "outcomes": [str(o) for o in self.outcomes]}
        if self.error:
            out["error"] = self.error
        return out


def observe(p: SourceProgram, fuel: int) -> Outcome:
    return run(p, fuel).outcome


def distinguish(c: ContextFile, e1: str, e2: str, fuel: int = 10000) -> Verdict:
    """DISTINGUISHED iff the two plugged runs end differently within ``fuel`` steps."""
    try:
        p1, p2 = plug(c, e1), plug(c, e2)
    except OxideError as err:
        return Verdict(c.id, ILL_TYPED, (), f"{err.code}: {err.message}")
    o1, o2 = observe(p1, fuel), observe(p2, fuel)
    return Verdict(c.id, DISTINGUISHED if o1 != o2 else INDISTINGUISHED, (o1, o2))


@dataclass
class WitnessTriple:
    id: str
    level: int
    e1: str
    e2: str
    low_contexts: list
    high_context: ContextFile
    expect_high: str = DISTINGUISHED
    note: str = ""

    @classmethod
    def load(cls, path) -> "WitnessTriple":
        path = Path(path)
        m = json.loads(path.read_text())
        base = path.parent
        return cls(m.get("id", path.stem), m["level"], m["e1"], m["e2"],
                   [ContextFile.load(base / f) for f in m["low_contexts"]],
                   ContextFile.load(base / m["high_context"]),
                   m.get("expect_high", DISTINGUISHED), m.get("note", ""))


@dataclass
class TripleReport:
    id: str
    ok: bool
    low: list
    high: Verdict
    offending: list
    problems: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"id": self.id, "verdict": "PASS" if self.ok else "FAIL",
                "low": [v.to_json() for v in self.low], "high": self.high.to_json(),
                "offending_contexts": self.offending, "problems": self.problems}


@dataclass
class SuiteReport:
    ok: bool
    triples: list
    warnings: list

    def to_json(self) -> dict:
        return {"verdict": "PASS" if self.ok else "FAIL", "warnings": self.warnings,
                "triples": [t.to_json() for t in self.triples]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False)

    def table(self) -> str:
        rows = [("triple", "context", "role", "verdict")]
        for t in self.triples:
            for v in t.low:
                rows.append((t.id, v.context, "low", v.verdict))
            rows.append((t.id, t.high.context, "high", t.high.verdict))
        widths = [max(len(r[i]) for r in rows) for i in range(4)]
        lines = ["  ".join(x.ljust(w) for x, w in zip(r, widths)).rstrip() for r in rows]
        lines += [f"warning: {w}" for w in self.warnings]
        lines.append(f"suite: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines)


def check_triple(t: WitnessTriple, fuel: int = 10000) -> TripleReport:
    problems = []
    for c in t.low_contexts:
        if c.level != t.level:
            problems.append(f"low context {c.id} is at level {c.level}, expected {t.level}")
    if t.high_context.level != t.level + 1 and t.expect_high == DISTINGUISHED:
        problems.append(f"high context {t.high_context.id} is at level {t.high_context.level}, "
                        f"expected {t.level + 1}")
    low = [distinguish(c, t.e1, t.e2, fuel) for c in sorted(t.low_contexts, key=lambda c: c.id)]
    high = distinguish(t.high_context, t.e1, t.e2, fuel)
    offending = [v.context for v in low if v.verdict != INDISTINGUISHED]
    if high.verdict != t.expect_high:
        offending.append(high.context)
    ok = not offending and not problems
    return TripleReport(t.id, ok, low, high, offending, problems)


def run_suite(triples, fuel: int = 10000) -> SuiteReport:
    triples = sorted(triples, key=lambda t: t.id)
    warnings = [] if triples else ["no witness triples given; the suite passes vacuously"]
    reports = [check_triple(t, fuel) for t in triples]
    return SuiteReport(all(r.ok for r in reports), reports, warnings)


def load_suite(paths) -> list:
    """Witness manifests from files or directories (``*.json`` inside directories)."""
    out = []
    for p in map(Path, paths):
        files = sorted(p.glob("*.json")) if p.is_dir() else [p]
        out.extend(WitnessTriple.load(f) for f in files)
    return out
