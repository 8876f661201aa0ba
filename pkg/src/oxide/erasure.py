"""A flat machine with no capabilities, and its correspondence with the instrumented one.

The erased store is a list of locations holding nested values. References are
pointers ``(location, path)``; region names survive only as bindings that say
what dropping them does.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .interp import (
    PLACE_PRIMS, U32_MOD, ArrayV, Config, Const, DynamicError, EnumV, Mark, Outcome, RcCell,
    RcV, RefCellV, RefV, Scope, Stuck, StructV, TupleV, UNIT_V, ValE, VecV, initial_config,
    run, value_children, with_children,
)
from .parser import SourceProgram
from .syntax import (
    Alloc, ArrayE, ArrayIndex, Assign, Borrow, Copy, Deref, Drop, EnumE, Field, If, Let,
    Lit, Match, MutArg, PlaceE, Prim, RegionArg, Seq, StructE, TupleE, TupleIndex, path_str,
)
from .typeck import TypedResult, check_program


@dataclass(frozen=True)
class PRef:
    loc: int
    path: tuple = ()


@dataclass(frozen=True)
class PRc:
    loc: int


@dataclass
class ErasedConfig:
    env: dict  # var -> PRef
    names: dict  # region name -> ("loc", loc) | ("alias",) | ("guard", PRef)
    store: dict  # loc -> value tree
    expr: object
    next_loc: int = 0
    boundary: Optional[int] = None


# -- flat store access -------------------------------------------------------

def _child(v, comp):
    match comp, v:
        case TupleIndex(i), TupleV(items) | EnumV(_, _, items) if i < len(items):
            return items[i]
        case Field(f), StructV(_, fields):
            return dict(fields)[f]
        case ArrayIndex(i), ArrayV(items) | VecV(items) if i < len(items):
            return items[i]
        case Deref(), RcCell(_, content) | RefCellV(_, content):
            return content
    raise Stuck(f"path {comp} does not apply to {v}")


def _put(v, path, new):
    if not path:
        return new
    comp, rest = path[0], path[1:]
    kids = list(value_children(v))
    match comp, v:
        case TupleIndex(i), TupleV() | EnumV():
            k = i
        case Field(f), StructV(_, fields):
            k = [name for name, _ in fields].index(f)
        case ArrayIndex(i), ArrayV() | VecV():
            k = i
        case Deref(), RcCell() | RefCellV():
            k = 0
        case _:
            raise Stuck(f"path {comp} does not apply to {v}")
    kids[k] = _put(kids[k], rest, new)
    return with_children(v, kids)


def load(store: dict, ref: PRef):
    if ref.loc not in store:
        raise Stuck(f"location {ref.loc} is free")
    v = store[ref.loc]
    for comp in ref.path:
        v = _child(v, comp)
    return v


def _rc_handles(v):
    stack = [v]
    while stack:
        x = stack.pop()
        if isinstance(x, PRc):
            yield x.loc
        stack.extend(value_children(x))


class ErasedMachine:
    def __init__(self, c: ErasedConfig, defs):
        self.env = dict(c.env)
        self.names = dict(c.names)
        self.store = dict(c.store)
        self.next_loc = c.next_loc
        self.boundary = None
        self.defs = defs

    def config(self, expr) -> ErasedConfig:
        return ErasedConfig(self.env, self.names, self.store, expr, self.next_loc, self.boundary)

    def new_loc(self, v) -> int:
        loc = self.next_loc
        self.next_loc += 1
        self.store[loc] = v
        return loc

    def store_at(self, ref: PRef, v):
        self.store[ref.loc] = _put(self.store[ref.loc], ref.path, v)

    def release(self, v):
        for cell in _rc_handles(v):
            c = self.store[cell]
            if c.count == 1:
                del self.store[cell]
                self.release(c.content)
            else:
                self.store[cell] = RcCell(c.count - 1, c.content)

    def resolve(self, place) -> PRef:
        if place.root not in self.env:
            raise Stuck(f"variable {place.root} is unbound")
        ref = self.env[place.root]
        for comp in place.path:
            if isinstance(comp, Deref):
                v = load(self.store, ref)
                if isinstance(v, PRef):
                    ref = v
                    continue
                if isinstance(v, PRc):
                    ref = PRef(v.loc, (Deref(),))
                    continue
                raise Stuck(f"deref of {v}")
            ref = PRef(ref.loc, ref.path + (comp,))
        load(self.store, ref)
        return ref

    def bind_name(self, name: str, binding):
        if name in self.names:
            raise Stuck(f"region {name} already bound")
        self.names[name] = binding

    def drop(self, name: str):
        binding = self.names.pop(name, None)
        if binding is None:
            raise Stuck(f"region {name} is not bound")
        if binding[0] == "loc":
            v = self.store.pop(binding[1])
            self.release(v)
        elif binding[0] == "guard":
            ref = binding[1]
            cell = load(self.store, ref)
            self.store_at(ref, RefCellV(cell.state - 1 if cell.state > 0 else 0, cell.content))

    def reduce(self, e):
        match e:
            case Mark(i, inner):
                if isinstance(inner, ValE):
                    self.boundary = i
                    return inner
                return Mark(i, self.reduce(inner), e.span)
            case Scope(binds, body):
                if isinstance(body, ValE):
                    for var, prev in reversed(binds):
                        if prev is None:
                            self.env.pop(var, None)
                        else:
                            self.env[var] = prev
                    return body
                return Scope(binds, self.reduce(body), e.span)
            case Let(var, bound, body):
                if not isinstance(bound, ValE):
                    return Let(var, self.reduce(bound), body, e.span)
                prev = self.env.get(var)
                self.env[var] = bound.value
                return Scope(((var, prev),), body, e.span)
            case Seq(first, second):
                if not isinstance(first, ValE):
                    return Seq(self.reduce(first), second, e.span)
                return second
            case Alloc(r, inner):
                if not isinstance(inner, ValE):
                    return Alloc(r, self.reduce(inner), e.span)
                loc = self.new_loc(inner.value)
                self.bind_name(r.name, ("loc", loc))
                return ValE(PRef(loc), e.span)
            case Copy(r, place):
                loc = self.new_loc(load(self.store, self.resolve(place)))
                self.bind_name(r.name, ("loc", loc))
                return ValE(PRef(loc), e.span)
            case Borrow(r, _, place):
                ref = self.resolve(place)
                self.bind_name(r.name, ("alias",))
                return ValE(ref, e.span)
            case Drop(r):
                self.drop(r.name)
                return ValE(UNIT_V, e.span)
            case Assign(place, inner):
                if not isinstance(inner, ValE):
                    return Assign(place, self.reduce(inner), e.span)
                ref = self.resolve(place)
                old = load(self.store, ref)
                self.store_at(ref, inner.value)
                self.release(old)
                return ValE(UNIT_V, e.span)
            case If(cond, then, orelse):
                if not isinstance(cond, ValE):
                    return If(self.operand(cond), then, orelse, e.span)
                return then if cond.value.value else orelse
            case Match(place, arms):
                ref = self.resolve(place)
                v = load(self.store, ref)
                arm = next(a for a in arms if a.variant == v.tag)
                binds = []
                for i, (r, var) in enumerate(arm.bindings):
                    self.bind_name(r.name, ("alias",))
                    binds.append((var, self.env.get(var)))
                    self.env[var] = PRef(ref.loc, ref.path + (TupleIndex(i),))
                return Scope(tuple(binds), arm.body, e.span) if binds else arm.body
            case Lit(v):
                return ValE(Const(v), e.span)
            case TupleE(items) | ArrayE(items):
                for i, x in enumerate(items):
                    if not isinstance(x, ValE):
                        return type(e)(items[:i] + (self.reduce(x),) + items[i + 1:], e.span)
                ctor = TupleV if isinstance(e, TupleE) else ArrayV
                return ValE(ctor(tuple(x.value for x in items)), e.span)
            case StructE(name, targs, fields):
                for i, (f, x) in enumerate(fields):
                    if not isinstance(x, ValE):
                        fields = fields[:i] + ((f, self.reduce(x)),) + fields[i + 1:]
                        return StructE(name, targs, fields, e.span)
                given = {f: x.value for f, x in fields}
                order = [f for f, _ in self.defs.struct(name).fields]
                return ValE(StructV(name, tuple((f, given[f]) for f in order)), e.span)
            case EnumE(name, targs, variant, args):
                for i, x in enumerate(args):
                    if not isinstance(x, ValE):
                        return EnumE(name, targs, variant, args[:i] + (self.reduce(x),) + args[i + 1:], e.span)
                return ValE(EnumV(name, variant, tuple(x.value for x in args)), e.span)
            case PlaceE():
                return self.operand(e)
            case Prim(op, targs, args):
                skip = 1 if op in PLACE_PRIMS else 0
                for i, a in enumerate(args):
                    if isinstance(a, (RegionArg, MutArg)):
                        continue
                    if skip:
                        skip -= 1
                        continue
                    if not isinstance(a, ValE):
                        return Prim(op, targs, args[:i] + (self.operand(a),) + args[i + 1:], e.span)
                return ValE(self.prim(op, args), e.span)
        raise Stuck(f"no rule for {type(e).__name__}")

    def operand(self, a):
        if isinstance(a, PlaceE):
            return ValE(load(self.store, self.resolve(a.place)), a.span)
        return self.reduce(a)

    def prim(self, op, args):
        regions = [a.region.name for a in args if isinstance(a, RegionArg)]
        rest = [a for a in args if not isinstance(a, (RegionArg, MutArg))]
        ref = self.resolve(rest[0].place) if op in PLACE_PRIMS else None
        vals = [a.value for a in (rest[1:] if ref is not None else rest)]
        match op:
            case "add":
                return Const((vals[0].value + vals[1].value) % U32_MOD)
            case "mul":
                return Const((vals[0].value * vals[1].value) % U32_MOD)
            case "sub":
                if vals[1].value > vals[0].value:
                    raise DynamicError("D-SUB-UNDERFLOW")
                return Const(vals[0].value - vals[1].value)
            case "eq":
                return Const(vals[0].value == vals[1].value)
            case "lt":
                return Const(vals[0].value < vals[1].value)
            case "vec_new":
                return VecV(())
            case "rc_new":
                return PRc(self.new_loc(RcCell(1, vals[0])))
            case "refcell_new":
                return RefCellV(0, vals[0])
        v = load(self.store, ref)
        match op:
            case "vec_push":
                self.store_at(ref, VecV(v.items + (vals[0],)))
                return UNIT_V
            case "vec_pop":
                if not v.items:
                    raise DynamicError("D-POP-EMPTY")
                self.store_at(ref, VecV(v.items[:-1]))
                return v.items[-1]
            case "vec_len":
                return Const(len(v.items))
            case "vec_idx_borrow":
                i = vals[0].value
                if i >= len(v.items):
                    raise DynamicError("D-INDEX-OOB")
                self.bind_name(regions[0], ("alias",))
                return PRef(ref.loc, ref.path + (ArrayIndex(i),))
            case "rc_clone":
                cell = self.store[v.loc]
                self.store[v.loc] = RcCell(cell.count + 1, cell.content)
                return PRc(v.loc)
            case "rc_get_mut":
                self.bind_name(regions[0], ("alias",))
                if self.store[v.loc].count == 1:
                    return EnumV("Option", "Some", (PRef(v.loc, (Deref(),)),))
                return EnumV("Option", "None", ())
            case "refcell_borrow":
                if v.state < 0:
                    raise DynamicError("D-REFCELL-VIOLATION")
                self.store_at(ref, RefCellV(v.state + 1, v.content))
                self.bind_name(regions[0], ("guard", ref))
                return PRef(ref.loc, ref.path + (Deref(),))
            case "refcell_borrow_mut":
                if v.state != 0:
                    raise DynamicError("D-REFCELL-VIOLATION")
                self.store_at(ref, RefCellV(-1, v.content))
                self.bind_name(regions[0], ("guard", ref))
                return PRef(ref.loc, ref.path + (Deref(),))
        raise Stuck(f"unknown primitive {op}")


def render_erased(v, store: dict) -> str:
    match v:
        case Const(None):
            return "()"
        case Const(True):
            return "true"
        case Const(False):
            return "false"
        case Const(n):
            return str(n)
    r = lambda x: render_erased(x, store)  # noqa: E731
    match v:
        case TupleV(items):
            inner = ", ".join(r(i) for i in items)
            return f"({inner},)" if len(items) == 1 else f"({inner})"
        case ArrayV(items):
            return "[" + ", ".join(r(i) for i in items) + "]"
        case VecV(items):
            return "vec[" + ", ".join(r(i) for i in items) + "]"
        case StructV(name, fields):
            return f"{name} {{ " + ", ".join(f"{f}: {r(x)}" for f, x in fields) + " }"
        case EnumV(name, tag, items):
            return f"{name}::{tag}(" + ", ".join(r(i) for i in items) + ")"
        case PRef():
            return "&" + r(load(store, v))
        case PRc(loc):
            return "Rc(" + r(store[loc].content) + ")"
        case RefCellV(_, content):
            return "RefCell(" + r(content) + ")"
    raise TypeError(v)


def erased_initial(p: SourceProgram) -> ErasedConfig:
    return ErasedConfig({}, {}, {}, initial_config(p).expr)


def erased_step(c: ErasedConfig, defs):
    if isinstance(c.expr, ValE):
        return Outcome("value", render_erased(c.expr.value, c.store))
    m = ErasedMachine(c, defs)
    try:
        new = m.reduce(c.expr)
    except DynamicError as err:
        return Outcome("error", err.code)
    except (Stuck, KeyError, AttributeError, StopIteration) as err:
        return Outcome("stuck", f"erased machine: {err}")
    return m.config(new)


@dataclass
class ErasedRun:
    outcome: Outcome
    steps: int
    boundaries: list = field(default_factory=list)
    final: Optional[ErasedConfig] = None


def run_erased(p: SourceProgram, fuel: int = 10000) -> ErasedRun:
    c = erased_initial(p)
    out = ErasedRun(Outcome("fuel"), 0)
    while True:
        if isinstance(c.expr, ValE):
            out.outcome = erased_step(c, p.defs)
            break
        if out.steps >= fuel:
            break
        nxt = erased_step(c, p.defs)
        if isinstance(nxt, Outcome):
            out.outcome = nxt
            break
        c = nxt
        out.steps += 1
        if c.boundary is not None:
            out.boundaries.append((c.boundary, c))
    out.final = c
    return out


# -- erasing an instrumented configuration -----------------------------------

def _components(v):
    match v:
        case TupleV(items) | EnumV(_, _, items):
            return [(TupleIndex(i), x) for i, x in enumerate(items)]
        case ArrayV(items) | VecV(items):
            return [(ArrayIndex(i), x) for i, x in enumerate(items)]
        case StructV(_, fields):
            return [(Field(f), x) for f, x in fields]
        case RcCell(_, content) | RefCellV(_, content):
            return [(Deref(), content)]
    return []


def erase(c: Config) -> dict:
    """Flatten an instrumented store: physical roots become locations, in allocation order."""
    rho = c.rho
    roots = sorted((n for n, r in rho.items() if r.parent is None and not r.is_ghost),
                   key=lambda n: rho[n].seq)
    where = {}

    def index(name, loc, path):
        where[name] = (loc, path)
        for comp, kid in _components(rho[name].val):
            index(kid, loc, path + (comp,))

    for loc, name in enumerate(roots):
        index(name, loc, ())

    def target(name):
        while rho[name].is_ghost:
            name = rho[name].val.target
        return name

    def tree(name):
        v = rho[name].val
        match v:
            case RefV(t):
                loc, path = where[target(t)]
                return PRef(loc, path)
            case RcV(cell):
                return PRc(where[cell][0])
        return with_children(v, [tree(k) for k in value_children(v)])

    return {loc: tree(name) for loc, name in enumerate(roots)}


def canonical(store: dict) -> dict:
    """Renumber locations densely in allocation order."""
    order = {loc: i for i, loc in enumerate(sorted(store))}

    def fix(v):
        match v:
            case PRef(loc, path):
                return PRef(order.get(loc, -1), path)
            case PRc(loc):
                return PRc(order.get(loc, -1))
        return with_children(v, [fix(k) for k in value_children(v)])

    return {order[loc]: fix(v) for loc, v in store.items()}


def render_store(store: dict) -> dict:
    def enc(v):
        match v:
            case PRef(loc, path):
                return f"&l{loc}{path_str(path)}"
            case PRc(loc):
                return f"rc l{loc}"
            case Const(x):
                return x
            case RcCell(count, content):
                return {"rc_cell": count, "content": enc(content)}
            case RefCellV(state, content):
                return {"refcell": state, "content": enc(content)}
        return {type(v).__name__: [enc(k) for k in value_children(v)]}

    return {f"l{loc}": enc(v) for loc, v in sorted(store.items())}


@dataclass
class CorrespondenceReport:
    program: str
    instrumented: Outcome
    erased: Outcome
    instrumented_steps: int
    erased_steps: int
    state_mismatches: list
    store_violations: list

    @property
    def ok(self) -> bool:
        return self.instrumented == self.erased and not self.state_mismatches

    def to_json(self) -> dict:
        return {
            "program": self.program,
            "instrumented_outcome": self.instrumented.to_json(),
            "erased_outcome": self.erased.to_json(),
            "instrumented_steps": self.instrumented_steps,
            "erased_steps": self.erased_steps,
            "outcomes_match": self.instrumented == self.erased,
            "state_mismatches": self.state_mismatches,
            "store_violations": self.store_violations,
            "verdict": "PASS" if self.ok else "FAIL",
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def correspondence(p: SourceProgram, fuel: int = 10000, name: str = "<program>",
                   typed: Optional[TypedResult] = None, check_states: bool = True,
                   skip_halving: bool = False) -> CorrespondenceReport:
    """Run both machines and compare outcomes (and erased stores at statement boundaries)."""
    if typed is None:
        typed = check_program(p)
    inst = run(p, fuel, strict=True, typed=typed, skip_halving=skip_halving)
    flat = run_erased(p, fuel)
    mismatches = []
    if check_states:
        theirs = dict((i, c) for i, c in flat.boundaries)
        for i, c in inst.boundaries:
            mine = canonical(erase(c))
            other = theirs.get(i)
            if other is None:
                mismatches.append(f"boundary {i}: reached only by the instrumented machine")
            elif mine != canonical(other.store):
                mismatches.append(f"boundary {i}: erased stores differ: "
                                  f"{render_store(mine)} vs {render_store(canonical(other.store))}")
    return CorrespondenceReport(name, inst.outcome, flat.outcome, inst.steps, flat.steps,
                                mismatches, inst.violations)
