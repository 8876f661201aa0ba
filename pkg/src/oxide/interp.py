"""Instrumented small-step semantics over configurations (sigma, rho, expr).

Every allocation becomes a tree of regions; borrows create ghost regions that
carry a fraction and alias metadata, mirroring the checker's region context.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .parser import SourceProgram
from .syntax import (
    IMM, MUT, ONE, ZERO, Alloc, ArrayE, ArrayIndex, ArrayT, Assign, Base, Borrow, Copy, Defs,
    Deref, Drop, EnumE, Field, Fraction, If, Let, Lit, Match, MutArg, NamedT,
    Place, PlaceE, Prim, RcT, RefCellT, RefT, RegionArg, Seq, Span, StructE, TupleE,
    TupleIndex, TupleT, TypeVar, VecT, frac_halve, frac_merge, frac_sum, path_str, subst_type,
)
from .typeck import TypedResult, check_program

U32_MOD = 2 ** 32
PLACE_PRIMS = {"vec_push", "vec_pop", "vec_len", "vec_idx_borrow", "rc_clone", "rc_get_mut",
               "refcell_borrow", "refcell_borrow_mut"}
DYNAMIC_ERRORS = {"D-REFCELL-VIOLATION", "D-INDEX-OOB", "D-POP-EMPTY", "D-SUB-UNDERFLOW"}


# -- values ------------------------------------------------------------------
# Stored values name their components by region; in-flight values nest them.

@dataclass(frozen=True)
class Const:
    value: object  # int | bool | None


@dataclass(frozen=True)
class TupleV:
    items: tuple


@dataclass(frozen=True)
class StructV:
    name: str
    fields: tuple  # ((field, item), ...)


@dataclass(frozen=True)
class EnumV:
    name: str
    tag: str
    items: tuple


@dataclass(frozen=True)
class ArrayV:
    items: tuple


@dataclass(frozen=True)
class RefV:
    target: str


@dataclass(frozen=True)
class VecV:
    items: tuple


@dataclass(frozen=True)
class RcV:
    cell: str


@dataclass(frozen=True)
class RcCell:
    count: int
    content: object


@dataclass(frozen=True)
class RefCellV:
    state: int  # 0 free, n > 0 shared(n), -1 exclusive
    content: object


UNIT_V = Const(None)


def value_children(v) -> tuple:
    match v:
        case TupleV(items) | ArrayV(items) | VecV(items) | EnumV(_, _, items):
            return tuple(items)
        case StructV(_, fields):
            return tuple(x for _, x in fields)
        case RcCell(_, content) | RefCellV(_, content):
            return (content,)
    return ()


def with_children(v, kids):
    kids = tuple(kids)
    match v:
        case TupleV():
            return TupleV(kids)
        case ArrayV():
            return ArrayV(kids)
        case VecV():
            return VecV(kids)
        case EnumV(name, tag, _):
            return EnumV(name, tag, kids)
        case StructV(name, fields):
            return StructV(name, tuple((f, k) for (f, _), k in zip(fields, kids)))
        case RcCell(count, _):
            return RcCell(count, kids[0])
        case RefCellV(state, _):
            return RefCellV(state, kids[0])
    return v


def child_suffixes(v) -> list[str]:
    match v:
        case TupleV(items) | EnumV(_, _, items):
            return [f".{i}" for i in range(len(items))]
        case ArrayV(items) | VecV(items):
            return [f"[{i}]" for i in range(len(items))]
        case StructV(_, fields):
            return [f".{f}" for f, _ in fields]
        case RcCell() | RefCellV():
            return [".*"]
    return []


def refcell_state_str(state: int) -> str:
    if state == 0:
        return "free"
    if state < 0:
        return "exclusive"
    return f"shared({state})"


# -- store -------------------------------------------------------------------

@dataclass(frozen=True)
class RegionRec:
    val: object
    frac: Fraction = ONE
    meta: tuple = ()
    origin: str = "stack"  # stack | heap | ghost
    parent: Optional[str] = None
    named: bool = False
    seq: int = 0
    ty: object = None
    guard: Optional[tuple] = None  # (refcell component region, "shared" | "exclusive")

    @property
    def is_ghost(self) -> bool:
        return bool(self.meta)


# -- runtime-only expression forms -------------------------------------------

@dataclass(frozen=True)
class ValE:
    value: object
    span: Span = field(default=Span(0, 0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Scope:
    binds: tuple  # ((var, previous region or None), ...)
    body: object
    span: Span = field(default=Span(0, 0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Mark:
    index: int
    expr: object
    span: Span = field(default=Span(0, 0, 0), compare=False, repr=False)


@dataclass(frozen=True)
class Config:
    sigma: dict
    rho: dict
    expr: object
    defs: Defs = Defs()
    counter: int = 0
    boundary: Optional[int] = None
    redex: Optional[Span] = None


@dataclass(frozen=True)
class Outcome:
    kind: str  # value | error | fuel | stuck
    detail: str = ""

    def __str__(self) -> str:
        return {"value": f"value {self.detail}", "error": f"error {self.detail}",
                "fuel": "fuel exhausted", "stuck": f"STUCK {self.detail}"}[self.kind]

    def to_json(self) -> dict:
        return {"kind": self.kind, "detail": self.detail}


class Stuck(Exception):
    """A configuration matched no rule: a soundness bug, never a user error."""


class DynamicError(Exception):
    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}")
        self.code = code


def mark_statements(e, counter=None):
    """Wrap each top-level statement in a Mark so runs can report boundaries."""
    if counter is None:
        counter = [0]

    def next_mark(inner):
        m = Mark(counter[0], inner, inner.span)
        counter[0] += 1
        return m

    match e:
        case Let(var, bound, body):
            m = next_mark(bound)
            return Let(var, m, mark_statements(body, counter), e.span)
        case Seq(first, second):
            m = next_mark(first)
            return Seq(m, mark_statements(second, counter), e.span)
    return next_mark(e)


def initial_config(p: SourceProgram) -> Config:
    return Config({}, {}, mark_statements(p.body), p.defs)


# -- the machine -------------------------------------------------------------

class Machine:
    """Mutable working copy of a configuration for the duration of one step."""

    def __init__(self, c: Config, region_types: dict, skip_halving: bool = False):
        self.sigma = dict(c.sigma)
        self.rho = dict(c.rho)
        self.defs = c.defs
        self.counter = c.counter
        self.boundary = None
        self.redex = None
        self.region_types = region_types
        self.skip_halving = skip_halving

    def config(self, expr) -> Config:
        return Config(self.sigma, self.rho, expr, self.defs, self.counter, self.boundary, self.redex)

    # -- store helpers --

    def rec(self, name: str) -> RegionRec:
        r = self.rho.get(name)
        if r is None:
            raise Stuck(f"region {name} is not live")
        return r

    def follow(self, name: str) -> str:
        seen = set()
        while self.rec(name).is_ghost:
            if name in seen:
                raise Stuck(f"ghost cycle at {name}")
            seen.add(name)
            v = self.rho[name].val
            if not isinstance(v, RefV):
                raise Stuck(f"ghost region {name} does not hold a reference")
            name = v.target
        return name

    def materialize(self, tree, name: str, parent: Optional[str], origin: str, **kw):
        kids = value_children(tree) if not isinstance(tree, (RcCell,)) else value_children(tree)
        names = []
        for suffix, kid in zip(child_suffixes(tree), kids):
            kname = name + suffix
            kid_origin = "heap" if isinstance(tree, VecV) else origin
            self.materialize(kid, kname, name, kid_origin)
            names.append(kname)
        self.rho[name] = RegionRec(with_children(tree, names), ONE, (), origin, parent, **kw)

    def store_into(self, name: str, tree):
        """Replace the value held by an existing region, freeing what it held before."""
        rec = self.rec(name)
        self.release(rec.val)
        names = []
        for suffix, kid in zip(child_suffixes(tree), value_children(tree)):
            kname = name + suffix
            self.materialize(kid, kname, name, "heap" if isinstance(tree, VecV) else rec.origin)
            names.append(kname)
        self.rho[name] = replace(rec, val=with_children(tree, names))

    def release(self, val):
        for kid in value_children(val):
            self.free_tree(kid)
        if isinstance(val, RcV):
            self.dec_rc(val.cell)

    def free_tree(self, name: str):
        rec = self.rho.pop(name)
        self.release(rec.val)

    def dec_rc(self, cell: str):
        rec = self.rec(cell)
        count = rec.val.count - 1
        if count == 0:
            for other, orec in self.rho.items():
                if orec.is_ghost and orec.meta and self.points_into(orec.val.target, cell):
                    raise Stuck(f"freeing Rc cell {cell} while {other} still borrows its contents")
            self.free_tree(cell)
        else:
            self.rho[cell] = replace(rec, val=RcCell(count, rec.val.content))

    def points_into(self, target: str, root: str) -> bool:
        while target is not None:
            if target == root:
                return True
            rec = self.rho.get(target)
            target = rec.parent if rec else None
        return False

    def read_tree(self, name: str):
        rec = self.rec(name)
        v = rec.val
        if isinstance(v, RcCell):
            raise Stuck("cannot read an Rc cell by value")
        return with_children(v, [self.read_tree(k) for k in value_children(v)])

    def extract(self, name: str):
        rec = self.rho.pop(name)
        v = rec.val
        return with_children(v, [self.extract(k) for k in value_children(v)])

    def fresh_seq(self) -> int:
        self.counter += 1
        return self.counter

    # -- places --

    def resolve(self, place: Place):
        """Returns (static region, static path, target region, static chain, through_rc)."""
        if place.root not in self.sigma:
            raise Stuck(f"variable {place.root} is unbound")
        static = self.sigma[place.root]
        chain = [static]
        path = ()
        cur = self.follow(static)
        through_rc = False
        for comp in place.path:
            v = self.rec(cur).val
            match comp, v:
                case TupleIndex(i), TupleV(items) if i < len(items):
                    cur = items[i]
                case Field(f), StructV(_, fields):
                    cur = dict(fields)[f]
                case ArrayIndex(i), ArrayV(items) if i < len(items):
                    cur = items[i]
                case Deref(), RefV(t):
                    static, path = t, ()
                    chain.append(t)
                    cur = self.follow(t)
                    continue
                case Deref(), RcV(cell):
                    cur = self.rec(cell).val.content
                    through_rc = True
                case _:
                    raise Stuck(f"path {comp} does not apply to {v}")
            path = path + (comp,)
        return static, path, cur, chain, through_rc

    def need_read(self, chain):
        for r in chain:
            if self.rec(r).frac.is_zero:
                raise Stuck(f"read through {r} with zero capability")

    def need_write(self, chain, through_rc):
        self.need_read(chain)
        if through_rc:
            raise Stuck("write behind an Rc")
        for r in chain:
            rec = self.rec(r)
            if not (rec.frac.is_whole or (rec.guard and rec.guard[1] == "exclusive")):
                raise Stuck(f"write through {r} with capability {rec.frac}")

    def ghost(self, region, mut, src: str, path, target: str, guard=None):
        if region.name in self.rho:
            raise Stuck(f"region {region.name} already live")
        s = self.rec(src)
        if guard is not None or mut is IMM:
            if s.frac.is_zero:
                raise Stuck(f"borrow from {src} with zero capability")
            half = s.frac if self.skip_halving else frac_halve(s.frac)
            self.rho[src] = replace(s, frac=half)
            frac = half
        else:
            if not s.frac.is_whole:
                raise Stuck(f"mutable borrow from {src} with capability {s.frac}")
            self.rho[src] = replace(s, frac=ZERO)
            frac = ONE
        self.rho[region.name] = RegionRec(RefV(target), frac, ((src, tuple(path)),), "ghost", None,
                                          True, self.fresh_seq(), self.region_types.get(region.uid),
                                          guard)

    def drop(self, name: str):
        rec = self.rec(name)
        for other, orec in self.rho.items():
            if orec.is_ghost and orec.meta[0][0] == name:
                raise Stuck(f"dropping {name} while alias {other} is live")
        if rec.is_ghost:
            src = rec.meta[0][0]
            s = self.rec(src)
            if not self.skip_halving or s.frac.is_zero:
                self.rho[src] = replace(s, frac=frac_merge(s.frac, rec.frac))
            if rec.guard:
                cell_name, kind = rec.guard
                cell = self.rec(cell_name)
                state = cell.val.state - 1 if kind == "shared" else 0
                self.rho[cell_name] = replace(cell, val=RefCellV(state, cell.val.content))
            del self.rho[name]
        else:
            if not rec.frac.is_whole:
                raise Stuck(f"freeing {name} with capability {rec.frac}")
            self.free_tree(name)
        self.sigma = {x: r for x, r in self.sigma.items() if r != name}

    # -- reduction --

    def reduce(self, e):
        """One leftmost-innermost reduction inside ``e``; returns the new expression."""
        match e:
            case ValE():
                raise Stuck("value has no redex")
            case Mark(i, inner):
                if isinstance(inner, ValE):
                    self.boundary = i
                    self.redex = e.span
                    return inner
                return Mark(i, self.reduce(inner), e.span)
            case Scope(binds, body):
                if isinstance(body, ValE):
                    self.redex = e.span
                    for var, prev in reversed(binds):
                        if prev is not None and prev in self.rho:
                            self.sigma[var] = prev
                        else:
                            self.sigma.pop(var, None)
                    return body
                return Scope(binds, self.reduce(body), e.span)
            case Let(var, bound, body):
                if not isinstance(bound, ValE):
                    return Let(var, self.reduce(bound), body, e.span)
                self.redex = e.span
                ref = bound.value
                if not isinstance(ref, RefV):
                    raise Stuck("let-bound value is not a reference")
                prev = self.sigma.get(var)
                self.sigma[var] = ref.target
                return Scope(((var, prev),), body, e.span)
            case Seq(first, second):
                if not isinstance(first, ValE):
                    return Seq(self.reduce(first), second, e.span)
                self.redex = e.span
                if first.value != UNIT_V:
                    raise Stuck("discarding a non-unit value")
                return second
            case Alloc(r, inner):
                if not isinstance(inner, ValE):
                    return Alloc(r, self.reduce(inner), e.span)
                self.redex = e.span
                if r.name in self.rho:
                    raise Stuck(f"region {r.name} already live")
                self.materialize(inner.value, r.name, None, "stack", named=True, seq=self.fresh_seq(),
                                 ty=self.region_types.get(r.uid))
                return ValE(RefV(r.name), e.span)
            case Copy(r, place):
                self.redex = e.span
                _, _, target, chain, _ = self.resolve(place)
                self.need_read(chain)
                if r.name in self.rho:
                    raise Stuck(f"region {r.name} already live")
                tree = self.read_tree(target)
                self.materialize(tree, r.name, None, "stack", named=True, seq=self.fresh_seq(),
                                 ty=self.region_types.get(r.uid))
                return ValE(RefV(r.name), e.span)
            case Borrow(r, mut, place):
                self.redex = e.span
                static, path, target, chain, through_rc = self.resolve(place)
                if mut is MUT:
                    self.need_write(chain[:-1], through_rc)
                else:
                    self.need_read(chain)
                self.ghost(r, mut, static, path, target)
                return ValE(RefV(r.name), e.span)
            case Drop(r):
                self.redex = e.span
                self.drop(r.name)
                return ValE(UNIT_V, e.span)
            case Assign(place, inner):
                if not isinstance(inner, ValE):
                    return Assign(place, self.reduce(inner), e.span)
                self.redex = e.span
                _, _, target, chain, through_rc = self.resolve(place)
                self.need_write(chain, through_rc)
                self.store_into(target, inner.value)
                return ValE(UNIT_V, e.span)
            case If(cond, then, orelse):
                if not isinstance(cond, ValE):
                    return If(self.reduce_operand(cond), then, orelse, e.span)
                self.redex = e.span
                v = cond.value
                if not isinstance(v, Const) or not isinstance(v.value, bool):
                    raise Stuck("if condition is not a bool")
                return then if v.value else orelse
            case Match(place, arms):
                self.redex = e.span
                static, path, target, chain, _ = self.resolve(place)
                self.need_read(chain)
                v = self.rec(target).val
                if not isinstance(v, EnumV):
                    raise Stuck("match on a non-enum")
                arm = next((a for a in arms if a.variant == v.tag), None)
                if arm is None:
                    raise Stuck(f"no arm for {v.tag}")
                binds = []
                for i, (r, var) in enumerate(arm.bindings):
                    self.ghost(r, IMM, static, path + (TupleIndex(i),), v.items[i])
                    binds.append((var, self.sigma.get(var)))
                    self.sigma[var] = r.name
                if not binds:
                    return arm.body
                return Scope(tuple(binds), arm.body, e.span)
            case Lit(v):
                self.redex = e.span
                return ValE(Const(v), e.span)
            case TupleE(items) | ArrayE(items):
                idx = _first_nonvalue(items)
                if idx is not None:
                    items = items[:idx] + (self.reduce(items[idx]),) + items[idx + 1:]
                    return type(e)(items, e.span)
                self.redex = e.span
                ctor = TupleV if isinstance(e, TupleE) else ArrayV
                return ValE(ctor(tuple(i.value for i in items)), e.span)
            case StructE(name, targs, fields):
                exprs = tuple(x for _, x in fields)
                idx = _first_nonvalue(exprs)
                if idx is not None:
                    f, x = fields[idx]
                    fields = fields[:idx] + ((f, self.reduce(x)),) + fields[idx + 1:]
                    return StructE(name, targs, fields, e.span)
                self.redex = e.span
                sdef = self.defs.struct(name)
                given = dict((f, x.value) for f, x in fields)
                return ValE(StructV(name, tuple((f, given[f]) for f, _ in sdef.fields)), e.span)
            case EnumE(name, targs, variant, args):
                idx = _first_nonvalue(args)
                if idx is not None:
                    args = args[:idx] + (self.reduce(args[idx]),) + args[idx + 1:]
                    return EnumE(name, targs, variant, args, e.span)
                self.redex = e.span
                return ValE(EnumV(name, variant, tuple(a.value for a in args)), e.span)
            case PlaceE():
                return self.reduce_operand(e)
            case Prim(op, targs, args):
                start = 1 if op in PLACE_PRIMS else 0
                values = [i for i, a in enumerate(args) if not isinstance(a, (RegionArg, MutArg))][start:]
                for i in values:
                    if not isinstance(args[i], ValE):
                        new = self.reduce_operand(args[i])
                        return Prim(op, targs, args[:i] + (new,) + args[i + 1:], e.span)
                self.redex = e.span
                return ValE(self.prim(op, args), e.span)
        raise Stuck(f"no rule for {type(e).__name__}")

    def reduce_operand(self, a):
        if isinstance(a, PlaceE):
            self.redex = a.span
            _, _, target, chain, _ = self.resolve(a.place)
            self.need_read(chain)
            return ValE(self.read_tree(target), a.span)
        return self.reduce(a)

    def prim(self, op: str, args):
        regions = [a.region for a in args if isinstance(a, RegionArg)]
        muts = [a.mut for a in args if isinstance(a, MutArg)]
        operands = [a for a in args if not isinstance(a, (RegionArg, MutArg))]
        if op in PLACE_PRIMS:
            place = operands[0].place
            vals = [o.value for o in operands[1:]]
        else:
            vals = [o.value for o in operands]
        if op in ("add", "sub", "mul", "eq", "lt"):
            a, b = (v.value for v in vals)
            if op == "add":
                return Const((a + b) % U32_MOD)
            if op == "mul":
                return Const((a * b) % U32_MOD)
            if op == "sub":
                if b > a:
                    raise DynamicError("D-SUB-UNDERFLOW", f"{a} - {b}")
                return Const(a - b)
            if op == "eq":
                return Const(a == b)
            return Const(a < b)
        if op == "vec_new":
            return VecV(())
        if op == "rc_new":
            cell = f"@rc{self.counter + 1}"
            seq = self.fresh_seq()
            self.materialize(RcCell(1, vals[0]), cell, None, "heap", seq=seq)
            return RcV(cell)
        if op == "refcell_new":
            return RefCellV(0, vals[0])

        static, path, target, chain, through_rc = self.resolve(place)
        rec = self.rec(target)
        v = rec.val
        if op == "vec_push":
            self.need_write(chain, through_rc)
            name = f"{target}[{len(v.items)}]"
            self.materialize(vals[0], name, target, "heap")
            self.rho[target] = replace(rec, val=VecV(v.items + (name,)))
            return UNIT_V
        if op == "vec_pop":
            self.need_write(chain, through_rc)
            if not v.items:
                raise DynamicError("D-POP-EMPTY", f"pop from empty vector in {target}")
            tree = self.extract(v.items[-1])
            self.rho[target] = replace(rec, val=VecV(v.items[:-1]))
            return tree
        if op == "vec_len":
            self.need_read(chain)
            return Const(len(v.items))
        if op == "vec_idx_borrow":
            i = vals[0].value
            mut = muts[0]
            if mut is MUT:
                self.need_write(chain[:-1], through_rc)
            else:
                self.need_read(chain)
            if i >= len(v.items):
                raise DynamicError("D-INDEX-OOB", f"index {i} into vector of length {len(v.items)}")
            self.ghost(regions[0], mut, static, path + (ArrayIndex(i),), v.items[i])
            return RefV(regions[0].name)
        if op == "rc_clone":
            self.need_read(chain)
            cell = self.rec(v.cell)
            self.rho[v.cell] = replace(cell, val=RcCell(cell.val.count + 1, cell.val.content))
            return RcV(v.cell)
        if op == "rc_get_mut":
            self.need_write(chain[:-1], through_rc)
            cell = self.rec(v.cell).val
            g = regions[0]
            self.ghost(g, MUT, static, path + (Deref(),), cell.content)
            if cell.count == 1:
                return EnumV("Option", "Some", (RefV(g.name),))
            return EnumV("Option", "None", ())
        if op in ("refcell_borrow", "refcell_borrow_mut"):
            self.need_read(chain)
            if op == "refcell_borrow":
                if v.state < 0:
                    raise DynamicError("D-REFCELL-VIOLATION", f"{target} is mutably borrowed")
                state, kind = v.state + 1, "shared"
            else:
                if v.state != 0:
                    raise DynamicError("D-REFCELL-VIOLATION",
                                       f"{target} is already borrowed ({refcell_state_str(v.state)})")
                state, kind = -1, "exclusive"
            self.rho[target] = replace(rec, val=RefCellV(state, v.content))
            self.ghost(regions[0], IMM, static, path + (Deref(),), v.content, guard=(target, kind))
            return RefV(regions[0].name)
        raise Stuck(f"unknown primitive {op}")


def _first_nonvalue(items):
    for i, x in enumerate(items):
        if not isinstance(x, ValE):
            return i
    return None


def step(c: Config, region_types: Optional[dict] = None, skip_halving: bool = False):
    """One reduction step: a new Config, or an Outcome when the run ends."""
    if isinstance(c.expr, ValE):
        return Outcome("value", render_value(c.expr.value, c.rho))
    m = Machine(c, region_types or {}, skip_halving)
    try:
        new = m.reduce(c.expr)
    except DynamicError as err:
        return Outcome("error", err.code)
    except Stuck as err:
        return Outcome("stuck", str(err))
    return m.config(new)


# -- rendering ---------------------------------------------------------------

def render_value(v, rho: dict) -> str:
    def item(x):
        if isinstance(x, str):
            return render_value(rho[x].val, rho)
        return render_value(x, rho)

    match v:
        case Const(None):
            return "()"
        case Const(True):
            return "true"
        case Const(False):
            return "false"
        case Const(n):
            return str(n)
        case TupleV(items):
            inner = ", ".join(item(i) for i in items)
            return f"({inner},)" if len(items) == 1 else f"({inner})"
        case ArrayV(items):
            return "[" + ", ".join(item(i) for i in items) + "]"
        case VecV(items):
            return "vec[" + ", ".join(item(i) for i in items) + "]"
        case StructV(name, fields):
            return f"{name} {{ " + ", ".join(f"{f}: {item(x)}" for f, x in fields) + " }"
        case EnumV(name, tag, items):
            return f"{name}::{tag}(" + ", ".join(item(i) for i in items) + ")"
        case RefV(target):
            while rho[target].meta:
                target = rho[target].val.target
            return "&" + item(target)
        case RcV(cell):
            return "Rc(" + item(rho[cell].val.content) + ")"
        case RefCellV(_, content):
            return "RefCell(" + item(content) + ")"
    raise TypeError(v)


def value_json(v):
    def item(x):
        return x if isinstance(x, str) else value_json(x)

    match v:
        case Const(value):
            return {"const": value}
        case TupleV(items):
            return {"tuple": [item(i) for i in items]}
        case ArrayV(items):
            return {"array": [item(i) for i in items]}
        case VecV(items):
            return {"vec": [item(i) for i in items]}
        case StructV(name, fields):
            return {"struct": name, "fields": {f: item(x) for f, x in fields}}
        case EnumV(name, tag, items):
            return {"enum": name, "tag": tag, "items": [item(i) for i in items]}
        case RefV(target):
            return {"ref": target}
        case RcV(cell):
            return {"rc": cell}
        case RcCell(count, content):
            return {"rc_cell": {"count": count, "content": item(content)}}
        case RefCellV(state, content):
            return {"refcell": {"state": refcell_state_str(state), "content": item(content)}}
    raise TypeError(v)


def store_json(c: Config) -> dict:
    rho = {}
    for name in sorted(c.rho):
        rec = c.rho[name]
        rho[name] = {"val": value_json(rec.val), "frac": rec.frac.to_json(),
                     "meta": [[s, path_str(p)] for s, p in rec.meta], "origin": rec.origin}
    return {"sigma": dict(sorted(c.sigma.items())), "rho": rho}


# -- store checking ----------------------------------------------------------

def _expr_values(e):
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, ValE):
            yield node.value
            continue
        if not hasattr(node, "__dataclass_fields__"):
            continue
        for f in node.__dataclass_fields__:
            x = getattr(node, f)
            if isinstance(x, tuple):
                for y in x:
                    if isinstance(y, tuple):
                        stack.extend(y)
                    else:
                        stack.append(y)
            else:
                stack.append(x)


def _tree_values(v):
    stack = [v]
    while stack:
        x = stack.pop()
        yield x
        stack.extend(k for k in value_children(x) if not isinstance(k, str))


def shape_ok(rho: dict, v, ty, defs: Defs) -> bool:
    if isinstance(v, str):
        rec = rho.get(v)
        if rec is None:
            return False
        v = rec.val

    def sub(x, t):
        return shape_ok(rho, x, t, defs)

    match ty:
        case TypeVar():
            return True
        case Base("u32"):
            return isinstance(v, Const) and isinstance(v.value, int) and not isinstance(v.value, bool)
        case Base("bool"):
            return isinstance(v, Const) and isinstance(v.value, bool)
        case Base("unit"):
            return v == UNIT_V
        case TupleT(items):
            return (isinstance(v, TupleV) and len(v.items) == len(items)
                    and all(sub(x, t) for x, t in zip(v.items, items)))
        case ArrayT(elem, n):
            return isinstance(v, ArrayV) and len(v.items) == n and all(sub(x, elem) for x in v.items)
        case VecT(elem):
            return isinstance(v, VecV) and all(sub(x, elem) for x in v.items)
        case RefT(_, _, inner):
            if not isinstance(v, RefV) or v.target not in rho:
                return False
            t = v.target
            while rho[t].meta:
                t = rho[t].val.target
                if t not in rho:
                    return False
            return sub(t, inner)
        case RcT(elem):
            cell = rho.get(v.cell) if isinstance(v, RcV) else None
            return cell is not None and sub(cell.val.content, elem)
        case RefCellT(elem):
            return isinstance(v, RefCellV) and sub(v.content, elem)
        case NamedT(name, args):
            sdef = defs.struct(name)
            if sdef is not None:
                env = dict(zip(sdef.params, args))
                return (isinstance(v, StructV) and v.name == name
                        and all(sub(x, subst_type(t, env)) for (_, x), (_, t) in zip(v.fields, sdef.fields)))
            edef = defs.enum(name)
            if edef is None or not isinstance(v, EnumV) or v.name != name:
                return False
            tys = edef.variant(v.tag)
            env = dict(zip(edef.params, args))
            return tys is not None and len(tys) == len(v.items) and all(
                sub(x, subst_type(t, env)) for x, t in zip(v.items, tys))
    return False


def check_store(c: Config) -> list[str]:
    """Empty iff fractions are conserved, nothing dangles, and values fit their static types."""
    rho = c.rho
    out = []
    for var, r in sorted(c.sigma.items()):
        if r not in rho:
            out.append(f"dangling: variable {var} names absent region {r}")
    handles: dict[str, int] = {}
    guards: dict[str, list] = {}
    in_flight = list(_expr_values(c.expr))
    for v in in_flight:
        for x in _tree_values(v):
            if isinstance(x, RcV):
                handles[x.cell] = handles.get(x.cell, 0) + 1
            if isinstance(x, RefV) and x.target not in rho:
                out.append(f"dangling: in-flight reference to absent region {x.target}")
    for name in sorted(rho):
        rec = rho[name]
        v = rec.val
        for kid in value_children(v):
            if kid not in rho:
                out.append(f"dangling: {name} holds absent component {kid}")
        if isinstance(v, RefV) and v.target not in rho:
            out.append(f"dangling: {name} references absent region {v.target}")
        if isinstance(v, RcV):
            if v.cell not in rho:
                out.append(f"dangling: {name} holds handle to absent Rc cell {v.cell}")
            handles[v.cell] = handles.get(v.cell, 0) + 1
        if rec.meta and rec.meta[0][0] not in rho:
            out.append(f"dangling: {name} aliases absent region {rec.meta[0][0]}")
        if rec.guard:
            guards.setdefault(rec.guard[0], []).append(rec.guard[1])
            if rec.guard[0] not in rho:
                out.append(f"dangling: guard {name} on absent RefCell {rec.guard[0]}")
        if rec.parent is not None and rec.parent not in rho:
            out.append(f"dangling: component {name} of absent parent {rec.parent}")
        if rec.ty is not None:
            target = v.target if rec.is_ghost and isinstance(v, RefV) else name
            if target in rho and not shape_ok(rho, target, rec.ty, c.defs):
                out.append(f"type: region {name} does not hold a value of type {rec.ty}")
    # conservation over named roots and their alias chains
    groups: dict[str, list] = {}
    for name, rec in rho.items():
        if not rec.named:
            if not rec.frac.is_whole:
                out.append(f"conservation: unnamed region {name} has capability {rec.frac}")
            continue
        root, seen = name, set()
        while root in rho and rho[root].meta and root not in seen:
            seen.add(root)
            root = rho[root].meta[0][0]
        if root in rho:
            groups.setdefault(root, []).append(rec.frac)
    for root, fracs in sorted(groups.items()):
        num, k = frac_sum(fracs)
        if num != (1 << k):
            out.append(f"conservation: capabilities rooted at {root} sum to {num}/{1 << k}, not 1")
    for name, rec in sorted(rho.items()):
        if isinstance(rec.val, RcCell) and rec.val.count != handles.get(name, 0):
            out.append(f"rc: cell {name} counts {rec.val.count} handles, {handles.get(name, 0)} live")
        if isinstance(rec.val, RefCellV):
            kinds = guards.get(name, [])
            s = rec.val.state
            ok = (s == 0 and not kinds) or (s == -1 and kinds == ["exclusive"]) or (
                s > 0 and kinds.count("shared") == s and len(kinds) == s)
            if not ok:
                out.append(f"refcell: {name} is {refcell_state_str(s)} with guards {kinds}")
    for cell in handles:
        if cell not in rho:
            out.append(f"dangling: handle to absent Rc cell {cell}")
    return out


def named_fractions(c: Config) -> dict:
    return {n: r.frac for n, r in c.rho.items() if r.named}


# -- running -----------------------------------------------------------------

@dataclass
class RunResult:
    outcome: Outcome
    steps: int
    trace: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    boundaries: list = field(default_factory=list)  # [(index, Config)]
    final: Optional[Config] = None


def run(p: SourceProgram, fuel: int = 10000, strict: bool = False, trace: bool = False,
        typed: Optional[TypedResult] = None, skip_halving: bool = False,
        config: Optional[Config] = None) -> RunResult:
    if typed is None:
        typed = check_program(p)
    c = config or initial_config(p)
    result = RunResult(Outcome("fuel"), 0)
    expected = [P.fractions() for _, P in typed.trace]
    while True:
        if isinstance(c.expr, ValE):
            result.outcome = step(c)
            break
        if result.steps >= fuel:
            result.outcome = Outcome("fuel")
            break
        nxt = step(c, typed.region_types, skip_halving)
        if isinstance(nxt, Outcome):
            result.outcome = nxt
            break
        c = nxt
        result.steps += 1
        if trace:
            span = c.redex
            result.trace.append(json.dumps({
                "step": result.steps,
                "redex_span": None if span is None else {"offset": span.offset, "line": span.line, "col": span.col},
                **store_json(c)}, sort_keys=True))
        if strict:
            for v in check_store(c):
                result.violations.append(f"step {result.steps}: {v}")
        if c.boundary is not None:
            result.boundaries.append((c.boundary, c))
            if strict and c.boundary < len(expected):
                got = named_fractions(c)
                if got != expected[c.boundary]:
                    result.violations.append(
                        f"step {result.steps}: runtime fractions {_fr(got)} differ from checker {_fr(expected[c.boundary])}")
    result.final = c
    return result


def _fr(d: dict) -> str:
    return "{" + ", ".join(f"{k}: {v}" for k, v in sorted(d.items())) + "}"
