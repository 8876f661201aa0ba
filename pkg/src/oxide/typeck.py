"""Type-and-effect checking: threads the region context through every expression."""

from __future__ import annotations

from dataclasses import dataclass, field

from .parser import SourceProgram
from .regions import (
    EMPTY_CTX, Brwrgn, Delrgn, Newrgn, RegionCtx, Updatergn, apply_effect, can_write,
    conservation_check, render_ctx,
)
from .syntax import (
    BOOL, IMM, MUT, PRIM_LEVEL, U32, UNIT, Alloc, ArrayE, ArrayIndex, ArrayT, Assign, Base,
    Borrow, Copy, Deref, Drop, EnumE, Field, Hole, If, Let, Lit, Match, MutArg, NamedT,
    OxideError, PlaceE, Prim, RcT, RefCellT, RefT, RegionArg, Seq, StructE, TupleE,
    TupleIndex, TupleT, VecT, defs_level, erase_regions, expr_level, subst_type, type_regions,
)


@dataclass
class TypedResult:
    ty: object
    effects: tuple
    ctx_after: RegionCtx
    trace: list = field(default_factory=list)  # [(span, RegionCtx)]
    region_types: dict = field(default_factory=dict)  # region uid -> stored type
    hole_env: dict | None = None


@dataclass(frozen=True)
class Resolved:
    region: str
    path: tuple
    ty: object
    chain: tuple  # every region passed through, root variable's first
    through_rc: bool


def is_copyable(t) -> bool:
    match t:
        case Base():
            return True
        case TupleT(items):
            return all(is_copyable(i) for i in items)
        case ArrayT(elem, _):
            return is_copyable(elem)
    return False


class Checker:
    def __init__(self, defs, level: int, debug: bool = False):
        self.defs = defs
        self.level = level
        self.debug = debug
        self.region_types: dict = {}
        self.watch = None  # node whose entry environment should be recorded
        self.watched_env = None

    # -- helpers --

    def effect(self, P: RegionCtx, eff, effects: list) -> RegionCtx:
        P = apply_effect(P, eff)
        effects.append(eff)
        if self.debug:
            bad = conservation_check(P)
            if bad:
                raise AssertionError(f"conservation broken after {eff}: {bad}")
        return P

    def mismatch(self, message: str):
        raise OxideError("E-TYPE-MISMATCH", message)

    def resolve(self, P, G, place) -> Resolved:
        if place.root not in G:
            raise OxideError("E-UNBOUND-VAR", f"variable {place.root} is not in scope")
        ref = G[place.root]
        entry = P.get(ref.region.name)
        if entry is None:
            raise OxideError("E-UNBOUND-REGION", f"region {ref.region} of {place.root} is not live")
        region, path, ty = ref.region.name, (), entry.ty
        chain = [region]
        through_rc = False
        for comp in place.path:
            match comp, ty:
                case TupleIndex(i), TupleT(items) if i < len(items):
                    ty = items[i]
                case ArrayIndex(i), ArrayT(elem, n) if i < n:
                    ty = elem
                case Field(f), NamedT(name, args) if self.defs.struct(name):
                    sdef = self.defs.struct(name)
                    fty = dict(sdef.fields).get(f)
                    if fty is None:
                        self.mismatch(f"struct {name} has no field {f}")
                    ty = subst_type(fty, dict(zip(sdef.params, args)))
                case Deref(), RefT(r, _, _):
                    target = P.get(r.name)
                    if target is None:
                        raise OxideError("E-UNBOUND-REGION", f"region {r} is not live")
                    region, path, ty = r.name, (), target.ty
                    chain.append(region)
                    continue
                case Deref(), RcT(elem):
                    ty = elem
                    through_rc = True
                case _:
                    self.mismatch(f"path component {comp} does not apply to type {ty}")
            path = path + (comp,)
        return Resolved(region, path, ty, tuple(chain), through_rc)

    def need_read(self, P, res: Resolved):
        for r in res.chain:
            if P[r].frac.is_zero:
                raise OxideError("E-INSUFFICIENT-CAP", f"region '{r} holds no capability; cannot read")

    def need_write(self, P, res: Resolved, final: bool = True):
        if res.through_rc:
            self.mismatch("cannot mutate data behind an Rc")
        regions = res.chain if final else res.chain[:-1]
        self.need_read(P, res)
        for r in regions:
            if not can_write(P[r]):
                raise OxideError("E-CAP-NOT-WHOLE",
                                 f"mutation through '{r} needs capability 1, has {P[r].frac}")

    def intro(self, region, ty):
        self.region_types[region.uid] = ty

    # -- judgment --

    def expr(self, P, G, e, trace=None):
        """Returns (type, region ctx after, var ctx after, effects)."""
        if self.watch is not None and e is self.watch:
            self.watched_env = (P, dict(G))
        try:
            result = self._expr(P, G, e, trace)
        except OxideError as err:
            if err.span is None:
                err.span = e.span
                err.region_ctx = P.to_json()
            raise
        if trace is not None and not isinstance(e, (Let, Seq)):
            trace.append((e.span, result[1]))
        return result

    def _expr(self, P, G, e, trace):
        effects: list = []
        match e:
            case Alloc(r, inner):
                ty, P, G, effs = self.expr(P, G, inner)
                effects += effs
                P = self.effect(P, Newrgn(r.name, ty), effects)
                self.intro(r, ty)
                return RefT(r, MUT, ty), P, G, effects
            case Copy(r, place):
                res = self.resolve(P, G, place)
                self.need_read(P, res)
                if not is_copyable(res.ty):
                    self.mismatch(f"{place} has type {res.ty}, which is not copyable")
                P = self.effect(P, Newrgn(r.name, res.ty), effects)
                self.intro(r, res.ty)
                return RefT(r, MUT, res.ty), P, G, effects
            case Borrow(r, mut, place):
                res = self.resolve(P, G, place)
                if mut is MUT:
                    self.need_write(P, res, final=False)
                else:
                    self.need_read(P, res)
                P = self.effect(P, Brwrgn(mut, res.region, r.name, res.path, res.ty), effects)
                self.intro(r, res.ty)
                return RefT(r, mut, res.ty), P, G, effects
            case Drop(r):
                P = self.effect(P, Delrgn(r.name), effects)
                G = {x: t for x, t in G.items() if r.name not in type_regions(t)}
                return UNIT, P, G, effects
            case Let(var, bound, body):
                ty1, P, G1, effs = self.expr(P, G, bound)
                effects += effs
                if trace is not None:
                    trace.append((bound.span, P))
                if not isinstance(ty1, RefT):
                    self.mismatch(f"let binds references only; {var} would have type {ty1}")
                ty2, P, G2, effs = self.expr(P, {**G1, var: ty1}, body, trace)
                effects += effs
                G2 = dict(G2)
                G2.pop(var, None)
                old = G1.get(var)
                if old is not None and type_regions(old) <= set(P):
                    G2[var] = old
                return ty2, P, G2, effects
            case Assign(place, inner):
                ty, P, G, effs = self.expr(P, G, inner)
                effects += effs
                res = self.resolve(P, G, place)
                self.need_write(P, res)
                if ty != res.ty:
                    rebinding = (erase_regions(ty) == erase_regions(res.ty)
                                 and all(isinstance(c, TupleIndex) for c in res.path)
                                 and not P[res.region].meta)
                    if not rebinding:
                        self.mismatch(f"cannot assign {ty} to {place} of type {res.ty}")
                P = self.effect(P, Updatergn(res.region, res.path, ty), effects)
                return UNIT, P, G, effects
            case Seq(first, second):
                ty1, P, G, effs = self.expr(P, G, first)
                effects += effs
                if trace is not None:
                    trace.append((first.span, P))
                if ty1 != UNIT:
                    self.mismatch(f"left side of ';' has type {ty1}, expected unit")
                ty2, P, G, effs = self.expr(P, G, second, trace)
                return ty2, P, G, effects + effs
            case If(cond, then, orelse):
                ty, P, G, effs = self.operand(P, G, cond)
                effects += effs
                if ty != BOOL:
                    self.mismatch(f"if condition has type {ty}, expected bool")
                branches = [self.expr(P, G, then), self.expr(P, G, orelse)]
                return self.join(branches, effects, "if")
            case Match(place, arms):
                return self.match(P, G, place, arms)
            case Lit(v):
                if v is None:
                    return UNIT, P, G, effects
                if isinstance(v, bool):
                    return BOOL, P, G, effects
                if not 0 <= v < 2 ** 32:
                    self.mismatch(f"literal {v} does not fit in u32")
                return U32, P, G, effects
            case TupleE(items):
                tys = []
                for item in items:
                    ty, P, G, effs = self.expr(P, G, item)
                    effects += effs
                    tys.append(ty)
                return TupleT(tuple(tys)), P, G, effects
            case ArrayE(items):
                if not items:
                    self.mismatch("cannot infer the element type of an empty array")
                tys = []
                for item in items:
                    ty, P, G, effs = self.expr(P, G, item)
                    effects += effs
                    tys.append(ty)
                if any(t != tys[0] for t in tys):
                    self.mismatch("array elements have different types")
                return ArrayT(tys[0], len(tys)), P, G, effects
            case StructE(name, targs, fields):
                sdef = self.defs.struct(name)
                if sdef is None or len(targs) != len(sdef.params):
                    self.mismatch(f"bad construction of struct {name}")
                env = dict(zip(sdef.params, targs))
                want = {f: subst_type(t, env) for f, t in sdef.fields}
                if sorted(f for f, _ in fields) != sorted(want):
                    self.mismatch(f"struct {name} needs exactly the fields {sorted(want)}")
                for f, item in fields:
                    ty, P, G, effs = self.expr(P, G, item)
                    effects += effs
                    if ty != want[f]:
                        self.mismatch(f"field {f} of {name} expects {want[f]}, got {ty}")
                return NamedT(name, tuple(targs)), P, G, effects
            case EnumE(name, targs, variant, args):
                edef = self.defs.enum(name)
                if edef is None or len(targs) != len(edef.params):
                    self.mismatch(f"bad construction of enum {name}")
                tys = edef.variant(variant)
                if tys is None or len(tys) != len(args):
                    self.mismatch(f"{name}::{variant} does not take {len(args)} arguments")
                env = dict(zip(edef.params, targs))
                for want, item in zip(tys, args):
                    ty, P, G, effs = self.expr(P, G, item)
                    effects += effs
                    if ty != subst_type(want, env):
                        self.mismatch(f"{name}::{variant} expects {subst_type(want, env)}, got {ty}")
                return NamedT(name, tuple(targs)), P, G, effects
            case Prim():
                return self.prim(P, G, e)
            case PlaceE(place):
                self.mismatch(f"bare read of {place} outside an operand position")
            case Hole():
                self.mismatch("unfilled hole")
        raise TypeError(f"unknown expression {e!r}")

    def operand(self, P, G, e):
        if isinstance(e, PlaceE):
            if self.watch is not None and e is self.watch:
                self.watched_env = (P, dict(G))
            try:
                res = self.resolve(P, G, e.place)
                self.need_read(P, res)
                if not is_copyable(res.ty):
                    self.mismatch(f"{e.place} has type {res.ty}, which cannot be read by value")
            except OxideError as err:
                if err.span is None:
                    err.span = e.span
                    err.region_ctx = P.to_json()
                raise
            return res.ty, P, G, []
        if isinstance(e, (RegionArg, MutArg)):
            raise OxideError("E-TYPE-MISMATCH", "region or mutability where a value is expected", e.span)
        return self.expr(P, G, e)

    def join(self, branches, effects, what):
        ty0, P0, G0, effs0 = branches[0]
        for ty, P, G, _ in branches[1:]:
            if P != P0:
                raise OxideError("E-ARM-MISMATCH",
                                 f"{what} branches end in different region contexts: "
                                 f"{render_ctx(P0)} vs {render_ctx(P)}")
            if ty != ty0:
                raise OxideError("E-ARM-MISMATCH", f"{what} branches have types {ty0} and {ty}")
        G = {x: t for x, t in G0.items() if all(b[2].get(x) == t for b in branches)}
        return ty0, P0, G, effects + effs0

    def match(self, P, G, place, arms):
        res = self.resolve(P, G, place)
        self.need_read(P, res)
        if not isinstance(res.ty, NamedT) or self.defs.enum(res.ty.name) is None:
            self.mismatch(f"cannot match on {place} of type {res.ty}")
        edef = self.defs.enum(res.ty.name)
        env = dict(zip(edef.params, res.ty.args))
        seen = [a.variant for a in arms]
        if sorted(seen) != sorted(v for v, _ in edef.variants):
            raise OxideError("E-BAD-PATTERN",
                             f"arms {seen} must name each variant of {edef.name} exactly once")
        if not arms:
            raise OxideError("E-BAD-PATTERN", "empty match")
        branches = []
        for arm in arms:
            tys = edef.variant(arm.variant)
            if len(tys) != len(arm.bindings):
                raise OxideError("E-BAD-PATTERN",
                                 f"{arm.variant} has {len(tys)} fields, pattern binds {len(arm.bindings)}")
            Pa, Ga, effs = P, dict(G), []
            for i, ((r, var), fty) in enumerate(zip(arm.bindings, tys)):
                fty = subst_type(fty, env)
                Pa = self.effect(Pa, Brwrgn(IMM, res.region, r.name, res.path + (TupleIndex(i),), fty), effs)
                self.intro(r, fty)
                Ga[var] = RefT(r, IMM, fty)
            ty, Pa, Ga, body_effs = self.expr(Pa, Ga, arm.body)
            Ga = {x: t for x, t in Ga.items() if x in G and G[x] == t}
            branches.append((ty, Pa, Ga, effs + body_effs))
        return self.join(branches, [], "match")

    # -- primitives --

    def prim(self, P, G, e: Prim):
        op, args = e.op, e.args
        if PRIM_LEVEL[op] > self.level:
            raise OxideError("E-LEVEL-VIOLATION", f"{op} needs level {PRIM_LEVEL[op]}, program is level {self.level}")
        effects: list = []
        regions = [a.region for a in args if isinstance(a, RegionArg)]
        muts = [a.mut for a in args if isinstance(a, MutArg)]
        shape = {
            "add": (0, 0, 2), "sub": (0, 0, 2), "mul": (0, 0, 2), "eq": (0, 0, 2), "lt": (0, 0, 2),
            "vec_new": (0, 0, 0), "vec_push": (0, 0, 2), "vec_pop": (0, 0, 1), "vec_len": (0, 0, 1),
            "vec_idx_borrow": (1, 1, 2), "rc_new": (0, 0, 1), "rc_clone": (0, 0, 1),
            "rc_get_mut": (1, 0, 1), "refcell_new": (0, 0, 1), "refcell_borrow": (1, 0, 1),
            "refcell_borrow_mut": (1, 0, 1),
        }[op]
        values = [a for a in args if not isinstance(a, (RegionArg, MutArg))]
        if (len(regions), len(muts), len(values)) != shape:
            self.mismatch(f"{op} takes {shape[0]} region(s), {shape[1]} mutability and {shape[2]} operand(s)")
        if op == "vec_new":
            if len(e.targs) != 1:
                self.mismatch("vec_new needs one type argument")
            return VecT(e.targs[0]), P, G, effects
        if e.targs:
            self.mismatch(f"{op} takes no type arguments")

        place_ops = {"vec_push": 0, "vec_pop": 0, "vec_len": 0, "vec_idx_borrow": 0, "rc_clone": 0,
                     "rc_get_mut": 0, "refcell_borrow": 0, "refcell_borrow_mut": 0}
        place_arg = None
        if op in place_ops:
            place_arg = values[0]
            if not isinstance(place_arg, PlaceE):
                self.mismatch(f"{op} expects a place as its first operand")
            values = values[1:]
        tys = []
        for v in values:
            ty, P, G, effs = self.operand(P, G, v)
            effects += effs
            tys.append(ty)

        if op in ("add", "sub", "mul", "lt"):
            if tys != [U32, U32]:
                self.mismatch(f"{op} expects (u32, u32), got {tuple(map(str, tys))}")
            return (BOOL if op == "lt" else U32), P, G, effects
        if op == "eq":
            if tys[0] != tys[1] or tys[0] not in (U32, BOOL):
                self.mismatch("eq expects two u32 or two bool operands")
            return BOOL, P, G, effects
        if op == "rc_new":
            return RcT(tys[0]), P, G, effects
        if op == "refcell_new":
            return RefCellT(tys[0]), P, G, effects

        try:
            res = self.resolve(P, G, place_arg.place)
        except OxideError as err:
            err.span = err.span or place_arg.span
            raise

        def need(kind, ctor):
            if not isinstance(res.ty, ctor):
                self.mismatch(f"{op} expects a {kind}, {place_arg.place} has type {res.ty}")
            return res.ty.elem

        if op == "vec_push":
            elem = need("Vec", VecT)
            self.need_write(P, res)
            if tys[0] != elem:
                self.mismatch(f"vec_push of {tys[0]} onto Vec<{elem}>")
            return UNIT, P, G, effects
        if op == "vec_pop":
            elem = need("Vec", VecT)
            self.need_write(P, res)
            return elem, P, G, effects
        if op == "vec_len":
            need("Vec", VecT)
            self.need_read(P, res)
            return U32, P, G, effects
        if op == "vec_idx_borrow":
            elem = need("Vec", VecT)
            if tys[0] != U32:
                self.mismatch("vec_idx_borrow index must be u32")
            mut = muts[0]
            if mut is MUT:
                self.need_write(P, res, final=False)
            else:
                self.need_read(P, res)
            r = regions[0]
            P = self.effect(P, Brwrgn(mut, res.region, r.name, res.path, elem), effects)
            self.intro(r, elem)
            return RefT(r, mut, elem), P, G, effects
        if op == "rc_clone":
            need("Rc", RcT)
            self.need_read(P, res)
            return res.ty, P, G, effects
        if op == "rc_get_mut":
            elem = need("Rc", RcT)
            self.need_write(P, res, final=False)
            r = regions[0]
            P = self.effect(P, Brwrgn(MUT, res.region, r.name, res.path + (Deref(),), elem), effects)
            self.intro(r, elem)
            return NamedT("Option", (RefT(r, MUT, elem),)), P, G, effects
        if op in ("refcell_borrow", "refcell_borrow_mut"):
            elem = need("RefCell", RefCellT)
            self.need_read(P, res)
            r = regions[0]
            guard = "shared" if op == "refcell_borrow" else "exclusive"
            P = self.effect(P, Brwrgn(IMM, res.region, r.name, res.path + (Deref(),), elem, guard), effects)
            self.intro(r, elem)
            return RefT(r, IMM if guard == "shared" else MUT, elem), P, G, effects
        raise OxideError("E-UNKNOWN-PRIM", f"unknown primitive {op}")


def check_level(p: SourceProgram):
    need = max(expr_level(p.body), defs_level(p.defs))
    if need > p.level:
        raise OxideError("E-LEVEL-VIOLATION",
                         f"program uses level-{need} constructs but declares #level {p.level}",
                         p.body.span)


def check_expr(defs, P, G, e, level: int, debug: bool = False) -> TypedResult:
    checker = Checker(defs, level, debug)
    ty, P2, _, effects = checker.expr(P, dict(G), e)
    return TypedResult(ty, tuple(effects), P2, [], checker.region_types)


def check_program(p: SourceProgram, debug: bool = False, watch=None) -> TypedResult:
    check_level(p)
    checker = Checker(p.defs, p.level, debug)
    checker.watch = watch
    trace: list = []
    ty, P, _, effects = checker.expr(EMPTY_CTX, {}, p.body, trace)
    if len(P):
        raise OxideError("E-UNDROPPED-REGIONS",
                         f"regions still live at end of program: {render_ctx(P)}",
                         p.body.span, P.to_json())
    return TypedResult(ty, tuple(effects), P, trace, checker.region_types, checker.watched_env)


def explain_trace(r: TypedResult) -> str:
    if not r.trace:
        return f"Ρ = {render_ctx(r.ctx_after)}"
    return "\n".join(f"Ρ = {render_ctx(P)}" for _, P in r.trace)


def trace_json(r: TypedResult) -> list:
    return [P.to_json() for _, P in r.trace]
