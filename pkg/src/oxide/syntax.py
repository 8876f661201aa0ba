"""Abstract syntax shared by every phase: regions, fractions, types, places, expressions."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union


class OxideError(Exception):
    """A diagnostic raised by any phase.  ``code`` is stable (E-..., D-...)."""

    def __init__(self, code: str, message: str, span: Optional["Span"] = None, region_ctx=None):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message
        self.span = span
        self.region_ctx = region_ctx

    def render(self, filename: str = "<input>") -> str:
        if self.span is None or self.span.line == 0:
            return f"{filename}: {self.code}: {self.message}"
        return f"{filename}:{self.span.line}:{self.span.col}: {self.code}: {self.message}"

    def to_json(self) -> dict:
        span = None
        if self.span is not None:
            span = {"offset": self.span.offset, "line": self.span.line, "col": self.span.col}
        return {"code": self.code, "span": span, "message": self.message, "region_ctx": self.region_ctx}


@dataclass(frozen=True)
class Span:
    offset: int
    line: int
    col: int


NO_SPAN = Span(0, 0, 0)


# -- regions -----------------------------------------------------------------

_uid_counter = itertools.count(1)
_uid_lock = threading.Lock()


@dataclass(frozen=True)
class RegionName:
    """A region written ``'r``.  Equality and hashing use the surface name only."""

    name: str
    uid: int = field(default=0, compare=False)

    def __str__(self) -> str:
        return "'" + self.name


def fresh_region(hint: str) -> RegionName:
    with _uid_lock:
        uid = next(_uid_counter)
    return RegionName(hint, uid)


# -- fractions ---------------------------------------------------------------

@dataclass(frozen=True, order=False)
class Fraction:
    """Dyadic rational ``numerator / 2**log2_denominator`` in [0, 1], kept normalized."""

    numerator: int
    log2_denominator: int = 0

    def __post_init__(self):
        n, k = self.numerator, self.log2_denominator
        if n < 0 or k < 0:
            raise ValueError("negative fraction component")
        if n == 0:
            k = 0
        while k > 0 and n % 2 == 0:
            n //= 2
            k -= 1
        if n > (1 << k):
            raise ValueError(f"fraction {n}/2^{k} exceeds 1")
        object.__setattr__(self, "numerator", n)
        object.__setattr__(self, "log2_denominator", k)

    @property
    def is_zero(self) -> bool:
        return self.numerator == 0

    @property
    def is_whole(self) -> bool:
        return self.numerator == 1 and self.log2_denominator == 0

    def _scaled(self, k: int) -> int:
        return self.numerator << (k - self.log2_denominator)

    def __lt__(self, other: "Fraction") -> bool:
        k = max(self.log2_denominator, other.log2_denominator)
        return self._scaled(k) < other._scaled(k)

    def __le__(self, other: "Fraction") -> bool:
        return self == other or self < other

    def __str__(self) -> str:
        if self.log2_denominator == 0:
            return str(self.numerator)
        return f"{self.numerator}/{1 << self.log2_denominator}"

    def to_json(self) -> dict:
        return {"num": self.numerator, "log2den": self.log2_denominator}


ZERO = Fraction(0)
ONE = Fraction(1)


def frac_halve(f: Fraction) -> Fraction:
    if f.is_zero:
        raise ValueError("cannot halve a zero capability")
    return Fraction(f.numerator, f.log2_denominator + 1)


def frac_merge(f1: Fraction, f2: Fraction) -> Fraction:
    k = max(f1.log2_denominator, f2.log2_denominator)
    total = f1._scaled(k) + f2._scaled(k)
    if total > (1 << k):
        raise ValueError(f"capability over-return: {f1} + {f2} > 1")
    return Fraction(total, k)


def frac_sum(fs) -> tuple[int, int]:
    """Exact sum of fractions as (numerator, log2 denominator); may exceed 1."""
    fs = list(fs)
    k = max((f.log2_denominator for f in fs), default=0)
    return sum(f._scaled(k) for f in fs), k


# -- mutability, paths, places ----------------------------------------------

class Mutability(Enum):
    IMM = "imm"
    MUT = "mut"

    def __str__(self) -> str:
        return self.value


IMM = Mutability.IMM
MUT = Mutability.MUT


@dataclass(frozen=True)
class TupleIndex:
    index: int

    def __str__(self):
        return f".{self.index}"


@dataclass(frozen=True)
class Field:
    name: str

    def __str__(self):
        return f".{self.name}"


@dataclass(frozen=True)
class ArrayIndex:
    index: int

    def __str__(self):
        return f"[{self.index}]"


@dataclass(frozen=True)
class Deref:
    def __str__(self):
        return ".*"


PathComponent = Union[TupleIndex, Field, ArrayIndex, Deref]
Path = tuple  # tuple[PathComponent, ...]


def path_str(path: Path) -> str:
    return "".join(str(c) for c in path)


@dataclass(frozen=True)
class Place:
    root: str
    path: Path = ()

    def __str__(self) -> str:
        return self.root + path_str(self.path)


# -- types -------------------------------------------------------------------

@dataclass(frozen=True)
class Base:
    name: str  # u32 | bool | unit

    def __str__(self):
        return self.name


U32 = Base("u32")
BOOL = Base("bool")
UNIT = Base("unit")


@dataclass(frozen=True)
class TupleT:
    items: tuple

    def __str__(self):
        if len(self.items) == 1:
            return f"({self.items[0]},)"
        return "(" + ", ".join(map(str, self.items)) + ")"


@dataclass(frozen=True)
class ArrayT:
    elem: "TypeExpr"
    length: int

    def __str__(self):
        return f"[{self.elem}; {self.length}]"


@dataclass(frozen=True)
class NamedT:
    name: str
    args: tuple = ()

    def __str__(self):
        if not self.args:
            return self.name
        return f"{self.name}<{', '.join(map(str, self.args))}>"


@dataclass(frozen=True)
class RefT:
    region: RegionName
    mut: Mutability
    ty: "TypeExpr"

    def __str__(self):
        m = "mut " if self.mut is MUT else ""
        return f"&{self.region} {m}{self.ty}"


@dataclass(frozen=True)
class VecT:
    elem: "TypeExpr"

    def __str__(self):
        return f"Vec<{self.elem}>"


@dataclass(frozen=True)
class RcT:
    elem: "TypeExpr"

    def __str__(self):
        return f"Rc<{self.elem}>"


@dataclass(frozen=True)
class RefCellT:
    elem: "TypeExpr"

    def __str__(self):
        return f"RefCell<{self.elem}>"


@dataclass(frozen=True)
class TypeVar:
    name: str

    def __str__(self):
        return self.name


TypeExpr = Union[Base, TupleT, ArrayT, NamedT, RefT, VecT, RcT, RefCellT, TypeVar]


def type_children(t) -> tuple:
    match t:
        case TupleT(items):
            return items
        case ArrayT(elem, _) | VecT(elem) | RcT(elem) | RefCellT(elem):
            return (elem,)
        case NamedT(_, args):
            return args
        case RefT(_, _, ty):
            return (ty,)
    return ()


def type_regions(t) -> set:
    out = set()
    stack = [t]
    while stack:
        t = stack.pop()
        if isinstance(t, RefT):
            out.add(t.region.name)
        stack.extend(type_children(t))
    return out


def subst_type(t, env: dict):
    match t:
        case TypeVar(name):
            return env.get(name, t)
        case Base():
            return t
        case TupleT(items):
            return TupleT(tuple(subst_type(i, env) for i in items))
        case ArrayT(elem, n):
            return ArrayT(subst_type(elem, env), n)
        case NamedT(name, args):
            return NamedT(name, tuple(subst_type(a, env) for a in args))
        case RefT(r, m, ty):
            return RefT(r, m, subst_type(ty, env))
        case VecT(elem):
            return VecT(subst_type(elem, env))
        case RcT(elem):
            return RcT(subst_type(elem, env))
        case RefCellT(elem):
            return RefCellT(subst_type(elem, env))
    raise TypeError(t)


def erase_regions(t):
    """Replace every region in ``t`` with a placeholder (shape comparison)."""
    match t:
        case RefT(_, m, ty):
            return RefT(RegionName("_"), m, erase_regions(ty))
        case TupleT(items):
            return TupleT(tuple(erase_regions(i) for i in items))
        case ArrayT(elem, n):
            return ArrayT(erase_regions(elem), n)
        case NamedT(name, args):
            return NamedT(name, tuple(erase_regions(a) for a in args))
        case VecT(elem):
            return VecT(erase_regions(elem))
        case RcT(elem):
            return RcT(erase_regions(elem))
        case RefCellT(elem):
            return RefCellT(erase_regions(elem))
    return t


# -- definitions -------------------------------------------------------------

@dataclass(frozen=True)
class StructDef:
    name: str
    params: tuple
    fields: tuple  # ((name, type), ...)


@dataclass(frozen=True)
class EnumDef:
    name: str
    params: tuple
    variants: tuple  # ((name, (type, ...)), ...)

    def variant(self, name: str):
        for v, tys in self.variants:
            if v == name:
                return tys
        return None


OPTION = EnumDef("Option", ("T",), (("None", ()), ("Some", (TypeVar("T"),))))


@dataclass(frozen=True)
class Defs:
    structs: tuple = ()
    enums: tuple = ()

    def struct(self, name: str) -> Optional[StructDef]:
        for s in self.structs:
            if s.name == name:
                return s
        return None

    def enum(self, name: str) -> Optional[EnumDef]:
        if name == "Option":
            return OPTION
        for e in self.enums:
            if e.name == name:
                return e
        return None


# -- expressions -------------------------------------------------------------

def _span():
    return field(default=NO_SPAN, compare=False, repr=False)


@dataclass(frozen=True)
class Alloc:
    region: RegionName
    expr: "Expr"
    span: Span = _span()


@dataclass(frozen=True)
class Copy:
    region: RegionName
    place: Place
    span: Span = _span()


@dataclass(frozen=True)
class Borrow:
    region: RegionName
    mut: Mutability
    place: Place
    span: Span = _span()


@dataclass(frozen=True)
class Drop:
    region: RegionName
    span: Span = _span()


@dataclass(frozen=True)
class Let:
    var: str
    bound: "Expr"
    body: "Expr"
    span: Span = _span()


@dataclass(frozen=True)
class Assign:
    place: Place
    expr: "Expr"
    span: Span = _span()


@dataclass(frozen=True)
class Seq:
    first: "Expr"
    second: "Expr"
    span: Span = _span()


@dataclass(frozen=True)
class If:
    cond: "Expr"
    then: "Expr"
    orelse: "Expr"
    span: Span = _span()


@dataclass(frozen=True)
class Arm:
    variant: str
    bindings: tuple  # ((RegionName, var), ...)
    body: "Expr"


@dataclass(frozen=True)
class Match:
    place: Place
    arms: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Lit:
    value: Union[int, bool, None]  # None is unit
    span: Span = _span()


@dataclass(frozen=True)
class TupleE:
    items: tuple
    span: Span = _span()


@dataclass(frozen=True)
class ArrayE:
    items: tuple
    span: Span = _span()


@dataclass(frozen=True)
class StructE:
    name: str
    targs: tuple
    fields: tuple  # ((name, Expr), ...)
    span: Span = _span()


@dataclass(frozen=True)
class EnumE:
    name: str
    targs: tuple
    variant: str
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class PlaceE:
    """A read of a copyable place; only legal as a primitive operand or ``if`` condition."""

    place: Place
    span: Span = _span()


@dataclass(frozen=True)
class RegionArg:
    region: RegionName
    span: Span = _span()


@dataclass(frozen=True)
class MutArg:
    mut: Mutability
    span: Span = _span()


@dataclass(frozen=True)
class Prim:
    op: str
    targs: tuple
    args: tuple
    span: Span = _span()


@dataclass(frozen=True)
class Hole:
    """The ``[]`` of a context template."""

    span: Span = _span()


Expr = Union[Alloc, Copy, Borrow, Drop, Let, Assign, Seq, If, Match, Lit, TupleE, ArrayE,
             StructE, EnumE, PlaceE, Prim, Hole]


ARITH_PRIMS = {"add", "sub", "mul", "eq", "lt"}
PRIM_LEVEL = {
    **{p: 0 for p in ARITH_PRIMS},
    "vec_new": 1, "vec_push": 1, "vec_pop": 1, "vec_len": 1, "vec_idx_borrow": 1,
    "rc_new": 2, "rc_clone": 2, "rc_get_mut": 2,
    "refcell_new": 3, "refcell_borrow": 3, "refcell_borrow_mut": 3,
}
LEVELS = (0, 1, 2, 3)


def children(e) -> tuple:
    match e:
        case Alloc(_, inner):
            return (inner,)
        case Let(_, bound, body):
            return (bound, body)
        case Assign(_, inner):
            return (inner,)
        case Seq(a, b):
            return (a, b)
        case If(c, t, f):
            return (c, t, f)
        case Match(_, arms):
            return tuple(a.body for a in arms)
        case TupleE(items) | ArrayE(items):
            return items
        case StructE(_, _, fields):
            return tuple(v for _, v in fields)
        case EnumE(_, _, _, args) | Prim(_, _, args):
            return args
    return ()


def walk(e):
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def type_level(t) -> int:
    lvl = {VecT: 1, RcT: 2, RefCellT: 3}.get(type(t), 0)
    return max([lvl] + [type_level(c) for c in type_children(t)])


def expr_level(e) -> int:
    """Lowest level whose constructs cover every node of ``e``."""
    lvl = 0
    for node in walk(e):
        if isinstance(node, Prim):
            lvl = max(lvl, PRIM_LEVEL.get(node.op, 0))
        if isinstance(node, (Prim, StructE, EnumE)):
            for t in node.targs:
                lvl = max(lvl, type_level(t))
    return lvl


def defs_level(defs: Defs) -> int:
    lvl = 0
    for s in defs.structs:
        for _, t in s.fields:
            lvl = max(lvl, type_level(t))
    for en in defs.enums:
        for _, tys in en.variants:
            for t in tys:
                lvl = max(lvl, type_level(t))
    return lvl


def level_admits(level: int, e) -> bool:
    return expr_level(e) <= level
