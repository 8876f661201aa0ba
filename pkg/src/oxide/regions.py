"""The static region context and the effects that transform it."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Union

from .syntax import (
    IMM, ONE, ZERO, Fraction, Mutability, OxideError, TupleIndex, TupleT,
    frac_halve, frac_merge, frac_sum, path_str, type_regions,
)


@dataclass(frozen=True)
class RegionEntry:
    ty: object
    frac: Fraction
    meta: tuple = ()  # () or ((source region name, path),)
    guard: Optional[str] = None  # "shared" / "exclusive" for RefCell guards

    @property
    def source(self) -> Optional[str]:
        return self.meta[0][0] if self.meta else None


class RegionCtx:
    """Persistent map from region name to :class:`RegionEntry`."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Optional[dict] = None):
        self._entries = dict(entries or {})

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __getitem__(self, name: str) -> RegionEntry:
        return self._entries[name]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(sorted(self._entries))

    def __eq__(self, other) -> bool:
        return isinstance(other, RegionCtx) and self._entries == other._entries

    def __repr__(self) -> str:
        return f"RegionCtx({render_ctx(self)})"

    def items(self):
        return [(k, self._entries[k]) for k in sorted(self._entries)]

    def get(self, name: str) -> Optional[RegionEntry]:
        return self._entries.get(name)

    def set(self, name: str, entry: RegionEntry) -> "RegionCtx":
        d = dict(self._entries)
        d[name] = entry
        return RegionCtx(d)

    def remove(self, name: str) -> "RegionCtx":
        d = dict(self._entries)
        del d[name]
        return RegionCtx(d)

    def fractions(self) -> dict:
        return {k: e.frac for k, e in self._entries.items()}

    def to_json(self) -> dict:
        out = {}
        for name, e in self.items():
            out["'" + name] = {
                "ty": str(e.ty),
                "frac": e.frac.to_json(),
                "meta": [["'" + src, path_str(p)] for src, p in e.meta],
            }
            if e.guard:
                out["'" + name]["guard"] = e.guard
        return out


EMPTY_CTX = RegionCtx()


# -- effects -----------------------------------------------------------------

@dataclass(frozen=True)
class Newrgn:
    region: str
    ty: object
    frac: Fraction = ONE
    meta: tuple = ()

    def __str__(self):
        return f"newrgn('{self.region}, {self.ty}, {self.frac}, {_meta_str(self.meta)})"


@dataclass(frozen=True)
class Brwrgn:
    mut: Mutability
    src: str
    dst: str
    path: tuple = ()
    ty: object = None
    guard: Optional[str] = None

    def __str__(self):
        return f"brwrgn({self.mut}, '{self.src}, '{self.dst})"


@dataclass(frozen=True)
class Delrgn:
    region: str

    def __str__(self):
        return f"delrgn('{self.region})"


@dataclass(frozen=True)
class Updatergn:
    dst: str
    path: tuple
    ty: object

    def __str__(self):
        return f"updatergn('{self.dst}, {path_str(self.path) or 'ε'}, {self.ty})"


Effect = Union[Newrgn, Brwrgn, Delrgn, Updatergn]


def _meta_str(meta) -> str:
    if not meta:
        return "∅"
    return "{" + ", ".join(f"'{s}{path_str(p)}" for s, p in meta) + "}"


def _need(P: RegionCtx, name: str) -> RegionEntry:
    e = P.get(name)
    if e is None:
        raise OxideError("E-UNBOUND-REGION", f"region '{name} is not live")
    return e


def can_write(entry: RegionEntry) -> bool:
    return entry.frac.is_whole or entry.guard == "exclusive"


def _replace_at(ty, path, new):
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(head, TupleIndex) and isinstance(ty, TupleT):
        items = list(ty.items)
        items[head.index] = _replace_at(items[head.index], rest, new)
        return TupleT(tuple(items))
    # non-tuple components are only updated with an identical type
    return ty


def apply_effect(P: RegionCtx, eff: Effect) -> RegionCtx:
    match eff:
        case Newrgn(r, ty, frac, meta):
            if r in P:
                raise OxideError("E-DUP-REGION", f"region '{r} is already live")
            if len(meta) > 1:
                raise OxideError("E-DUP-REGION", f"region '{r} would alias more than one source")
            return P.set(r, RegionEntry(ty, frac, tuple(meta)))
        case Brwrgn(mut, src, dst, path, ty, guard):
            if dst in P:
                raise OxideError("E-DUP-REGION", f"region '{dst} is already live")
            s = _need(P, src)
            meta = ((src, tuple(path)),)
            if guard is not None or mut is IMM:
                if s.frac.is_zero:
                    raise OxideError("E-INSUFFICIENT-CAP",
                                     f"cannot borrow from '{src}: it holds no capability")
                half = frac_halve(s.frac)
                P = P.set(src, replace(s, frac=half))
                return P.set(dst, RegionEntry(ty, half, meta, guard))
            if not s.frac.is_whole:
                raise OxideError("E-CAP-NOT-WHOLE",
                                 f"mutable borrow from '{src} needs capability 1, has {s.frac}")
            P = P.set(src, replace(s, frac=ZERO))
            return P.set(dst, RegionEntry(ty, ONE, meta))
        case Delrgn(r):
            e = _need(P, r)
            for other, oe in P.items():
                if oe.source == r:
                    raise OxideError("E-CAP-NOT-WHOLE",
                                     f"cannot drop '{r}: alias '{other} is still live")
            for other, oe in P.items():
                if other != r and r in type_regions(oe.ty):
                    raise OxideError("E-REGION-IN-USE",
                                     f"cannot drop '{r}: region '{other} holds a reference to it")
            if not e.meta:
                if not e.frac.is_whole:
                    raise OxideError("E-CAP-NOT-WHOLE",
                                     f"dropping '{r} needs capability 1, has {e.frac}")
                return P.remove(r)
            src = e.source
            s = _need(P, src)
            P = P.remove(r)
            return P.set(src, replace(s, frac=frac_merge(s.frac, e.frac)))
        case Updatergn(dst, path, ty):
            d = _need(P, dst)
            if not can_write(d):
                raise OxideError("E-CAP-NOT-WHOLE",
                                 f"assignment into '{dst} needs capability 1, has {d.frac}")
            return P.set(dst, replace(d, ty=_replace_at(d.ty, path, ty)))
    raise TypeError(f"not an effect: {eff!r}")


def apply_effects(P: RegionCtx, effects) -> RegionCtx:
    for eff in effects:
        P = apply_effect(P, eff)
    return P


def root_of(P, name: str) -> Optional[str]:
    """Follow alias metadata from ``name`` to its root; None if the chain dangles."""
    seen = set()
    while True:
        e = P.get(name)
        if e is None or name in seen:
            return None
        seen.add(name)
        if not e.meta:
            return name
        name = e.source


def conservation_check(P: RegionCtx) -> list[str]:
    violations = []
    groups: dict[str, list] = {}
    for name, e in P.items():
        if e.meta and e.source not in P:
            violations.append(f"dangling: '{name} aliases absent '{e.source}")
            continue
        for mentioned in sorted(type_regions(e.ty)):
            if mentioned not in P:
                violations.append(f"dangling: type of '{name} mentions absent '{mentioned}")
        root = root_of(P, name)
        if root is not None:
            groups.setdefault(root, []).append(e.frac)
    for root, fracs in sorted(groups.items()):
        num, k = frac_sum(fracs)
        if num != (1 << k):
            violations.append(f"conservation: capabilities rooted at '{root} sum to {num}/{1 << k}, not 1")
    return violations


def render_entry(e: RegionEntry) -> str:
    return f"({e.ty}, {e.frac}, {_meta_str(e.meta)})"


def render_ctx(P: RegionCtx) -> str:
    if not len(P):
        return "{}"
    return "{ " + ", ".join(f"'{n} ↦ {render_entry(e)}" for n, e in P.items()) + " }"
