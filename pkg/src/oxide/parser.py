"""Surface syntax: a hand-written recursive-descent parser and the matching printer."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .syntax import (
    BOOL, IMM, MUT, PRIM_LEVEL, U32, UNIT, Alloc, Arm, ArrayE, ArrayIndex, ArrayT, Borrow,
    Copy, Defs, Deref, Drop, EnumDef, EnumE, Field, Hole, If, Let, Lit, Match, MutArg,
    NamedT, OxideError, Place, PlaceE, Prim, RcT, RefCellT, RefT, RegionArg, Seq, Span,
    StructDef, StructE, TupleE, TupleIndex, TupleT, TypeVar, VecT, Assign, fresh_region,
)


@dataclass(frozen=True)
class SourceProgram:
    defs: Defs
    body: object
    level: int


KEYWORDS = {"alloc", "copy", "borrow", "drop", "let", "if", "else", "match", "imm", "mut",
            "true", "false", "struct", "enum", "u32", "bool", "unit", "Vec", "Rc", "RefCell"}

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r\n]+|//[^\n]*)
  | (?P<level>\#level)
  | (?P<region>'[A-Za-z_][A-Za-z0-9_]*)
  | (?P<int>[0-9]+)
  | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|=>|::|\.\*|\[\]|[{}()\[\]<>,;:=.&])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    span: Span


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise OxideError("E-PARSE", f"unexpected character {text[pos]!r}",
                             Span(pos, line, pos - line_start + 1))
        kind = m.lastgroup
        lexeme = m.group()
        if kind != "ws":
            tokens.append(Token(kind, lexeme, Span(pos, line, pos - line_start + 1)))
        for i, ch in enumerate(lexeme):
            if ch == "\n":
                line += 1
                line_start = pos + i + 1
        pos = m.end()
    tokens.append(Token("eof", "", Span(pos, line, pos - line_start + 1)))
    return tokens


class Parser:
    def __init__(self, text: str, defs: Defs | None = None, allow_hole: bool = False):
        self.toks = tokenize(text)
        self.i = 0
        self.defs = defs or Defs()
        self.allow_hole = allow_hole

    # -- token helpers --

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text: str) -> bool:
        t = self.tok
        return t.text == text and t.kind in ("op", "id", "level")

    def error(self, message: str, code: str = "E-PARSE"):
        raise OxideError(code, message, self.tok.span)

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def expect_kind(self, kind: str) -> Token:
        if self.tok.kind != kind:
            self.error(f"expected {kind}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def ident(self) -> str:
        t = self.expect_kind("id")
        if t.text in KEYWORDS:
            raise OxideError("E-PARSE", f"keyword {t.text!r} used as identifier", t.span)
        return t.text

    def region(self):
        return fresh_region(self.expect_kind("region").text[1:])

    def comma_list(self, close: str, item):
        out = []
        while not self.at(close):
            out.append(item())
            if not self.at(close):
                self.expect(",")
        self.expect(close)
        return out

    # -- program --

    def program(self) -> SourceProgram:
        if not self.at("#level"):
            self.error("missing '#level n' header", "E-NO-LEVEL")
        self.advance()
        level_tok = self.expect_kind("int")
        level = int(level_tok.text)
        if level not in (0, 1, 2, 3):
            raise OxideError("E-PARSE", f"unknown level {level}", level_tok.span)
        structs, enums = [], []
        while self.at("struct") or self.at("enum"):
            d = self.definition()
            if self.defs.struct(d.name) or self.defs.enum(d.name):
                raise OxideError("E-PARSE", f"duplicate definition {d.name}")
            if isinstance(d, StructDef):
                structs.append(d)
            else:
                enums.append(d)
            self.defs = Defs(tuple(structs), tuple(enums))
        body = self.seq()
        self.expect_kind("eof")
        return SourceProgram(self.defs, body, level)

    def definition(self):
        kw = self.advance().text
        name = self.ident()
        params = ()
        if self.at("<"):
            self.advance()
            params = tuple(self.comma_list(">", self.ident))
        self.expect("{")
        if kw == "struct":
            def fld():
                f = self.ident()
                self.expect(":")
                return (f, self.type_(params))
            fields = tuple(self.comma_list("}", fld))
            names = [f for f, _ in fields]
            if len(set(names)) != len(names):
                self.error(f"duplicate field in struct {name}")
            return StructDef(name, params, fields)

        def variant():
            v = self.ident()
            tys = ()
            if self.at("("):
                self.advance()
                tys = tuple(self.comma_list(")", lambda: self.type_(params)))
            return (v, tys)
        variants = tuple(self.comma_list("}", variant))
        names = [v for v, _ in variants]
        if len(set(names)) != len(names):
            self.error(f"duplicate variant in enum {name}")
        return EnumDef(name, params, variants)

    # -- types --

    def type_(self, params=()):
        t = self.tok
        if t.text in ("u32", "bool", "unit"):
            self.advance()
            return {"u32": U32, "bool": BOOL, "unit": UNIT}[t.text]
        if self.at("("):
            self.advance()
            items = []
            trailing = False
            while not self.at(")"):
                items.append(self.type_(params))
                trailing = False
                if not self.at(")"):
                    self.expect(",")
                    trailing = True
            self.expect(")")
            if len(items) == 0:
                return UNIT
            if len(items) == 1 and not trailing:
                return items[0]
            return TupleT(tuple(items))
        if self.at("["):
            self.advance()
            elem = self.type_(params)
            self.expect(";")
            n = int(self.expect_kind("int").text)
            self.expect("]")
            return ArrayT(elem, n)
        if self.at("&"):
            self.advance()
            r = self.region()
            mut = IMM
            if self.at("mut"):
                self.advance()
                mut = MUT
            return RefT(r, mut, self.type_(params))
        if t.text in ("Vec", "Rc", "RefCell"):
            self.advance()
            self.expect("<")
            elem = self.type_(params)
            self.expect(">")
            return {"Vec": VecT, "Rc": RcT, "RefCell": RefCellT}[t.text](elem)
        name = self.ident()
        if name in params:
            return TypeVar(name)
        args = ()
        if self.at("<"):
            self.advance()
            args = tuple(self.comma_list(">", lambda: self.type_(params)))
        if not (self.defs.struct(name) or self.defs.enum(name)):
            raise OxideError("E-PARSE", f"unknown type {name}", t.span)
        return NamedT(name, args)

    # -- expressions --

    def seq(self):
        first = self.simple()
        if self.at(";"):
            span = self.advance().span
            return Seq(first, self.seq(), span)
        return first

    def is_ctor_start(self) -> bool:
        t = self.tok
        if t.kind != "id":
            return False
        if self.defs.enum(t.text):
            return self.peek().text in ("::", "<")
        if self.defs.struct(t.text):
            return self.peek().text in ("{", "<")
        return False

    def is_prim_start(self) -> bool:
        return self.tok.kind == "id" and self.tok.text in PRIM_LEVEL and self.peek().text in ("(", "<")

    def simple(self):
        t = self.tok
        span = t.span
        if self.at("let"):
            self.advance()
            var = self.ident()
            self.expect("=")
            bound = self.simple()
            self.expect(";")
            return Let(var, bound, self.seq(), span)
        if self.at("alloc"):
            self.advance()
            r = self.region()
            return Alloc(r, self.simple(), span)
        if self.at("copy"):
            self.advance()
            r = self.region()
            return Copy(r, self.place(), span)
        if self.at("borrow"):
            self.advance()
            r = self.region()
            return Borrow(r, self.mutability(), self.place(), span)
        if self.at("drop"):
            self.advance()
            return Drop(self.region(), span)
        if self.at("if"):
            self.advance()
            cond = self.operand()
            self.expect("{")
            then = self.seq()
            self.expect("}")
            self.expect("else")
            self.expect("{")
            orelse = self.seq()
            self.expect("}")
            return If(cond, then, orelse, span)
        if self.at("match"):
            self.advance()
            place = self.place()
            self.expect("{")
            arms = tuple(self.comma_list("}", self.arm))
            return Match(place, arms, span)
        if self.at("{"):
            self.advance()
            inner = self.seq()
            self.expect("}")
            return inner
        if t.kind == "int":
            self.advance()
            return Lit(int(t.text), span)
        if self.at("true") or self.at("false"):
            self.advance()
            return Lit(t.text == "true", span)
        if self.at("[]"):
            self.advance()
            if self.allow_hole:
                return Hole(span)
            return ArrayE((), span)
        if self.at("("):
            self.advance()
            items = []
            trailing = False
            while not self.at(")"):
                items.append(self.seq())
                trailing = False
                if not self.at(")"):
                    self.expect(",")
                    trailing = True
            self.expect(")")
            if not items:
                return Lit(None, span)
            if len(items) == 1 and not trailing:
                return items[0]
            return TupleE(tuple(items), span)
        if self.at("["):
            self.advance()
            return ArrayE(tuple(self.comma_list("]", self.seq)), span)
        if self.is_prim_start():
            return self.prim()
        if self.is_ctor_start():
            return self.ctor()
        if t.kind == "id" and t.text not in KEYWORDS:
            self.reject_unknown_call()
            place = self.place()
            if not self.at(":="):
                raise OxideError("E-PARSE", f"bare read of {place} is not a value; use copy or borrow", span)
            self.advance()
            return Assign(place, self.simple(), span)
        self.error(f"unexpected {t.text or 'end of input'!r}")

    def reject_unknown_call(self):
        if self.peek().text == "(" and self.tok.text not in PRIM_LEVEL:
            self.error(f"unknown primitive {self.tok.text}", "E-UNKNOWN-PRIM")

    def mutability(self):
        if self.at("imm"):
            self.advance()
            return IMM
        if self.at("mut"):
            self.advance()
            return MUT
        self.error("expected 'imm' or 'mut'")

    def place(self) -> Place:
        root = self.ident()
        path = []
        while True:
            if self.at(".*"):
                self.advance()
                path.append(Deref())
            elif self.at(".") and self.peek().kind == "int":
                self.advance()
                path.append(TupleIndex(int(self.advance().text)))
            elif self.at(".") and self.peek().kind == "id":
                self.advance()
                path.append(Field(self.ident()))
            elif self.at("[") and self.peek().kind == "int" and self.peek(2).text == "]":
                self.advance()
                path.append(ArrayIndex(int(self.advance().text)))
                self.expect("]")
            else:
                return Place(root, tuple(path))

    def arm(self) -> Arm:
        variant = self.ident()
        bindings = ()
        if self.at("("):
            self.advance()

            def binding():
                r = self.region()
                return (r, self.ident())
            bindings = tuple(self.comma_list(")", binding))
        self.expect("=>")
        return Arm(variant, bindings, self.seq())

    def operand(self):
        """Primitive argument or ``if`` condition: a place read, a region, a mutability, or an expr."""
        t = self.tok
        if t.kind == "region":
            return RegionArg(self.region(), t.span)
        if self.at("imm") or self.at("mut"):
            return MutArg(self.mutability(), t.span)
        if (t.kind == "id" and t.text not in KEYWORDS and not self.is_prim_start()
                and not self.is_ctor_start()):
            self.reject_unknown_call()
            return PlaceE(self.place(), t.span)
        return self.simple()

    def type_args(self):
        if self.at("<"):
            self.advance()
            return tuple(self.comma_list(">", self.type_))
        return ()

    def prim(self):
        t = self.advance()
        targs = self.type_args()
        self.expect("(")
        args = tuple(self.comma_list(")", self.operand))
        return Prim(t.text, targs, args, t.span)

    def ctor(self):
        t = self.advance()
        targs = self.type_args()
        if self.defs.struct(t.text):
            self.expect("{")

            def fld():
                f = self.ident()
                self.expect(":")
                return (f, self.seq())
            return StructE(t.text, targs, tuple(self.comma_list("}", fld)), t.span)
        self.expect("::")
        variant = self.ident()
        args = ()
        if self.at("("):
            self.advance()
            args = tuple(self.comma_list(")", self.seq))
        return EnumE(t.text, targs, variant, args, t.span)


def parse(text: str) -> SourceProgram:
    return Parser(text).program()


def parse_expr(text: str, defs: Defs | None = None, allow_hole: bool = False):
    p = Parser(text, defs, allow_hole)
    e = p.seq()
    p.expect_kind("eof")
    return e


def parse_type(text: str, defs: Defs | None = None):
    p = Parser(text, defs)
    t = p.type_()
    p.expect_kind("eof")
    return t


# -- printing ----------------------------------------------------------------

def pretty_type(t) -> str:
    return str(t)


def _defs_text(defs: Defs) -> list[str]:
    lines = []
    for s in defs.structs:
        params = f"<{', '.join(s.params)}>" if s.params else ""
        fields = ", ".join(f"{f}: {t}" for f, t in s.fields)
        lines.append(f"struct {s.name}{params} {{ {fields} }}")
    for en in defs.enums:
        params = f"<{', '.join(en.params)}>" if en.params else ""
        vs = []
        for v, tys in en.variants:
            vs.append(f"{v}({', '.join(map(str, tys))})" if tys else v)
        lines.append(f"enum {en.name}{params} {{ {', '.join(vs)} }}")
    return lines


def _targs(targs) -> str:
    return f"<{', '.join(map(str, targs))}>" if targs else ""


def pretty_expr(e, indent: int = 0) -> str:
    pad = "    " * indent
    match e:
        case Seq(a, b):
            return pretty_expr(a, indent) + ";\n" + pad + pretty_expr(b, indent)
        case Let(var, bound, body):
            return f"let {var} = {_atom(bound, indent)};\n{pad}{pretty_expr(body, indent)}"
        case _:
            return _atom(e, indent)


def _block(e, indent: int) -> str:
    inner = "    " * (indent + 1)
    return "{\n" + inner + pretty_expr(e, indent + 1) + "\n" + "    " * indent + "}"


def _atom(e, indent: int) -> str:
    """Render ``e`` so that it parses back as a single ``simple`` expression."""
    match e:
        case Seq() | Let():
            return _block(e, indent)
        case Alloc(r, inner):
            return f"alloc {r} {_atom(inner, indent)}"
        case Copy(r, place):
            return f"copy {r} {place}"
        case Borrow(r, m, place):
            return f"borrow {r} {m} {place}"
        case Drop(r):
            return f"drop {r}"
        case Assign(place, inner):
            return f"{place} := {_atom(inner, indent)}"
        case If(c, t, f):
            return f"if {_operand(c, indent)} {_block(t, indent)} else {_block(f, indent)}"
        case Match(place, arms):
            inner = "    " * (indent + 1)
            parts = []
            for arm in arms:
                bs = ", ".join(f"{r} {v}" for r, v in arm.bindings)
                head = f"{arm.variant}({bs})" if arm.bindings else arm.variant
                parts.append(f"{inner}{head} => {_block(arm.body, indent + 1)}")
            return f"match {place} {{\n" + ",\n".join(parts) + "\n" + "    " * indent + "}"
        case Lit(v):
            if v is None:
                return "()"
            if isinstance(v, bool):
                return "true" if v else "false"
            return str(v)
        case TupleE(items):
            body = ", ".join(_atom(i, indent) for i in items)
            return f"({body},)" if len(items) == 1 else f"({body})"
        case ArrayE(items):
            return "[" + ", ".join(_atom(i, indent) for i in items) + "]"
        case StructE(name, targs, fields):
            body = ", ".join(f"{f}: {_atom(v, indent)}" for f, v in fields)
            return f"{name}{_targs(targs)} {{ {body} }}"
        case EnumE(name, targs, variant, args):
            return f"{name}{_targs(targs)}::{variant}(" + ", ".join(_atom(a, indent) for a in args) + ")"
        case Prim(op, targs, args):
            return f"{op}{_targs(targs)}(" + ", ".join(_operand(a, indent) for a in args) + ")"
        case Hole():
            return "[]"
        case PlaceE(place):
            return str(place)
    raise TypeError(f"cannot print {e!r}")


def _operand(e, indent: int) -> str:
    match e:
        case PlaceE(place):
            return str(place)
        case RegionArg(r):
            return str(r)
        case MutArg(m):
            return str(m)
    return _atom(e, indent)


def pretty(p: SourceProgram) -> str:
    lines = [f"#level {p.level}"] + _defs_text(p.defs) + [pretty_expr(p.body)]
    return "\n".join(lines) + "\n"
