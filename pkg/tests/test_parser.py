import pytest
from hypothesis import given, strategies as st

from oxide.parser import parse, parse_expr, pretty, pretty_expr
from oxide.syntax import Alloc, Borrow, Drop, Hole, IMM, Let, OxideError, Seq

from conftest import ACCEPTED, REJECTED, expectation, load

PARSEABLE = ACCEPTED + [p for p in REJECTED if expectation(p) != "E-UNKNOWN-PRIM"]


@pytest.mark.parametrize("path", PARSEABLE, ids=lambda p: p.name)
def test_round_trip(path):
    p = load(path)
    assert parse(pretty(p)) == p
    assert pretty(parse(pretty(p))) == pretty(p)


def test_worked_example_shape(worked_example):
    body = worked_example.body
    assert worked_example.level == 0
    assert isinstance(body, Let) and isinstance(body.bound, Alloc)
    inner = body.body
    assert isinstance(inner.bound, Borrow) and inner.bound.mut is IMM
    assert isinstance(inner.body, Seq) and isinstance(inner.body.first, Drop)


@pytest.mark.parametrize("text,code", [
    ("let x = alloc 'x 1; drop 'x", "E-NO-LEVEL"),
    ("#level 7\n()", "E-PARSE"),
    ("#level 0\nlet = 1", "E-PARSE"),
    ("#level 0\nfoo(1)", "E-UNKNOWN-PRIM"),
    ("#level 0\n1 $ 2", "E-PARSE"),
    ("#level 0\nlet x = alloc 'x 1; x", "E-PARSE"),
])
def test_parse_errors(text, code):
    with pytest.raises(OxideError) as info:
        parse(text)
    assert info.value.code == code


def test_spans_point_at_source():
    with pytest.raises(OxideError) as info:
        parse("#level 0\n\n  let = 1")
    assert (info.value.span.line, info.value.span.col) == (3, 7)


def test_hole_only_when_allowed():
    assert isinstance(parse_expr("[]", allow_hole=True), Hole)
    assert not isinstance(parse_expr("[]"), Hole)


def test_nullary_arms_without_parens():
    p = parse("#level 0\nlet o = alloc 'o Option<u32>::None;\n"
              "let r = alloc 'r match o { None => { 0 }, Some('v n) => { drop 'v; 1 } };\n"
              "drop 'r; drop 'o")
    assert "None => " in pretty(p)


atoms = st.one_of(st.integers(0, 2 ** 32 - 1).map(str), st.sampled_from(["true", "false", "()"]))


def compound(inner):
    return st.one_of(
        st.tuples(st.sampled_from(["add", "sub", "mul", "eq", "lt"]), inner, inner).map(
            lambda t: f"{t[0]}({t[1]}, {t[2]})"),
        st.lists(inner, min_size=2, max_size=3).map(lambda xs: "(" + ", ".join(xs) + ")"),
        inner.map(lambda x: f"({x},)"),
        st.lists(inner, min_size=1, max_size=3).map(lambda xs: "[" + ", ".join(xs) + "]"),
        st.tuples(inner, inner, inner).map(lambda t: f"if {t[0]} {{ {t[1]} }} else {{ {t[2]} }}"),
        inner.map(lambda x: f"{{ let v = alloc 'v {x}; drop 'v; {x} }}"),
        inner.map(lambda x: f"{{ let v = alloc 'v {x}; borrow 'w imm v }}"),
        inner.map(lambda x: f"Option<u32>::Some({x})"),
    )


exprs = st.recursive(atoms, compound, max_leaves=12)


@given(exprs)
def test_pretty_parse_identity_on_generated_terms(text):
    e = parse_expr(text)
    assert parse_expr(pretty_expr(e)) == e
