from fractions import Fraction as Q

import pytest
from hypothesis import given, strategies as st

from oxide.parser import parse_expr, parse_type
from oxide.syntax import (
    ONE, ZERO, Fraction, OxideError, erase_regions, expr_level, frac_halve, frac_merge,
    frac_sum, fresh_region, level_admits, type_level, type_regions,
)


def q(f: Fraction) -> Q:
    return Q(f.numerator, 2 ** f.log2_denominator)


dyadic = st.integers(0, 12).flatmap(
    lambda k: st.integers(0, 2 ** k).map(lambda n: Fraction(n, k)))


@given(dyadic.filter(lambda f: not f.is_zero))
def test_halving_splits_exactly(f):
    h = frac_halve(f)
    assert q(h) * 2 == q(f)
    assert frac_merge(h, h) == f


@given(dyadic, dyadic)
def test_merge_is_rational_addition(a, b):
    if q(a) + q(b) > 1:
        with pytest.raises(ValueError):
            frac_merge(a, b)
    else:
        assert q(frac_merge(a, b)) == q(a) + q(b)


@given(st.lists(dyadic, max_size=6))
def test_sum_matches_rationals(fs):
    num, k = frac_sum(fs)
    assert Q(num, 2 ** k) == sum((q(f) for f in fs), Q(0))


def test_normal_form():
    assert Fraction(2, 2) == Fraction(1, 1)
    assert Fraction(4, 2) == ONE
    assert str(Fraction(1, 1)) == "1/2"
    assert str(ZERO) == "0" and str(ONE) == "1"
    with pytest.raises(ValueError):
        Fraction(3, 1)


def test_fresh_regions_are_distinct():
    uids = [fresh_region("r").uid for _ in range(50)]
    assert len(set(uids)) == 50


def test_type_helpers():
    t = parse_type("(&'a u32, Vec<&'b mut bool>)")
    assert type_regions(t) == {"a", "b"}
    assert type_regions(erase_regions(t)) == {"_"}
    assert erase_regions(t) == erase_regions(parse_type("(&'c u32, Vec<&'d mut bool>)"))
    assert type_level(t) == 1
    assert type_level(parse_type("Rc<RefCell<u32>>")) == 3


@pytest.mark.parametrize("text,level", [
    ("add(1, 2)", 0),
    ("vec_new<u32>()", 1),
    ("rc_new(1)", 2),
    ("refcell_new(1)", 3),
    ("(1, rc_new(vec_new<u32>()))", 2),
])
def test_expr_level(text, level):
    e = parse_expr(text)
    assert expr_level(e) == level
    assert not level_admits(level - 1, e) if level else True


@given(st.sampled_from(["1", "vec_new<u32>()", "rc_new(1)", "refcell_new(2)"]), st.integers(0, 3))
def test_levels_are_monotone(text, n):
    e = parse_expr(text)
    if level_admits(n, e):
        assert all(level_admits(m, e) for m in range(n, 4))


def test_error_rendering():
    err = OxideError("E-PARSE", "boom")
    assert err.render("f.ox") == "f.ox: E-PARSE: boom"
    assert err.to_json()["code"] == "E-PARSE"


def test_halving_zero_is_refused():
    with pytest.raises(ValueError):
        frac_halve(ZERO)
