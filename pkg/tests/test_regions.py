import pytest
from hypothesis import given, strategies as st

from oxide.regions import (
    EMPTY_CTX, Brwrgn, Delrgn, Newrgn, RegionEntry, Updatergn, apply_effect, apply_effects,
    conservation_check, render_ctx,
)
from oxide.syntax import IMM, MUT, ONE, U32, BOOL, Fraction, OxideError


def test_worked_example_effects():
    P = apply_effect(EMPTY_CTX, Newrgn("x", U32))
    assert render_ctx(P) == "{ 'x ↦ (u32, 1, ∅) }"
    P = apply_effect(P, Brwrgn(IMM, "x", "y", (), U32))
    assert render_ctx(P) == "{ 'x ↦ (u32, 1/2, ∅), 'y ↦ (u32, 1/2, {'x}) }"
    P = apply_effect(P, Delrgn("y"))
    assert render_ctx(P) == "{ 'x ↦ (u32, 1, ∅) }"
    assert render_ctx(apply_effect(P, Delrgn("x"))) == "{}"


@pytest.mark.parametrize("effects,code", [
    ([Newrgn("x", U32), Newrgn("x", U32)], "E-DUP-REGION"),
    ([Delrgn("x")], "E-UNBOUND-REGION"),
    ([Newrgn("x", U32), Brwrgn(MUT, "x", "m", (), U32), Brwrgn(IMM, "x", "s", (), U32)],
     "E-INSUFFICIENT-CAP"),
    ([Newrgn("x", U32), Brwrgn(IMM, "x", "s", (), U32), Brwrgn(MUT, "x", "m", (), U32)],
     "E-CAP-NOT-WHOLE"),
    ([Newrgn("x", U32), Brwrgn(IMM, "x", "s", (), U32), Delrgn("x")], "E-CAP-NOT-WHOLE"),
    ([Newrgn("x", U32), Brwrgn(IMM, "x", "s", (), U32), Updatergn("x", (), U32)], "E-CAP-NOT-WHOLE"),
])
def test_effect_errors(effects, code):
    with pytest.raises(OxideError) as info:
        apply_effects(EMPTY_CTX, effects)
    assert info.value.code == code


def test_update_changes_type_only_with_whole_capability():
    P = apply_effects(EMPTY_CTX, [Newrgn("x", U32), Updatergn("x", (), BOOL)])
    assert P["x"] == RegionEntry(BOOL, ONE)


def test_conservation_flags_leaks():
    P = EMPTY_CTX.set("x", RegionEntry(U32, Fraction(1, 1)))
    assert conservation_check(P)
    P = P.set("y", RegionEntry(U32, Fraction(1, 1), (("x", ()),)))
    assert conservation_check(P) == []


# Random well-formed effect sequences: borrow from any live region or drop a leaf alias.
ops = st.lists(st.tuples(st.sampled_from(["imm", "mut", "drop"]), st.integers(0, 7)), max_size=25)


@given(ops)
def test_effects_preserve_conservation(script):
    P = apply_effect(EMPTY_CTX, Newrgn("r0", U32))
    n = 1
    for op, pick in script:
        names = [k for k, _ in P.items()]
        target = names[pick % len(names)]
        try:
            if op == "drop":
                P = apply_effect(P, Delrgn(target))
            else:
                P = apply_effect(P, Brwrgn(IMM if op == "imm" else MUT, target, f"r{n}", (), U32))
                n += 1
        except OxideError:
            continue
        assert conservation_check(P) == []
        if not len(P):
            break
