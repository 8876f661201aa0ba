import json

import pytest

from oxide.harness import (
    DISTINGUISHED, ILL_TYPED, INDISTINGUISHED, ContextFile, WitnessTriple, distinguish,
    load_suite, plug, run_suite,
)
from oxide.interp import run
from oxide.syntax import OxideError

from conftest import CORPUS

CTX = CORPUS / "contexts"
UNIT_CTX = "#level 0\n#hole unit\n[]; ()"


def ctx(name):
    return ContextFile.load(CTX / f"{name}.oxctx")


def test_trivial_plug():
    p = plug(ContextFile.parse(UNIT_CTX), "()")
    assert run(p).outcome.detail == "()"


def test_worked_example_body_plugs_into_unit_hole():
    body = (CORPUS / "accepted" / "l0_worked_example.ox").read_text().split("#level 0", 1)[1]
    p = plug(ContextFile.parse(UNIT_CTX), "{" + body + "}")
    assert run(p, strict=True).violations == []


def test_level_violation_surfaces_as_plug_error():
    c = ContextFile.parse("#level 0\n#hole unit\n[]")
    with pytest.raises(OxideError) as info:
        plug(c, "{ let v = alloc 'v vec_new<u32>(); vec_push(v, 1); drop 'v }")
    assert info.value.code == "E-PLUG-ILLTYPED"
    assert "E-LEVEL-VIOLATION" in info.value.message


def test_hole_type_and_environment_are_enforced():
    c = ctx("l1_read_u32")
    with pytest.raises(OxideError) as info:
        plug(c, "borrow 'h mut x")
    assert info.value.code == "E-PLUG-ILLTYPED"
    bad_env = ContextFile.parse(
        "#level 0\n#hole &'h u32\n#env x: bool @ 'x\nlet x = alloc 'x 1;\nlet h = [];\ndrop 'h; drop 'x; 0")
    with pytest.raises(OxideError, match="hole environment"):
        plug(bad_env, "borrow 'h imm x")


def test_context_needs_exactly_one_hole():
    with pytest.raises(OxideError):
        ContextFile.parse("#level 0\n#hole unit\n[]; []")
    with pytest.raises(OxideError):
        ContextFile.parse("#hole unit\n[]")


@pytest.mark.parametrize("name", ["l1_read_u32", "l1_vec_inspect", "l2_rc_alias", "l3_refcell_alias"])
def test_reflexivity(name):
    assert distinguish(ctx(name), "borrow 'h imm x", "borrow 'h imm x").verdict == INDISTINGUISHED


@pytest.mark.parametrize("name", ["l1_read_u32", "l2_rc_alias", "l3_refcell_alias"])
def test_symmetry(name):
    a = distinguish(ctx(name), "borrow 'h imm x", "borrow 'h imm y")
    b = distinguish(ctx(name), "borrow 'h imm y", "borrow 'h imm x")
    assert a.verdict == b.verdict


def test_direct_observation():
    one = "{ let a = alloc 'a 1; let c = copy 'c a; drop 'a; if eq(c, 1) { drop 'c; 1 } else { drop 'c; 0 } }"
    two = one.replace("1", "2")
    assert distinguish(ctx("l0_observe_value"), one, two).verdict == DISTINGUISHED
    assert distinguish(ctx("l0_discard_value"), one, two).verdict == INDISTINGUISHED


def test_ill_typed_plug_is_reported():
    v = distinguish(ctx("l0_observe_value"), "true", "1")
    assert v.verdict == ILL_TYPED and "E-PLUG-ILLTYPED" in v.error


def test_shipped_suite_passes():
    report = run_suite(load_suite([CORPUS / "witnesses"]))
    assert report.ok, report.table()
    ids = [t.id for t in report.triples]
    assert ids == sorted(ids)
    assert {"l1_to_l2_rc_alias", "l2_to_l3_refcell_alias"} <= set(ids)


def test_fuel_relative_verdicts():
    t = WitnessTriple.load(CORPUS / "witnesses" / "l1_to_l2_rc_alias.json")
    report = run_suite([t], fuel=5)
    assert report.triples[0].high.verdict == INDISTINGUISHED
    assert not report.ok


def test_offending_low_context_is_named():
    t = WitnessTriple.load(CORPUS / "witnesses" / "l1_to_l2_rc_alias.json")
    t.low_contexts.append(ContextFile.parse(
        (CTX / "l2_rc_alias.oxctx").read_text().replace("#level 2", "#level 1"), "sneaky"))
    report = run_suite([t])
    assert not report.ok
    assert "sneaky" in report.triples[0].offending


def test_distinguishing_low_context_is_offending():
    t = WitnessTriple.load(CORPUS / "witnesses" / "l1_to_l2_rc_alias.json")
    text = (CTX / "l1_read_u32.oxctx").read_text().replace("let y = alloc 'y 5", "let y = alloc 'y 6")
    t.low_contexts.append(ContextFile.parse(text, "unequal_contents"))
    report = run_suite([t])
    assert report.triples[0].offending == ["unequal_contents"]


def test_empty_suite_is_vacuous_pass():
    report = run_suite([])
    assert report.ok and report.warnings


def test_report_is_deterministic_json():
    a = run_suite(load_suite([CORPUS / "witnesses"])).dumps()
    b = run_suite(load_suite([CORPUS / "witnesses"])).dumps()
    assert a == b and json.loads(a)["verdict"] == "PASS"
