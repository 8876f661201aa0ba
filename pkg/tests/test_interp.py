import json

import pytest

from oxide.interp import (
    UNIT_V, Config, Const, Outcome, RcCell, RcV, RefCellV, RefV, RegionRec, ValE, check_store,
    initial_config, run, step,
)
from oxide.parser import parse
from oxide.syntax import Fraction
from oxide.typeck import check_program

from conftest import ACCEPTED, CORPUS, expectation, load


@pytest.mark.parametrize("path", ACCEPTED, ids=lambda p: p.name)
def test_corpus_outcomes_and_store_invariants(path):
    res = run(load(path), strict=True)
    assert str(res.outcome) == expectation(path)
    assert res.violations == []
    if res.outcome.kind == "value":
        assert res.final.sigma == {}
        # only heap cells still reachable from the result may survive
        assert all(r.origin == "heap" for r in res.final.rho.values())
        assert bool(res.final.rho) == ("Rc(" in res.outcome.detail)


def test_worked_example_runs_to_unit(worked_example):
    res = run(worked_example, strict=True)
    assert res.outcome == Outcome("value", "()")
    assert res.steps <= 20


def test_runtime_fractions_follow_checker(worked_example):
    res = run(worked_example, strict=True)
    fracs = [{k: str(r.frac) for k, r in c.rho.items() if r.named} for _, c in res.boundaries]
    assert fracs == [{"x": "1"}, {"x": "1/2", "y": "1/2"}, {"x": "1"}, {}]


def test_fuel():
    p = load(CORPUS / "accepted" / "l0_worked_example.ox")
    assert run(p, fuel=0).outcome.kind == "fuel"
    assert run(p, fuel=5).outcome.kind == "fuel"
    assert run(p, fuel=5).steps == 5


def test_rc_counts_through_scenario():
    p = load(CORPUS / "accepted" / "l2_rc_scenario.ox")
    res = run(p, strict=True)
    counts = []
    for _, c in res.boundaries:
        cells = [r.val.count for r in c.rho.values() if isinstance(r.val, RcCell)]
        counts.append(cells[0] if cells else 0)
    assert counts[:8] == [1, 2, 2, 2, 2, 2, 1, 1]
    assert res.outcome == Outcome("value", "true")


def test_refcell_state_is_released_by_guard_drop():
    p = parse("#level 3\nlet c = alloc 'c refcell_new(1);\nlet g = refcell_borrow_mut('g, c);\n"
              "drop 'g;\nlet h = refcell_borrow('h, c);\ndrop 'h;\ndrop 'c")
    res = run(p, strict=True)
    states = [next((r.val.state for r in c.rho.values() if isinstance(r.val, RefCellV)), None)
              for _, c in res.boundaries]
    assert states == [0, -1, 0, 1, 0, None]


@pytest.mark.parametrize("text,code", [
    ("#level 1\nlet v = alloc 'v vec_new<u32>();\nvec_push(v, 1);\n"
     "let e = vec_idx_borrow('e, imm, v, 1);\ndrop 'e; drop 'v", "D-INDEX-OOB"),
    ("#level 1\nlet v = alloc 'v vec_new<u32>();\nlet x = alloc 'x vec_pop(v);\ndrop 'x; drop 'v",
     "D-POP-EMPTY"),
    ("#level 0\nsub(1, 2)", "D-SUB-UNDERFLOW"),
    ("#level 3\nlet c = alloc 'c refcell_new(5);\nlet g = refcell_borrow_mut('g, c);\n"
     "let h = refcell_borrow_mut('h, c);\ndrop 'h; drop 'g; drop 'c", "D-REFCELL-VIOLATION"),
])
def test_dynamic_errors(text, code):
    assert run(parse(text)).outcome == Outcome("error", code)


def test_arithmetic_wraps():
    assert run(parse("#level 0\nmul(65536, 65536)")).outcome.detail == "0"
    assert run(parse("#level 0\nadd(4294967295, 1)")).outcome.detail == "0"


def test_check_store_detects_damage(worked_example):
    typed = check_program(worked_example)
    c = initial_config(worked_example)
    for _ in range(6):
        c = step(c, typed.region_types)
    assert check_store(c) == []
    rho = dict(c.rho)
    rho.pop("x")
    broken = Config(c.sigma, rho, c.expr, c.defs, c.counter)
    assert any(v.startswith("dangling") for v in check_store(broken))


def test_runs_are_deterministic():
    for path in ACCEPTED:
        a = run(load(path), trace=True)
        b = run(load(path), trace=True)
        assert a.trace == b.trace and a.outcome == b.outcome


def test_trace_lines_are_json(worked_example):
    lines = run(worked_example, trace=True).trace
    assert [json.loads(x)["step"] for x in lines] == list(range(1, len(lines) + 1))
    assert set(json.loads(lines[0])) == {"step", "redex_span", "sigma", "rho"}


def _config(rho, sigma=None):
    return Config(sigma or {}, rho, ValE(UNIT_V))


def test_check_store_conservation_violation():
    c = _config({"x": RegionRec(Const(1), Fraction(1, 1), named=True)})
    assert any(v.startswith("conservation") for v in check_store(c))


def test_check_store_alias_outliving_source():
    c = _config({"y": RegionRec(RefV("x"), Fraction(1, 1), (("x", ()),), "ghost", named=True)})
    assert any(v.startswith("dangling") for v in check_store(c))


def test_check_store_rc_count_mismatch():
    rho = {"@rc1": RegionRec(RcCell(2, "@rc1.*"), origin="heap"),
           "@rc1.*": RegionRec(Const(1), origin="heap", parent="@rc1"),
           "a": RegionRec(RcV("@rc1"), named=True)}
    assert any(v.startswith("rc:") for v in check_store(_config(rho, {"a": "a"})))
