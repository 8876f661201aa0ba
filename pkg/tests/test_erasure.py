import pytest

from oxide.erasure import PRef, canonical, correspondence, erase, run_erased
from oxide.interp import Const, run
from oxide.parser import parse
from oxide.syntax import TupleIndex

from conftest import ACCEPTED, CORPUS, load


@pytest.mark.parametrize("path", ACCEPTED, ids=lambda p: p.name)
def test_correspondence_on_corpus(path):
    rep = correspondence(load(path), name=path.name)
    assert rep.ok, rep.dumps()
    assert rep.instrumented_steps == rep.erased_steps
    assert rep.store_violations == []


def test_erased_store_shape(worked_example):
    res = run(worked_example)
    _, c = res.boundaries[1]
    assert canonical(erase(c)) == {0: Const(5)}
    flat = run_erased(worked_example)
    assert flat.outcome == res.outcome


def test_erased_references_are_paths():
    p = parse("#level 0\nlet t = alloc 't (1, 2);\nlet r = borrow 'r imm t.1;\n"
              "let c = copy 'c r;\ndrop 'r; drop 't;\nif eq(c, 2) { drop 'c; 1 } else { drop 'c; 0 }")
    flat = run_erased(p)
    _, c = flat.boundaries[2]
    assert c.env["r"] == PRef(0, (TupleIndex(1),))
    assert flat.outcome.detail == "1"


def test_skipping_halving_is_caught_by_store_checks_not_outcomes():
    """Ghost state has no runtime effect: breaking it changes no outcome, only the invariants."""
    caught = 0
    for path in ACCEPTED:
        rep = correspondence(load(path), skip_halving=True)
        assert rep.instrumented == rep.erased
        assert rep.state_mismatches == []
        caught += bool(rep.store_violations)
    assert caught >= 10


def test_fuel_is_comparable():
    p = load(CORPUS / "accepted" / "l2_rc_scenario.ox")
    assert run_erased(p, fuel=7).steps == run(p, fuel=7).steps == 7
    rep = correspondence(p, fuel=7)
    assert rep.instrumented.kind == rep.erased.kind == "fuel"
