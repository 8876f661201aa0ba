from pathlib import Path

import pytest

from oxide.parser import parse

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"
ACCEPTED = sorted((CORPUS / "accepted").glob("*.ox"))
REJECTED = sorted((CORPUS / "rejected").glob("*.ox"))


def expectation(path: Path) -> str:
    first = path.read_text().splitlines()[0]
    assert first.startswith("// expect:"), path
    return first.split(":", 1)[1].strip()


def load(path: Path):
    return parse(path.read_text())


@pytest.fixture
def worked_example():
    return load(CORPUS / "accepted" / "l0_worked_example.ox")


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
