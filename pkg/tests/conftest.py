import numpy as np
import pytest

from vscomplete.corpus import CodeEntry, ValueSet


def make_set(oid, codes, title="Asthma Disorders", publisher="P", vs_type="Condition/Clinical", description=""):
    entries = [c if isinstance(c, CodeEntry) else CodeEntry(*c) if isinstance(c, tuple) else CodeEntry(c, "SNOMED-CT", f"d{c}")
               for c in codes]
    return ValueSet(oid=oid, title=title, publisher=publisher, description=description, vs_type=vs_type, codes=entries)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed in the terminal summary so the
# verdicts survive pytest's output capture
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
