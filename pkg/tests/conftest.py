import warnings

import numpy as np
import pytest

from qsim import em_fields as ef

# (criterion number, PASS/FAIL, detail) rows filled in by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, str, str]] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append((criterion, "PASS" if ok else "FAIL", detail))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in sorted(ACCEPTANCE_LINES, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {crit:2d}: {status}  {detail}")


@pytest.fixture(autouse=True)
def _quiet_ideal_field():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ef.IdealizedFieldWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
