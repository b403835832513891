import numpy as np
import pytest

from crglab.harness.suites import linear_case, random_case


def rel_err(a: float, b: float, floor: float = 1e-9) -> float:
    """|a - b| relative to the larger magnitude, with an absolute floor."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def close(a: float, b: float, rtol: float, floor: float = 1e-9) -> bool:
    return abs(a - b) <= max(rtol * max(abs(a), abs(b)), floor)


@pytest.fixture
def rcase():
    return random_case(3)


@pytest.fixture
def lcase():
    return linear_case(5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
