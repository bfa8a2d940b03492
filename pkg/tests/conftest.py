import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_generic_z(rng, n, lo=0.3, hi=2.5):
    """Random activities kept away from both critical boundaries."""
    from dartrhombus.spectral import classify_phase

    out = []
    while len(out) < n:
        z = tuple(rng.uniform(lo, hi, 3))
        r = classify_phase(z)
        if min(abs(r.onsager_gap), abs(r.kasteleyn_gap)) > 0.15:
            out.append(z)
    return out


ACCEPTANCE_LINES: dict[int, str] = {}


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
