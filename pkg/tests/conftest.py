import time

import pytest
from hypothesis import settings

settings.register_profile("lab", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("lab")


@pytest.fixture(scope="session")
def halfspace96():
    """The 96^3 box-40 half-space extremal (m=2, n=3, sigma=0.5), solved once."""
    from mazya_lab.halfspace import solve_halfspace
    t0 = time.perf_counter()
    sol = solve_halfspace(2, 3, 0.5, box=40.0, resolution=96, ratio=1.08)
    sol.solve_seconds = time.perf_counter() - t0
    return sol


@pytest.fixture(scope="session")
def halfspace_small():
    from mazya_lab.halfspace import solve_halfspace
    return solve_halfspace(2, 3, 0.5, box=20.0, resolution=24, ratio=1.15)


_VERDICTS = []


@pytest.fixture(scope="session")
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def record(number, title, ok, detail):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
