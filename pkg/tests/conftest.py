import numpy as np
import pytest

from mfpmp.measures import EmpiricalMeasure, uniform_measure


def random_measure(rng, n, d, uniform=True, scale=1.0):
    pts = scale * rng.normal(size=(n, d))
    if uniform:
        return uniform_measure(pts)
    return EmpiricalMeasure(pts, rng.uniform(0.2, 1.0, size=n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")
