import math

import numpy as np
import pytest

from msrb.mesh import build_grid, nest

DOMAIN = (-math.pi, math.pi)


@pytest.fixture
def grid1d():
    return build_grid(1, DOMAIN, 16)


def cfmap(coarse, fine, dim=1):
    return nest(build_grid(dim, DOMAIN, coarse), fine // coarse)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, passed, detail):
    """Store and print an acceptance outcome; the caller asserts ``passed``."""
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}", flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:2d}: {'PASS' if passed else 'FAIL'} - {detail}")
