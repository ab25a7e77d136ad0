import math

import numpy as np
import pytest

from warplab import build_grid, equator_configuration, poles_case1, poles_case2

LEVELS = [1, 2, 4, 8, 16]

# criterion number -> (passed, message); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def configs():
    return {"converging": poles_case1(), "dense": poles_case2(), "equator": equator_configuration()}


@pytest.fixture(scope="session")
def level_grids(configs):
    """Quadrature grid per (case, level), refined at that level's poles."""
    return {(name, j): build_grid(32, cfg, 12, [j]) for name, cfg in configs.items() for j in LEVELS}


@pytest.fixture(scope="session")
def unit_grid():
    return build_grid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {k:2d}: {msg}")


TWO_PI = 2 * math.pi
