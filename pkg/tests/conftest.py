"""Shared, session-cached solves and the acceptance summary printer."""

import warnings

import numpy as np
import pytest

from mcfarrival.domain import GridSpec, ShapeSpec, build_domain
from mcfarrival.fields import ScalarField
from mcfarrival.solver import EpsilonLadder, epsilon_continuation

DEEP_LADDER = EpsilonLadder((0.2, 0.1, 0.05, 0.02, 0.01, 0.005))

_CACHE = {}
ACCEPTANCE = {}


def _solve(key, shape, cells, mode=None, ladder=None):
    if key not in _CACHE:
        d = build_domain(shape, GridSpec.around(shape, cells, mode=mode))
        lad = ladder or EpsilonLadder.default_for(d.grid)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            _CACHE[key] = (d, epsilon_continuation(d, lad))
    return _CACHE[key]


def exact_disk(domain):
    return ScalarField.from_function(domain, lambda p: (1 - np.sum(p * p, -1)) / 2)


def exact_ball3(domain):
    return ScalarField.from_function(domain, lambda p: (1 - np.sum(p * p, -1)) / 4)


@pytest.fixture(scope="session")
def disk65():
    return _solve("disk65", ShapeSpec.ball(1.0, 2), 65)


@pytest.fixture(scope="session")
def disk129():
    return _solve("disk129", ShapeSpec.ball(1.0, 2), 129)


@pytest.fixture(scope="session")
def disk129_deep():
    return _solve("disk129d", ShapeSpec.ball(1.0, 2), 129, ladder=DEEP_LADDER)


@pytest.fixture(scope="session")
def ball129_deep():
    return _solve("ball129d", ShapeSpec.ball(1.0, 3), 129, "axisymmetric", DEEP_LADDER)


@pytest.fixture(scope="session")
def ball65():
    return _solve("ball65", ShapeSpec.ball(1.0, 3), 65, "axisymmetric")


@pytest.fixture(scope="session")
def torus129():
    return _solve("torus129", ShapeSpec.torus(1.0, 0.3), 129, "axisymmetric")


@pytest.fixture(scope="session")
def solve_cached():
    return _solve


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {detail}")
