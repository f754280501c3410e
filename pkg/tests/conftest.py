import numpy as np
import pytest
from hypothesis import settings

from mfbose.model import build_lattice, build_observable, potential_preset

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def lattice1():
    return build_lattice(1, 1)


@pytest.fixture
def lattice2():
    return build_lattice(1, 2)


@pytest.fixture
def weak(lattice1):
    return potential_preset({"preset": "constant", "scale": 0.5}, lattice1)


@pytest.fixture
def cos_mode(lattice1):
    return build_observable({"preset": "cos-mode", "k": [1]}, lattice1)


def random_hermitian(n, rng):
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (z + z.conj().T)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[1:])):
        passed, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}  {detail}")
