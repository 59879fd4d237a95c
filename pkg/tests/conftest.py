import logging

import numpy as np
import pytest
from hypothesis import settings as hsettings

from slitflow import make_slits

hsettings.register_profile("default", max_examples=40, deadline=None)
hsettings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_logs(caplog):
    caplog.set_level(logging.ERROR, logger="slitflow")


@pytest.fixture
def one_slit():
    return make_slits((1.2, 1.8, 0.4))


@pytest.fixture
def centered_slit():
    return make_slits((-0.5, 0.5, 1.0))


@pytest.fixture
def three_slits():
    return make_slits((-0.5, 0.5, 1.0), (1.2, 1.8, 0.4), (-2.0, -1.0, 0.7))


def sqrt_map(z, t, xi=0.0):
    """Closed-form g_t for the half-plane with constant driver and adot = 2."""
    w = np.sqrt((z - xi) ** 2 + 4.0 * t)
    # the branch with positive imaginary part maps H onto H
    return xi + np.where(w.imag < 0, -w, w)


ACCEPTANCE = []


def report(n, title, ok, detail):
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append((n, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
