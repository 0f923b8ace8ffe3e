import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bsde_qmle.drivers import builtin_driver
from bsde_qmle.sde_sim import ObservationRecord


def random_linear_record(rng, n_blocks, c, h, d_y=1, d_theta=1, d_x=1):
    """Random record plus a linear driver with an x-dependent regressor."""
    n = n_blocks * c
    x = rng.normal(size=(n + 1, d_x))
    y = np.cumsum(rng.normal(scale=np.sqrt(h), size=(n + 1, d_y)), axis=0)
    mix = rng.normal(size=(d_y, d_theta, d_x))
    base = rng.normal(size=(d_y, d_theta))

    def regressor(xx, yy, zz):
        xx = np.asarray(xx, dtype=float)
        return base + np.einsum("ptx,...x->...pt", mix, xx)

    driver = builtin_driver("linear", {"regressor": regressor, "d_x": d_x, "d_y": d_y,
                                       "d_theta": d_theta, "depends_on_y": False, "reads_z": False})
    return ObservationRecord(n=n, h=h, x_path=x, y_path=y), driver


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: exit criteria with pass/fail report lines")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
