import numpy as np
import pytest

from ns_steer.nse import SimConfig

# (number, title, passed, detail) rows filled by the acceptance module
CRITERIA: list[tuple[int, str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(CRITERIA):
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cfg():
    return SimConfig(nu=1.0, galerkin_radius=2, dt=1e-3, horizon=1.0, sobolev_k=3.0)


@pytest.fixture(scope="session")
def table(cfg):
    return cfg.table()
