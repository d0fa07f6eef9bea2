import numpy as np
import pytest

from exterior_nls import field as fld
from exterior_nls.geometry import ball, build_grid, ellipsoid


@pytest.fixture(scope="session")
def disc():
    return build_grid(ball(1.0), 4.0, 1 / 8)


@pytest.fixture(scope="session")
def fine_disc():
    return build_grid(ball(1.0), 4.0, 1 / 16)


@pytest.fixture(scope="session")
def ellipse():
    return build_grid(ellipsoid(1.25, 1.0), 4.0, 1 / 8)


@pytest.fixture(scope="session")
def ball3():
    return build_grid(ball(1.0, dim=3), 2.5, 1 / 8)


@pytest.fixture
def odd_bump(disc):
    u = fld.gaussian_bump(disc, (2.0, 1.5), 0.5, 1.0, momentum=(0.5, -1.0))
    return fld.symmetrize(u, fld.SymmetryClass.full(2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture(scope="session")
def record_criterion():
    """Store one PASS/FAIL line per acceptance criterion for the summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA.setdefault(number, []).append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        for line in _CRITERIA[number]:
            terminalreporter.write_line(line)
