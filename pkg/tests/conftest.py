import functools

import pytest

from holderlab.geometry import build_mesh, disk, l_shape, unit_square

ACCEPTANCE = {}


def record(number, ok, detail):
    """Remember one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[number] = (bool(ok), detail)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@functools.lru_cache(maxsize=None)
def square_mesh(h):
    return build_mesh(unit_square(), h)


@functools.lru_cache(maxsize=None)
def disk_mesh(h):
    return build_mesh(disk(), h)


@pytest.fixture(scope="session")
def square():
    return unit_square()


@pytest.fixture(scope="session")
def lshape():
    return l_shape()
