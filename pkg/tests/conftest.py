import numpy as np
import pytest

from msfm.data import make_rng


@pytest.fixture
def rng():
    return make_rng(12345)


def gaussian_sampler(dim, scale=1.0, shift=0.0):
    def sample(r, n):
        return shift + scale * r.standard_normal((n, dim))
    return sample


N_CRITERIA = 13


@pytest.fixture(scope="session")
def criterion(request):
    """``criterion(n, ok, detail)`` records one acceptance line and asserts ``ok``."""
    lines = request.config._msfm_criteria = getattr(request.config, "_msfm_criteria", {})

    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_msfm_criteria", None)
    if lines is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(lines.get(n, f"criterion {n:2d}: NOT RUN (error or deselected)"))
