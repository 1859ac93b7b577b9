import numpy as np
import pytest

from radelft.core import ArrayGeometry, PolarGrid, WaveformConfig
from radelft.pipeline import ProcessingConfig


@pytest.fixture(scope="session")
def desk_cfg():
    return WaveformConfig.desk()


@pytest.fixture(scope="session")
def cascade():
    return ArrayGeometry.cascade()


@pytest.fixture(scope="session")
def desk_proc():
    return ProcessingConfig()


@pytest.fixture(scope="session")
def desk_grid(desk_cfg, desk_proc):
    return desk_proc.grid(desk_cfg)


@pytest.fixture
def small_grid():
    return PolarGrid.from_fft(range_step=0.5, n_range=20, doppler_step=0.1, n_doppler=8,
                              n_az=16, az_fft=18, n_el=4, el_fft=12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """``record(n, name, ok, detail)`` logs one pass/fail line and asserts ``ok``."""
    def _record(n, name, ok, detail=""):
        line = f"criterion {n:>2} {name:<34} {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line
    return _record
