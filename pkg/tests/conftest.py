import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cachecast.features import build_dataset
from cachecast.trace import SynthConfig, generate_synthetic

settings.register_profile("cachecast", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cachecast")

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_line(request):
    """Record one PASS/FAIL summary line; all lines are echoed after the run."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_records():
    cfg = SynthConfig(num_blocks=12, num_events=3000, num_windows=40, period_windows=8,
                      phase_blocks=4, seed=3)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def small_dataset(small_records):
    return build_dataset(small_records, 1_000_000, 40, horizon=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
