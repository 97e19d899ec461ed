import numpy as np
import pytest

from oran_pcl.traffic import GeneratorConfig, generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset():
    return generate_synthetic_dataset(GeneratorConfig(n_enb=1, cells_per_enb=2, days=7, seed=3))


@pytest.fixture(scope="session")
def periodic_dataset():
    return generate_synthetic_dataset(GeneratorConfig(n_enb=1, cells_per_enb=2, days=10, seed=5, sigma=0.0, weekend_dip=0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(criterion: str, ok: bool, detail: str) -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
