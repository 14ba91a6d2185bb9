from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_spd(rng: np.random.Generator, p: int, rank: int | None = None) -> np.ndarray:
    rank = p if rank is None else rank
    f = rng.standard_normal((p, rank))
    m = f @ f.T
    if rank == p:
        m += 0.5 * np.eye(p)
    return 0.5 * (m + m.T)


def random_weights(rng: np.random.Generator, p: int) -> np.ndarray:
    w = rng.uniform(-0.5, 1.5, p)
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return w


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240517)


_ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one summary line per acceptance criterion; printed after the run."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_LINES, [])

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
