import numpy as np
import pytest

from confdim.brownian import quotient_metric, sample_excursion, sample_quadrangulation, sample_snake
from confdim.filling import build_filling
from confdim.metric import build_nets, normalize_diameter


def snake_space(n, seed):
    X = sample_excursion(n, seed=seed)
    Z = sample_snake(X, seed=seed + 1000)
    return normalize_diameter(quotient_metric(X, Z))[0]


def snake_filling(n=600, seed=0, alpha=0.125, n_max=4):
    sp = snake_space(n, seed)
    return build_filling(sp, build_nets(sp, alpha, n_max, "mass", seed=seed))


@pytest.fixture(scope="session")
def small_filling():
    return snake_filling(600, 0)


@pytest.fixture(scope="session")
def quad200():
    return sample_quadrangulation(200, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[dict]()
N_CRITERIA = 12


@pytest.fixture(scope="session")
def criterion(request):
    """Record the verdict of an acceptance criterion; printed in the terminal summary."""
    table = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(k, ok, detail=""):
        table[k] = (bool(ok), detail)
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    table = config.stash.get(ACCEPTANCE, {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        if k not in table:
            terminalreporter.write_line(f"criterion {k:2d}: NOT RUN")
            continue
        ok, detail = table[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
