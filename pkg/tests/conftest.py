import warnings

import numpy as np
import pytest

from dglab._backend import available_backends
from dglab.space import WeightedGraphSpace, grid_graph, path_graph


@pytest.fixture(params=available_backends())
def backend(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def p5():
    return path_graph(5)


@pytest.fixture(scope="session")
def grid8():
    return grid_graph(8, 8)


def random_connected_graph(n, rng, density=None):
    """Random spanning tree plus extra edges, random weights and lengths."""
    edges = {(int(rng.integers(v)), v) for v in range(1, n)}
    extra = [(a, b) for a in range(n) for b in range(a + 1, n) if (a, b) not in edges]
    if extra:
        k = int(rng.integers(0, len(extra) + 1)) if density is None else int(density * len(extra))
        for i in rng.permutation(len(extra))[:k]:
            edges.add(extra[i])
    return WeightedGraphSpace(range(n), rng.uniform(0.5, 2.0, n),
                              [(a, b, float(rng.uniform(0.5, 2.0))) for a, b in sorted(edges)])


@pytest.fixture(autouse=True)
def _quiet_alpha0_warnings():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="alpha0 = ")
        yield


ACCEPTANCE = []


def record_criterion(n, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE.append((n, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
