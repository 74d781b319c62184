from pathlib import Path

import numpy as np
import pytest

from hidalgo.neighbors import build_adjacency, build_knn_graph, compute_mu
from hidalgo.synth import ManifoldSpec, multi_manifold

FIXTURES = Path(__file__).parent / "fixtures"


def two_manifold_specs(D=12, n=1000):
    offset = np.zeros(D)
    offset[1] = 10.0
    return [
        ManifoldSpec("line", n, 1, D, None, 1.0, True, 1),
        ManifoldSpec("gaussian", n, 6, D, tuple(offset), 1.0, True, 2),
    ]


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def two_manifold():
    data, labels = multi_manifold(two_manifold_specs())
    graph = build_knn_graph(data, 3)
    return data, labels, compute_mu(graph), build_adjacency(graph, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def record(criterion, ok, detail):
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
