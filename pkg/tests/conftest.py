import numpy as np
import pytest

from spinbond.forward import SpinBondState
from spinbond.graphs import builtin_graph, uniform_kernel


@pytest.fixture(scope="session")
def p3():
    g = builtin_graph("path", 3)
    return g, uniform_kernel(g)


@pytest.fixture(scope="session")
def k2():
    g = builtin_graph("complete", 2)
    return g, uniform_kernel(g)


@pytest.fixture(scope="session")
def c6():
    g = builtin_graph("cycle", 6)
    return g, uniform_kernel(g)


@pytest.fixture(scope="session")
def grid22():
    g = builtin_graph("grid_torus", 2, 2)
    return g, uniform_kernel(g)


def striped_state(g) -> SpinBondState:
    """Mixed deterministic configuration: signs alternate with the index."""
    sites = np.array([1 if x % 2 == 0 else -1 for x in range(g.vertex_count)], dtype=np.int8)
    edges = np.array([1 if e % 2 == 0 else -1 for e in range(g.edge_count)], dtype=np.int8)
    return SpinBondState(sites, edges)
