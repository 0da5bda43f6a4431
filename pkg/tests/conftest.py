import numpy as np
import pytest

from nlielab.energy import KernelSet, PotentialSet, zero_potential
from nlielab.graph_model import BaseMeasure, Graph, SpatialGrid, lebesgue_measure


@pytest.fixture
def two_nodes():
    """
    Base measure with two nodes at x = 0 and x = 1 (bounded grid on [-0.5, 1.5), unit cells).
    """
    def make(density=1.0):
        grid = SpatialGrid(1, ((-0.5, 1.5),), (2,), periodic=False)
        return BaseMeasure(grid, np.full(2, float(density)))
    return make


@pytest.fixture
def two_node_graph(two_nodes):
    """
    Single edge 0 -> 1 with weight eta.
    """
    def make(density=1.0, eta=1.0):
        return Graph.from_edges(two_nodes(density), [(0, 1)], [eta])
    return make


@pytest.fixture
def torus():
    def make(cells, bounds=(0.0, 1.0)):
        return lebesgue_measure(SpatialGrid(1, (bounds,), (cells,), periodic=True))
    return make


@pytest.fixture
def single():
    """
    KernelSet and PotentialSet of one species.
    """
    def make(kernel, potential=None):
        return KernelSet.single(kernel), PotentialSet([potential or zero_potential()])
    return make

