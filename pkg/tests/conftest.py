import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from circuit_sharp import Circuit, ParamSet, leaf_node, product_node, sum_node


@pytest.fixture
def indicator_mixture():
    """Root sum over an x=1 indicator and an x=0 indicator, theta=(0.5, 0.5)."""
    nodes = [leaf_node(0, "bern", [1.0]), leaf_node(0, "bern", [0.0]), sum_node(0, 1)]
    circuit = Circuit.build(nodes, 2)
    return circuit, ParamSet.uniform(circuit)


@pytest.fixture
def twin_indicator_mixture():
    """Root sum over two identical x=1 indicators: both fire at x=1."""
    nodes = [leaf_node(0, "bern", [1.0]), leaf_node(0, "bern", [1.0]), sum_node(0, 1)]
    circuit = Circuit.build(nodes, 2)
    return circuit, ParamSet.uniform(circuit)


@pytest.fixture
def product_of_sums():
    """Root product of two sum nodes over different variables."""
    nodes = [
        leaf_node(0, "bern", [0.3]),
        leaf_node(0, "bern", [0.8]),
        leaf_node(1, "bern", [0.6]),
        leaf_node(1, "bern", [0.2]),
        sum_node(0, 1),
        sum_node(2, 3),
        product_node(4, 5),
    ]
    circuit = Circuit.build(nodes, 6)
    return circuit, ParamSet.uniform(circuit)


@pytest.fixture
def path_chain():
    """Sum -> product -> sum -> leaves chain exposing nested (path) edge pairs."""
    nodes = [
        leaf_node(0, "bern", [0.4]),
        leaf_node(0, "bern", [0.9]),
        sum_node(0, 1),  # 2: inner sum
        leaf_node(1, "bern", [0.7]),
        product_node(2, 3),  # 4
        leaf_node(0, "bern", [0.2]),
        leaf_node(1, "bern", [0.5]),
        product_node(5, 6),  # 7
        sum_node(4, 7),  # 8: root
    ]
    circuit = Circuit.build(nodes, 8)
    return circuit, ParamSet.uniform(circuit)


def all_ones(n, width=1):
    return np.ones((n, width))
