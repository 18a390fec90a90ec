import numpy as np
import pytest

from branchcoal.trees import PlanarTree


@pytest.fixture
def rng(request):
    # one stream per test, stable across runs
    return np.random.default_rng(sum(map(ord, request.node.name)) * 7919 + 11)


@pytest.fixture
def four_vertex_tree():
    # root with two children, the first of which has one child
    return PlanarTree.from_nested([[[]], []])


@pytest.fixture
def sibling_tree():
    """Tree whose first generation-4 vertex has sibling pairs (0,2), (1,1), (1,2), (2,1) up the spine."""
    return PlanarTree.from_nested(
        [[[], []], [[[], []]], [[[]], [[], [[], [], []], []], [], []], []])
