import numpy as np
import pytest

from gabp import generate_gmrf
from gabp.model import linear_from_arrays


@pytest.fixture
def g3():
    """3-node chain GMRF with coupling 0.4."""
    return generate_gmrf(3, "chain", 0.4, seed=7)


@pytest.fixture
def l2():
    """Two scalar nodes, A = R = W = 1, y = 1."""
    return linear_from_arrays([1.0, 1.0], [(1, 2, [[1.0]], [[1.0]], [[1.0]], [1.0])])


@pytest.fixture
def c4():
    """4-cycle GMRF with coupling 0.6: not walk-summable, J indefinite."""
    return generate_gmrf(4, "cycle", 0.6, seed=0)


def tree_diameter(model):
    def farthest(src):
        dist = {src: 0}
        frontier = [src]
        while frontier:
            nxt = []
            for u in frontier:
                for v in model.neighbors(u):
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        node = max(dist, key=dist.get)
        return node, dist[node]

    far, _ = farthest(model.node_ids[0])
    return farthest(far)[1]


def max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
