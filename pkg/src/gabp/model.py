"""Model classes: pairwise linear Gaussian networks and scalar GMRFs.

Node ids are 1-based everywhere. For a GMRF, node ``i`` is row ``i - 1`` of ``J``.

Both classes share a small duck-typed surface used by the engine and the
certifier: ``kind``, ``node_ids``, ``edge_pairs``, ``neighbors(i)`` and
``dim(i)``.
"""

from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from . import numerics

__all__ = [
    "NodeParams",
    "EdgeObservation",
    "LinearGaussianModel",
    "GmrfModel",
    "FactorGraphModel",
    "Violation",
    "GenerationError",
    "validate",
    "is_connected",
    "topology_edges",
    "generate_gmrf",
    "generate_linear",
]

TOPOLOGIES = ("chain", "cycle", "grid", "tree", "erdos_renyi")
MAX_CONNECT_RETRIES = 100


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if ndim == 2:
        a = np.atleast_2d(a)
    elif ndim == 1:
        a = np.atleast_1d(a)
    a.flags.writeable = False
    return a


class GenerationError(RuntimeError):
    pass


class Violation(NamedTuple):
    location: str
    message: str

    def __str__(self):
        return f"{self.location}: {self.message}"


@dataclass(frozen=True)
class NodeParams:
    node_id: int
    dim: int
    prior_cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prior_cov", _frozen(self.prior_cov, 2))


@dataclass(frozen=True)
class EdgeObservation:
    """Observation ``y = a_ji @ x_i + a_ij @ x_j + z`` with ``z ~ N(0, noise_cov)``.

    Stored once per unordered pair with ``i < j``; ``a_ji`` multiplies the
    smaller endpoint. Use :meth:`coef` instead of the raw fields when the
    orientation is not known.
    """

    i: int
    j: int
    a_ji: np.ndarray
    a_ij: np.ndarray
    noise_cov: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.i > self.j:
            i, j, a_ji, a_ij = self.j, self.i, self.a_ij, self.a_ji
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)
            object.__setattr__(self, "a_ji", a_ji)
            object.__setattr__(self, "a_ij", a_ij)
        for name in ("a_ji", "a_ij", "noise_cov"):
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        object.__setattr__(self, "y", _frozen(self.y, 1))

    @property
    def pair(self):
        return (self.i, self.j)

    def coef(self, node):
        """Coefficient matrix multiplying ``x_node``."""
        if node == self.i:
            return self.a_ji
        if node == self.j:
            return self.a_ij
        raise KeyError(f"node {node} is not an endpoint of edge {self.pair}")

    def other(self, node):
        if node == self.i:
            return self.j
        if node == self.j:
            return self.i
        raise KeyError(f"node {node} is not an endpoint of edge {self.pair}")


def _adjacency(node_ids, pairs):
    adj = {n: set() for n in node_ids}
    for i, j in pairs:
        adj.setdefault(i, set()).add(j)
        adj.setdefault(j, set()).add(i)
    return {n: tuple(sorted(v)) for n, v in adj.items()}


@dataclass(frozen=True)
class LinearGaussianModel:
    nodes: tuple
    edges: tuple
    ground_truth: Optional[dict] = None
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda n: n.node_id)))
        object.__setattr__(self, "edges", tuple(sorted(self.edges, key=lambda e: e.pair)))
        if self.ground_truth is not None:
            gt = {int(k): _frozen(v, 1) for k, v in self.ground_truth.items()}
            object.__setattr__(self, "ground_truth", gt)
        object.__setattr__(self, "_node_index", {n.node_id: n for n in self.nodes})
        object.__setattr__(self, "_edge_index", {e.pair: e for e in self.edges})
        object.__setattr__(
            self, "_adj", _adjacency([n.node_id for n in self.nodes], [e.pair for e in self.edges])
        )

    @property
    def node_ids(self):
        return tuple(n.node_id for n in self.nodes)

    @property
    def edge_pairs(self):
        return tuple(e.pair for e in self.edges)

    def node(self, i) -> NodeParams:
        return self._node_index[i]

    def dim(self, i) -> int:
        return self._node_index[i].dim

    def neighbors(self, i):
        return self._adj.get(i, ())

    def edge(self, i, j) -> EdgeObservation:
        """Edge record for the unordered pair ``{i, j}``."""
        return self._edge_index[(min(i, j), max(i, j))]

    def __eq__(self, other):
        if not isinstance(other, LinearGaussianModel):
            return NotImplemented
        if self.node_ids != other.node_ids or self.edge_pairs != other.edge_pairs:
            return False
        for a, b in zip(self.nodes, other.nodes):
            if a.dim != b.dim or not np.array_equal(a.prior_cov, b.prior_cov):
                return False
        for a, b in zip(self.edges, other.edges):
            for name in ("a_ji", "a_ij", "noise_cov", "y"):
                if not np.array_equal(getattr(a, name), getattr(b, name)):
                    return False
        return True

    __hash__ = None


@dataclass(frozen=True)
class GmrfModel:
    """Scalar GMRF with density proportional to ``exp(-x'Jx/2 + h'x)``."""

    J: np.ndarray
    h: np.ndarray
    kind: str = field(default="gmrf", init=False)

    def __post_init__(self):
        object.__setattr__(self, "J", _frozen(self.J, 2))
        object.__setattr__(self, "h", _frozen(self.h, 1))
        n = self.J.shape[0]
        pairs = []
        if self.J.shape == (n, n):
            rows, cols = np.nonzero(self.J)
            pairs = sorted({(int(min(r, c)) + 1, int(max(r, c)) + 1) for r, c in zip(rows, cols) if r != c})
        object.__setattr__(self, "_pairs", tuple(pairs))
        object.__setattr__(self, "_adj", _adjacency(range(1, n + 1), pairs))

    @property
    def n(self):
        return self.J.shape[0]

    @property
    def node_ids(self):
        return tuple(range(1, self.n + 1))

    @property
    def edge_pairs(self):
        return self._pairs

    def dim(self, i) -> int:
        return 1

    def neighbors(self, i):
        return self._adj.get(i, ())

    def coupling(self, i, j) -> float:
        return float(self.J[i - 1, j - 1])

    def __eq__(self, other):
        if not isinstance(other, GmrfModel):
            return NotImplemented
        return np.array_equal(self.J, other.J) and np.array_equal(self.h, other.h)

    __hash__ = None


FactorGraphModel = Union[LinearGaussianModel, GmrfModel]


def is_connected(node_ids, pairs):
    node_ids = list(node_ids)
    if not node_ids:
        return True
    adj = _adjacency(node_ids, pairs)
    seen = {node_ids[0]}
    queue = deque([node_ids[0]])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == len(adj)


def validate(model):
    """Return every violated modelling assumption; an empty list means valid."""
    if model.kind == "gmrf":
        return _validate_gmrf(model)
    return _validate_linear(model)


def _check_spd(mat, shape, where, what):
    out = []
    if mat.shape != shape:
        return [Violation(where, f"{what} has shape {mat.shape}, expected {shape}")]
    if not np.all(np.isfinite(mat)):
        return [Violation(where, f"{what} has non-finite entries")]
    try:
        sym = numerics.symmetrize(mat)
    except numerics.NotSymmetricError:
        return [Violation(where, f"{what} not symmetric")]
    if not numerics.is_pd(sym):
        out.append(Violation(where, f"{what} not positive definite"))
    return out


def _validate_linear(model):
    out = []
    ids = [n.node_id for n in model.nodes]
    if len(set(ids)) != len(ids):
        out.append(Violation("nodes", "duplicate node ids"))
    if sorted(set(ids)) != list(range(1, len(set(ids)) + 1)):
        out.append(Violation("nodes", "node ids not contiguous from 1"))
    for n in model.nodes:
        where = f"node {n.node_id}"
        if n.dim < 1:
            out.append(Violation(where, "dimension must be at least 1"))
            continue
        out += _check_spd(n.prior_cov, (n.dim, n.dim), where, "prior covariance")
    known = set(ids)
    seen = set()
    for e in model.edges:
        where = f"edge ({e.i},{e.j})"
        if e.i == e.j:
            out.append(Violation(where, "self loop"))
            continue
        if e.i not in known or e.j not in known:
            out.append(Violation(where, "unknown endpoint"))
            continue
        if e.pair in seen:
            out.append(Violation(where, "duplicate edge"))
        seen.add(e.pair)
        m = e.y.shape[0]
        for node, a in ((e.i, e.a_ji), (e.j, e.a_ij)):
            dim = model.dim(node)
            if a.shape != (m, dim):
                out.append(Violation(where, f"dimension mismatch: coefficient of x_{node} has shape {a.shape}, expected {(m, dim)}"))
            elif not numerics.full_column_rank(a):
                out.append(Violation(where, f"rank deficient coefficient of x_{node}"))
        out += _check_spd(e.noise_cov, (m, m), where, "noise covariance")
        if not np.all(np.isfinite(e.y)):
            out.append(Violation(where, "observation has non-finite entries"))
    if ids and not is_connected(ids, [e.pair for e in model.edges if e.i != e.j]):
        out.append(Violation("graph", "not connected"))
    return out


def _validate_gmrf(model):
    out = []
    J, h = model.J, model.h
    n = J.shape[0]
    if J.shape != (n, n):
        return [Violation("J", f"not square: shape {J.shape}")]
    if h.shape != (n,):
        out.append(Violation("h", f"length {h.shape[0]}, expected {n}"))
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(h))):
        out.append(Violation("J/h", "non-finite entries"))
    if not np.array_equal(J, J.T):
        bad = np.argwhere(J != J.T)
        r, c = bad[0]
        out.append(Violation(f"J[{r + 1},{c + 1}]", "J not symmetric"))
    for i in range(n):
        if J[i, i] != 1.0:
            out.append(Violation(f"node {i + 1}", "diagonal not unit"))
    if n and not is_connected(model.node_ids, model.edge_pairs):
        out.append(Violation("graph", "not connected"))
    return out


# ---------------------------------------------------------------------------
# random instances


def topology_edges(n, topology, rng, p=None):
    """Undirected edge list (1-based, ``i < j``) for a named topology.

    ``tree`` is a random recursive tree; ``erdos_renyi`` needs ``p`` and is
    redrawn until connected.
    """
    if n < 2:
        raise GenerationError("need at least two nodes")
    if topology == "chain":
        return [(k, k + 1) for k in range(1, n)]
    if topology == "cycle":
        if n < 3:
            raise GenerationError("a cycle needs at least three nodes")
        return [(k, k + 1) for k in range(1, n)] + [(1, n)]
    if topology == "grid":
        cols = int(np.ceil(np.sqrt(n)))
        pairs = []
        for k in range(n):
            if (k + 1) % cols and k + 1 < n:
                pairs.append((k + 1, k + 2))
            if k + cols < n:
                pairs.append((k + 1, k + cols + 1))
        return sorted(pairs)
    if topology == "tree":
        return sorted((int(rng.integers(1, k)), k) for k in range(2, n + 1))
    if topology == "erdos_renyi":
        if p is None or not 0 < p <= 1:
            raise GenerationError("erdos_renyi needs an edge probability 0 < p <= 1")
        upper = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
        for _ in range(MAX_CONNECT_RETRIES):
            keep = rng.random(len(upper)) < p
            pairs = [e for e, k in zip(upper, keep) if k]
            if is_connected(range(1, n + 1), pairs):
                return pairs
        raise GenerationError(f"no connected draw after {MAX_CONNECT_RETRIES} attempts (p={p})")
    raise GenerationError(f"unknown topology {topology!r}; expected one of {TOPOLOGIES}")


def generate_gmrf(n, topology, coupling, seed, p=None) -> GmrfModel:
    """Unit-diagonal GMRF with ``J[i, j] = -coupling`` on every generated edge."""
    if coupling == 0 or not np.isfinite(coupling):
        raise GenerationError("coupling must be non-zero: a zero entry is not an edge")
    rng = np.random.default_rng(seed)
    pairs = topology_edges(n, topology, rng, p)
    J = np.eye(n)
    for i, j in pairs:
        J[i - 1, j - 1] = J[j - 1, i - 1] = -coupling
    h = rng.uniform(-1.0, 1.0, size=n)
    return GmrfModel(J, h)


def _full_rank_draw(rng, shape):
    while True:
        a = rng.standard_normal(shape)
        if numerics.full_column_rank(a):
            return a


def generate_linear(
    n_nodes,
    dims,
    topology,
    seed,
    p=None,
    obs_dim: Optional[int] = None,
    noise_range=(0.5, 2.0),
) -> LinearGaussianModel:
    """Random pairwise linear Gaussian network with identity priors.

    Each edge observes ``obs_dim`` (default ``max(N_i, N_j)``) rows. The
    ground truth is drawn from the prior and recorded on the model.
    """
    if isinstance(dims, (int, np.integer)):
        dims = [int(dims)] * n_nodes
    dims = list(dims)
    if len(dims) != n_nodes or min(dims) < 1:
        raise GenerationError("need one dimension >= 1 per node")
    rng = np.random.default_rng(seed)
    pairs = topology_edges(n_nodes, topology, rng, p)
    nodes = [NodeParams(k + 1, d, np.eye(d)) for k, d in enumerate(dims)]
    truth = {k + 1: rng.standard_normal(d) for k, d in enumerate(dims)}
    edges = []
    for i, j in pairs:
        ni, nj = dims[i - 1], dims[j - 1]
        m = obs_dim if obs_dim is not None else max(ni, nj)
        if m < max(ni, nj):
            raise GenerationError("observation dimension too small for full column rank")
        a_ji = _full_rank_draw(rng, (m, ni))
        a_ij = _full_rank_draw(rng, (m, nj))
        r = rng.uniform(*noise_range) * np.eye(m)
        noise = rng.multivariate_normal(np.zeros(m), r)
        y = a_ji @ truth[i] + a_ij @ truth[j] + noise
        edges.append(EdgeObservation(i, j, a_ji, a_ij, r, y))
    return LinearGaussianModel(tuple(nodes), tuple(edges), ground_truth=truth)


def linear_from_arrays(priors: Sequence, edges: Sequence) -> LinearGaussianModel:
    """Convenience constructor: ``priors[k]`` is W for node ``k+1``; edges are
    ``(i, j, a_ji, a_ij, R, y)`` tuples."""
    nodes = []
    for k, w in enumerate(priors):
        w = np.atleast_2d(np.asarray(w, dtype=float))
        nodes.append(NodeParams(k + 1, w.shape[0], w))
    return LinearGaussianModel(tuple(nodes), tuple(EdgeObservation(*e) for e in edges))
