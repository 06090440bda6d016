"""Network geodesics through latent samples.

Samples become graph nodes. Each node gets a local scale ``c_j`` (mean
distance to its k nearest neighbours); nodes ``i`` and ``j`` are joined
when ``d(i, j) < t * max(c_i, c_j)`` with edge energy ``d(i, j) ** h``.
The threshold ``t`` grows geometrically until the graph is connected and
the least-energy path is found with Dijkstra.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

TAGS = ("posterior", "prior", "endpoint")


class GraphDisconnected(RuntimeError):
    def __init__(self, n_components, t):
        super().__init__(f"graph still has {n_components} components at t={t:.4g}")
        self.n_components, self.t = n_components, t


class Unreachable(RuntimeError):
    pass


@dataclass
class LatentSampleSet:
    points: np.ndarray
    tags: np.ndarray  # one of TAGS per point

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.tags = np.asarray(self.tags)
        if self.points.shape[0] < 2:
            raise ValueError("need at least two samples")
        if self.tags.shape != (self.points.shape[0],):
            raise ValueError("one tag per point required")
        if not np.isin(self.tags, TAGS).all():
            raise ValueError(f"tags must be among {TAGS}")

    def index_of(self, tag):
        return np.flatnonzero(self.tags == tag)


@dataclass
class NeighborScales:
    c: np.ndarray
    k: int


@dataclass
class ThresholdedGraph:
    n: int
    edges: np.ndarray    # (E, 2) node pairs; i < j when undirected, arc i -> j when directed
    weights: np.ndarray  # (E,)
    t: float
    h: float
    directed: bool = False
    _adj: list = field(default=None, init=False, repr=False)

    def adjacency(self):
        if self._adj is None:
            adj = [[] for _ in range(self.n)]
            for (i, j), w in zip(self.edges.tolist(), self.weights.tolist()):
                adj[i].append((j, w))
                if not self.directed:
                    adj[j].append((i, w))
            self._adj = adj
        return self._adj

    def edge_weight(self, i, j):
        for v, w in self.adjacency()[i]:
            if v == j:
                return w
        return None

    def n_components(self):
        if self.n == 0:
            return 0
        e = self.edges
        m = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(self.n, self.n))
        return connected_components(m, directed=self.directed, connection="strong")[0]

    def is_connected(self):
        return self.n_components() == 1


@dataclass
class GeodesicPath:
    nodes: list
    points: np.ndarray
    energy: float
    t_final: float = None
    k: int = None
    h: float = None
    graph: ThresholdedGraph = field(default=None, repr=False)


def pairwise_distances(points):
    points = np.asarray(points, dtype=np.float64)
    return cdist(points, points)


def knn_scales(points, k, dist=None):
    """Mean distance from each point to its ``k`` nearest other points.

    Neighbours are excluded by index, not by value, so a duplicate point
    contributes a zero distance.
    """
    dist = pairwise_distances(points) if dist is None else dist
    n = dist.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    d = dist.copy()
    np.fill_diagonal(d, np.inf)
    nearest = np.partition(d, k - 1, axis=1)[:, :k]
    return NeighborScales(nearest.mean(axis=1), k)


def _graph_from_mask(mask, dist, t, h, directed):
    if directed:
        np.fill_diagonal(mask, False)
        i, j = np.nonzero(mask)
    else:
        i, j = np.nonzero(np.triu(mask, 1))
    return ThresholdedGraph(dist.shape[0], np.stack([i, j], axis=1), dist[i, j] ** h, t, h, directed)


def _edge_mask(dist, c, t, directed):
    if directed:
        # arc i -> j when i lies inside j's scaled neighbourhood
        return dist < t * c[None, :]
    return dist < t * np.maximum(c[:, None], c[None, :])


def build_graph(points, scales, t, h, directed=False, dist=None):
    """Threshold graph at ``t`` with edge weights ``d ** h``."""
    if t <= 0:
        raise ValueError("t must be > 0")
    if h < 1:
        raise ValueError("h must be >= 1")
    dist = pairwise_distances(points) if dist is None else dist
    c = scales.c if isinstance(scales, NeighborScales) else np.asarray(scales)
    return _graph_from_mask(_edge_mask(dist, c, t, directed), dist, t, h, directed)


def grow_until_connected(points, scales, h, t0=1.0, growth_factor=1.1, t_max=1e3,
                         directed=False, dist=None):
    """First ``t = t0 * growth_factor**m`` whose graph is connected.

    Returns ``(graph, t)``; raises :class:`GraphDisconnected` past ``t_max``.
    """
    if t0 <= 0 or growth_factor <= 1:
        raise ValueError("need t0 > 0 and growth_factor > 1")
    dist = pairwise_distances(points) if dist is None else dist
    c = scales.c if isinstance(scales, NeighborScales) else np.asarray(scales)
    m = 0
    while True:
        t = t0 * growth_factor ** m
        if t > t_max:
            last = t0 * growth_factor ** (m - 1)
            g = build_graph(points, c, last, h, directed, dist)
            raise GraphDisconnected(g.n_components(), last)
        graph = _graph_from_mask(_edge_mask(dist, c, t, directed), dist, t, h, directed)
        if graph.is_connected():
            return graph, t
        m += 1


def shortest_path(graph, src, dst, points=None):
    """Least-energy path by Dijkstra.

    Equal-energy paths are ordered by their node sequence, so the
    lexicographically smallest one wins.
    """
    if not (0 <= src < graph.n and 0 <= dst < graph.n):
        raise IndexError("node index out of range")
    adj = graph.adjacency()
    best = {src: (0.0, (src,))}
    heap = [(0.0, (src,))]
    done = set()
    while heap:
        energy, path = heapq.heappop(heap)
        u = path[-1]
        if u in done:
            continue
        done.add(u)
        if u == dst:
            pts = None if points is None else np.asarray(points)[list(path)]
            return GeodesicPath(list(path), pts, energy, graph.t, None, graph.h)
        for v, w in adj[u]:
            if v in done:
                continue
            cand = (energy + w, path + (v,))
            if v not in best or cand < best[v]:
                best[v] = cand
                heapq.heappush(heap, cand)
    raise Unreachable(f"node {dst} is not reachable from {src}")


def densify(points):
    """Insert the midpoint between consecutive points (m points -> 2m - 1)."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return points.copy()
    mids = 0.5 * (points[:-1] + points[1:])
    out = np.empty((2 * len(points) - 1, points.shape[1]))
    out[0::2] = points
    out[1::2] = mids
    return out


def network_geodesic(samples, start, end, k=5, h=2, densify_path=False, t0=1.0,
                     growth_factor=1.1, t_max=1e3, directed=False):
    """Least-energy path from ``start`` to ``end`` through the sample graph."""
    points = samples.points if isinstance(samples, LatentSampleSet) else np.asarray(samples, dtype=np.float64)
    dist = pairwise_distances(points)
    scales = knn_scales(points, k, dist)
    graph, t = grow_until_connected(points, scales, h, t0, growth_factor, t_max, directed, dist)
    path = shortest_path(graph, start, end, points)
    path.k, path.t_final, path.graph = k, t, graph
    if densify_path:
        path.points = densify(path.points)
    return path


def linear_interpolation(a, b, n_points):
    """``n_points`` evenly spaced points from ``a`` to ``b`` inclusive."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = np.linspace(0.0, 1.0, n_points)[:, None]
    out = (1.0 - w) * a + w * b
    out[-1] = b
    return out


def snap_to_nodes(points, line):
    """Nearest sample index for every point on ``line``, consecutive repeats removed."""
    idx = cdist(np.asarray(line), np.asarray(points)).argmin(axis=1)
    keep = np.concatenate([[True], idx[1:] != idx[:-1]])
    return idx[keep].tolist()


def path_energy(graph, nodes):
    """Total energy of a node sequence, or ``None`` if a hop is not an edge."""
    total = 0.0
    for u, v in zip(nodes, nodes[1:]):
        w = graph.edge_weight(u, v)
        if w is None:
            return None
        total += w
    return total
