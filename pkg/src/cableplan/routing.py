"""Point-to-point path computation on the road graph.

Two cost regimes live here: plain geometric shortest paths (used to price
substation connectivity) and marginal-cost search that discounts edges whose
trench is already dug, so parallel cables prefer shared corridors.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

from .instance import RoadGraph

# Keeps the Manhattan heuristic admissible under float arithmetic: the true
# remaining cost is a float sum that can undershoot its real value by ulps.
_H_GUARD = 1.0 - 1e-9


class NoPathError(RuntimeError):
    """Endpoints are not connected in the (possibly filtered) graph."""


class SaturationError(NoPathError):
    """All corridors toward the target are at their parallel-cable cap."""

    def __init__(self, msg: str, frontier_cut: list[int]):
        super().__init__(msg)
        self.frontier_cut = frontier_cut  # saturated edge ids blocking expansion


@dataclass
class RoutedPath:
    nodes: list[int]
    edges: list[int]
    total_length: float
    marginal_cost: float | None = None

    def reversed(self) -> "RoutedPath":
        return RoutedPath(
            nodes=list(reversed(self.nodes)),
            edges=list(reversed(self.edges)),
            total_length=self.total_length,
            marginal_cost=self.marginal_cost,
        )


def _path_length(graph: RoadGraph, edges: list[int]) -> float:
    return math.fsum(graph.edges[e].length for e in edges)


def shortest_path_geometric(graph: RoadGraph, a: int, b: int) -> RoutedPath:
    """Length-minimal path; ties resolved to the lexicographically smallest
    node-id sequence."""
    if a == b:
        return RoutedPath(nodes=[a], edges=[], total_length=0.0)
    adj = graph.adjacency()
    # Heap entries carry the whole path so equal-length ties pop in
    # lexicographic order. Fine at benchmark scales; paths are short.
    heap: list[tuple[float, tuple[int, ...]]] = [(0.0, (a,))]
    done = [False] * len(graph.nodes)
    while heap:
        dist, path = heapq.heappop(heap)
        u = path[-1]
        if done[u]:
            continue
        done[u] = True
        if u == b:
            return RoutedPath(
                nodes=list(path),
                edges=_edges_along(graph, path),
                total_length=dist,
            )
        for v, eid in adj[u]:
            if not done[v]:
                heapq.heappush(heap, (dist + graph.edges[eid].length, path + (v,)))
    raise NoPathError(f"no path between nodes {a} and {b}")


def _edges_along(graph: RoadGraph, path: tuple[int, ...]) -> list[int]:
    adj = graph.adjacency()
    edges = []
    for u, v in zip(path, path[1:]):
        eid = next(e for w, e in adj[u] if w == v)
        edges.append(eid)
    return edges


def _single_source_lengths(graph: RoadGraph, src: int) -> list[float]:
    adj = graph.adjacency()
    dist = [math.inf] * len(graph.nodes)
    dist[src] = 0.0
    heap = [(0.0, src)]
    while heap:
        d, u = heapq.heappop(heap)
        if d > dist[u]:
            continue
        for v, eid in adj[u]:
            nd = d + graph.edges[eid].length
            if nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


class DistanceIndex:
    """Symmetric shortest-path length matrix over a terminal subset."""

    def __init__(self, terminals: list[int], matrix):
        self.terminals = list(terminals)
        self.matrix = matrix
        self.index = {t: i for i, t in enumerate(self.terminals)}

    def d(self, a: int, b: int) -> float:
        return self.matrix[self.index[a]][self.index[b]]


def all_pairs_distance(graph: RoadGraph, terminals: list[int]) -> DistanceIndex:
    rows = []
    for t in terminals:
        lengths = _single_source_lengths(graph, t)
        rows.append([lengths[s] for s in terminals])
    # symmetrize: undirected graph, guard against float asymmetry
    n = len(terminals)
    for i in range(n):
        rows[i][i] = 0.0
        for j in range(i + 1, n):
            v = min(rows[i][j], rows[j][i])
            if math.isinf(v):
                raise NoPathError(
                    f"terminals {terminals[i]} and {terminals[j]} are disconnected"
                )
            rows[i][j] = rows[j][i] = v
    return DistanceIndex(terminals, rows)


def marginal_edge_cost(edge, used: bool) -> float:
    """Cost of laying one more cable: cable always, trench only if undug."""
    cost = edge.c_ca * edge.length
    if not used:
        cost += edge.c_tr * edge.length
    return cost


def marginal_cost_astar(graph: RoadGraph, usage: dict[int, int],
                        a: int, b: int) -> RoutedPath:
    """A* under marginal cost with a Manhattan-distance heuristic.

    Edges at their cable cap are impassable. Expansion ties prefer larger g
    (deeper nodes), then lower node id.
    """
    if a == b:
        raise ValueError("marginal-cost routing requires distinct endpoints")
    adj = graph.adjacency()
    edges = graph.edges
    bx, by = graph.coords(b)
    h_scale = graph.min_cable_cost() * _H_GUARD
    n = len(graph.nodes)
    g = [math.inf] * n
    parent: list[tuple[int, int] | None] = [None] * n
    g[a] = 0.0
    nx_, ny_ = graph.coords(a)
    h0 = (abs(nx_ - bx) + abs(ny_ - by)) * h_scale
    heap: list[tuple[float, float, int]] = [(h0, 0.0, a)]
    closed = [False] * n
    while heap:
        f, neg_g, u = heapq.heappop(heap)
        gu = -neg_g
        if closed[u] or gu > g[u]:
            continue
        closed[u] = True
        if u == b:
            return _reconstruct(graph, parent, a, b, gu)
        for v, eid in adj[u]:
            if closed[v]:
                continue
            e = edges[eid]
            k = usage.get(eid, 0)
            if k >= e.c_max:
                continue
            gv = gu + marginal_edge_cost(e, k > 0)
            if gv < g[v]:
                g[v] = gv
                parent[v] = (u, eid)
                vx, vy = graph.coords(v)
                hv = (abs(vx - bx) + abs(vy - by)) * h_scale
                heapq.heappush(heap, (gv + hv, -gv, v))
    cut = _frontier_cut(graph, usage, closed)
    raise SaturationError(
        f"no unsaturated corridor from node {a} to node {b}", frontier_cut=cut
    )


def dijkstra_marginal(graph: RoadGraph, usage: dict[int, int],
                      a: int, b: int) -> RoutedPath:
    """Heuristic-free reference for marginal_cost_astar (same cost contract)."""
    if a == b:
        raise ValueError("marginal-cost routing requires distinct endpoints")
    adj = graph.adjacency()
    edges = graph.edges
    n = len(graph.nodes)
    g = [math.inf] * n
    parent: list[tuple[int, int] | None] = [None] * n
    g[a] = 0.0
    heap = [(0.0, a)]
    closed = [False] * n
    while heap:
        gu, u = heapq.heappop(heap)
        if closed[u] or gu > g[u]:
            continue
        closed[u] = True
        if u == b:
            return _reconstruct(graph, parent, a, b, gu)
        for v, eid in adj[u]:
            if closed[v]:
                continue
            e = edges[eid]
            k = usage.get(eid, 0)
            if k >= e.c_max:
                continue
            gv = gu + marginal_edge_cost(e, k > 0)
            if gv < g[v]:
                g[v] = gv
                parent[v] = (u, eid)
                heapq.heappush(heap, (gv, v))
    cut = _frontier_cut(graph, usage, closed)
    raise SaturationError(
        f"no unsaturated corridor from node {a} to node {b}", frontier_cut=cut
    )


def _reconstruct(graph: RoadGraph, parent, a: int, b: int, cost: float) -> RoutedPath:
    nodes = [b]
    edges = []
    u = b
    while u != a:
        p = parent[u]
        assert p is not None
        u, eid = p
        nodes.append(u)
        edges.append(eid)
    nodes.reverse()
    edges.reverse()
    return RoutedPath(
        nodes=nodes,
        edges=edges,
        total_length=_path_length(graph, edges),
        marginal_cost=cost,
    )


def _frontier_cut(graph: RoadGraph, usage: dict[int, int], closed: list[bool]) -> list[int]:
    cut = []
    for e in graph.edges:
        if usage.get(e.id, 0) >= e.c_max and (closed[e.u] or closed[e.v]):
            cut.append(e.id)
    return cut
