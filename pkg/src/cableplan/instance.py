"""Benchmark instance generation on regular square lattices.

Instances are built in three steps: a square street lattice, a two-level
clustering pass that places MV and HV substations on the nearest street
segment, and a seeded demand draw. Generation is fully deterministic for a
fixed (grid, counts, seed) tuple; the random stream is NumPy's PCG64.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

# Benchmark cost convention (million CNY/km) and per-edge cable cap.
DEFAULT_TRENCH_COST = 1.5
DEFAULT_CABLE_COST = 0.5
DEFAULT_CABLE_CAP = 6
DEFAULT_FEEDER_CAPACITY = 10.0

DEMAND_LOW = 2.0
DEMAND_HIGH = 5.0

# (grid_n, n_mv, n_hv) per builtin case, all generated with seed 42.
BUILTIN_CASES = {
    0: (20, 20, 4),
    1: (20, 30, 5),
    2: (30, 50, 6),
    3: (30, 80, 7),
    4: (30, 100, 8),
}
BUILTIN_SEED = 42

_COINCIDENT_EPS = 1e-9


class InstanceError(ValueError):
    """Invalid instance data or generation parameters."""


class InstanceFormatError(InstanceError):
    """Malformed serialized instance document."""


@dataclass
class RoadNode:
    id: int
    x: float
    y: float
    kind: str = "junction"  # junction | hv_substation | mv_substation


@dataclass
class RoadEdge:
    id: int
    u: int
    v: int
    length: float
    c_tr: float = DEFAULT_TRENCH_COST
    c_ca: float = DEFAULT_CABLE_COST
    c_max: int = DEFAULT_CABLE_CAP


@dataclass
class Substation:
    node_id: int
    level: str  # HV | MV
    demand: float = 0.0


@dataclass
class RoadGraph:
    """Undirected geometric street graph with dense node/edge ids."""

    nodes: list[RoadNode]
    edges: list[RoadEdge]
    _adj: list[list[tuple[int, int]]] | None = field(
        default=None, repr=False, compare=False
    )

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per-node list of (neighbor id, edge id), built once."""
        if self._adj is None:
            adj: list[list[tuple[int, int]]] = [[] for _ in self.nodes]
            for e in self.edges:
                adj[e.u].append((e.v, e.id))
                adj[e.v].append((e.u, e.id))
            self._adj = adj
        return self._adj

    def invalidate(self) -> None:
        self._adj = None

    def coords(self, node: int) -> tuple[float, float]:
        n = self.nodes[node]
        return n.x, n.y

    def total_length(self) -> float:
        return math.fsum(e.length for e in self.edges)

    def min_cable_cost(self) -> float:
        return min(e.c_ca for e in self.edges)

    def is_connected(self) -> bool:
        if not self.nodes:
            return True
        adj = self.adjacency()
        seen = [False] * len(self.nodes)
        stack = [0]
        seen[0] = True
        count = 1
        while stack:
            u = stack.pop()
            for v, _ in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    count += 1
                    stack.append(v)
        return count == len(self.nodes)


@dataclass
class Instance:
    name: str
    graph: RoadGraph
    substations: list[Substation]
    feeder_capacity: float = DEFAULT_FEEDER_CAPACITY
    seed: int = 0
    grid_n: int = 0
    block_km: float = 1.0

    @property
    def hv_nodes(self) -> list[int]:
        return [s.node_id for s in self.substations if s.level == "HV"]

    @property
    def mv_nodes(self) -> list[int]:
        return [s.node_id for s in self.substations if s.level == "MV"]

    def demand(self, node_id: int) -> float:
        return self._demand_map().get(node_id, 0.0)

    def _demand_map(self) -> dict[int, float]:
        if not hasattr(self, "_demands"):
            self._demands = {s.node_id: s.demand for s in self.substations}
        return self._demands

    def extent(self) -> float:
        return self.grid_n * self.block_km


def generate_lattice(n_grid: int, block_km: float) -> RoadGraph:
    """Square lattice of (n_grid+1)^2 junctions and 2*n_grid*(n_grid+1) edges."""
    if n_grid < 2:
        raise InstanceError(f"n_grid must be >= 2, got {n_grid}")
    if block_km <= 0:
        raise InstanceError(f"block_km must be > 0, got {block_km}")
    n = n_grid + 1
    nodes = [
        RoadNode(id=ix * n + iy, x=ix * block_km, y=iy * block_km)
        for ix in range(n)
        for iy in range(n)
    ]
    edges: list[RoadEdge] = []

    def add_edge(u: int, v: int) -> None:
        edges.append(RoadEdge(id=len(edges), u=u, v=v, length=block_km))

    for ix in range(n):
        for iy in range(n):
            here = ix * n + iy
            if ix + 1 < n:
                add_edge(here, (ix + 1) * n + iy)
            if iy + 1 < n:
                add_edge(here, ix * n + iy + 1)
    return RoadGraph(nodes=nodes, edges=edges)


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
            max_iter: int = 100, tol: float = 1e-6) -> np.ndarray:
    """Seeded k-means++ with Lloyd iterations.

    Empty clusters are re-seeded deterministically from the point farthest
    from its assigned centroid (lowest index on ties).
    """
    n = len(points)
    if not 1 <= k <= n:
        raise InstanceError(f"cannot cluster {n} points into {k} clusters")
    # k-means++ seeding
    centroids = np.empty((k, 2))
    first = int(rng.integers(n))
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = points[int(rng.integers(n))]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r))
            idx = min(idx, n - 1)
            centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))

    for _ in range(max_iter):
        dists = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        assign = np.argmin(dists, axis=1)
        new_centroids = centroids.copy()
        for j in range(k):
            members = points[assign == j]
            if len(members) == 0:
                worst = int(np.argmax(dists[np.arange(n), assign]))
                new_centroids[j] = points[worst]
                assign[worst] = j
            else:
                new_centroids[j] = members.mean(axis=0)
        shift = float(np.max(np.sqrt(np.sum((new_centroids - centroids) ** 2, axis=1))))
        centroids = new_centroids
        if shift < tol:
            break
    return centroids


def _project_to_edge(graph: RoadGraph, px: float, py: float) -> tuple[int, float, float, float]:
    """Closest point on the nearest edge; ties broken by lowest edge id.

    Returns (edge id, t along edge in [0, 1], x, y).
    """
    best = None
    for e in graph.edges:
        ux, uy = graph.coords(e.u)
        vx, vy = graph.coords(e.v)
        dx, dy = vx - ux, vy - uy
        denom = dx * dx + dy * dy
        t = 0.0 if denom == 0 else max(0.0, min(1.0, ((px - ux) * dx + (py - uy) * dy) / denom))
        cx, cy = ux + t * dx, uy + t * dy
        dist2 = (px - cx) ** 2 + (py - cy) ** 2
        if best is None or dist2 < best[0]:
            best = (dist2, e.id, t, cx, cy)
    assert best is not None
    _, eid, t, cx, cy = best
    return eid, t, cx, cy


def _split_edge(graph: RoadGraph, edge_id: int, t: float, x: float, y: float) -> int:
    """Insert a node at parameter t on the edge, splitting it in two.

    The original edge id is reused for the first half so edge ids stay dense.
    """
    e = graph.edges[edge_id]
    new_id = len(graph.nodes)
    graph.nodes.append(RoadNode(id=new_id, x=x, y=y))
    tail = RoadEdge(id=len(graph.edges), u=new_id, v=e.v,
                    length=(1.0 - t) * e.length, c_tr=e.c_tr, c_ca=e.c_ca, c_max=e.c_max)
    e.v = new_id
    e.length = t * e.length
    graph.edges.append(tail)
    graph.invalidate()
    return new_id


def _insert_substation_node(graph: RoadGraph, px: float, py: float,
                            taken: set[int]) -> int:
    """Place a substation at the projection of (px, py) onto the street graph.

    Landing exactly on an existing free node reuses it. If that node already
    hosts a substation, the new node goes to the midpoint of the node's
    lowest-id incident edge instead, keeping substation nodes distinct.
    """
    eid, t, cx, cy = _project_to_edge(graph, px, py)
    e = graph.edges[eid]
    for endpoint, at_t in ((e.u, 0.0), (e.v, 1.0)):
        nx, ny = graph.coords(endpoint)
        if math.hypot(cx - nx, cy - ny) < _COINCIDENT_EPS:
            if endpoint not in taken:
                return endpoint
            host = min(eid_ for _, eid_ in graph.adjacency()[endpoint])
            he = graph.edges[host]
            hx = (graph.nodes[he.u].x + graph.nodes[he.v].x) / 2.0
            hy = (graph.nodes[he.u].y + graph.nodes[he.v].y) / 2.0
            return _split_edge(graph, host, 0.5, hx, hy)
    return _split_edge(graph, eid, t, cx, cy)


def place_substations(graph: RoadGraph, n_mv: int, n_hv: int, seed: int,
                      name: str = "", block_km: float = 1.0,
                      grid_n: int = 0) -> Instance:
    """Two-level clustering placement of MV and HV substations.

    K-means over the lattice junctions yields MV sites; a second k-means over
    the MV centroids yields HV sites. Each centroid is projected to the
    closest point on the nearest street edge and inserted as a new node. MV
    demands are then drawn uniformly from [2, 5] MVA off the same stream.
    """
    if not 0 < n_hv <= n_mv <= len(graph.nodes):
        raise InstanceError(
            f"need 0 < n_hv <= n_mv <= |V| ({len(graph.nodes)}), got n_mv={n_mv}, n_hv={n_hv}"
        )
    graph = RoadGraph(
        nodes=[RoadNode(n.id, n.x, n.y, n.kind) for n in graph.nodes],
        edges=[RoadEdge(e.id, e.u, e.v, e.length, e.c_tr, e.c_ca, e.c_max) for e in graph.edges],
    )
    rng = np.random.default_rng(seed)
    points = np.array([(n.x, n.y) for n in graph.nodes])
    mv_centroids = _kmeans(points, n_mv, rng)
    hv_centroids = _kmeans(mv_centroids, n_hv, rng)

    taken: set[int] = set()
    substations: list[Substation] = []
    mv_ids = []
    for cx, cy in mv_centroids:
        nid = _insert_substation_node(graph, float(cx), float(cy), taken)
        taken.add(nid)
        graph.nodes[nid].kind = "mv_substation"
        mv_ids.append(nid)
    for cx, cy in hv_centroids:
        nid = _insert_substation_node(graph, float(cx), float(cy), taken)
        taken.add(nid)
        graph.nodes[nid].kind = "hv_substation"
        substations.append(Substation(node_id=nid, level="HV", demand=0.0))
    demands = rng.uniform(DEMAND_LOW, DEMAND_HIGH, size=n_mv)
    for nid, q in zip(mv_ids, demands):
        substations.append(Substation(node_id=nid, level="MV", demand=float(q)))

    if grid_n == 0:
        # infer from the original junction extent
        grid_n = int(round(max(max(n.x for n in graph.nodes),
                               max(n.y for n in graph.nodes)) / block_km))
    inst = Instance(
        name=name or f"lattice{grid_n}-mv{n_mv}-hv{n_hv}-s{seed}",
        graph=graph,
        substations=substations,
        seed=seed,
        grid_n=grid_n,
        block_km=block_km,
    )
    _validate(inst, strict=True)
    return inst


def builtin_case(case_id: int) -> Instance:
    """One of the five named benchmark instances (seed 42)."""
    if case_id not in BUILTIN_CASES:
        raise InstanceError(f"unknown case id {case_id}; valid ids are 0..4")
    grid_n, n_mv, n_hv = BUILTIN_CASES[case_id]
    graph = generate_lattice(grid_n, 1.0)
    return place_substations(graph, n_mv, n_hv, seed=BUILTIN_SEED,
                             name=f"case-{case_id}", block_km=1.0, grid_n=grid_n)


def _validate(inst: Instance, strict: bool) -> None:
    seen_pairs = set()
    for i, node in enumerate(inst.graph.nodes):
        if node.id != i:
            raise InstanceError(f"node ids not dense: position {i} holds id {node.id}")
    for e in inst.graph.edges:
        if e.u == e.v:
            raise InstanceError(f"edge {e.id} is a self-loop")
        if e.length <= 0:
            raise InstanceError(f"edge {e.id} has non-positive length {e.length}")
        key = (min(e.u, e.v), max(e.u, e.v))
        if key in seen_pairs:
            raise InstanceError(f"duplicate edge between nodes {key}")
        seen_pairs.add(key)
    sub_nodes = [s.node_id for s in inst.substations]
    if len(set(sub_nodes)) != len(sub_nodes):
        raise InstanceError("a node hosts more than one substation")
    for s in inst.substations:
        kind = inst.graph.nodes[s.node_id].kind
        want = "hv_substation" if s.level == "HV" else "mv_substation"
        if kind != want:
            raise InstanceError(f"node {s.node_id} kind {kind} does not match level {s.level}")
        if s.level == "MV" and not DEMAND_LOW <= s.demand <= DEMAND_HIGH:
            msg = f"MV demand {s.demand} at node {s.node_id} outside benchmark range [2, 5]"
            if strict:
                raise InstanceError(msg)
            warnings.warn(msg)
    if not inst.graph.is_connected():
        raise InstanceError("road graph is not connected")


def serialize(inst: Instance) -> bytes:
    """Stable JSON encoding; identical instances serialize byte-identically."""
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": inst.name,
        "grid_n": inst.grid_n,
        "block_km": inst.block_km,
        "seed": inst.seed,
        "Q": inst.feeder_capacity,
        "nodes": [
            {"id": n.id, "x": n.x, "y": n.y, "kind": n.kind} for n in inst.graph.nodes
        ],
        "edges": [
            {"id": e.id, "u": e.u, "v": e.v, "length": e.length,
             "c_tr": e.c_tr, "c_ca": e.c_ca, "c_max": e.c_max}
            for e in inst.graph.edges
        ],
        "substations": [
            {"node_id": s.node_id, "level": s.level, "demand": s.demand}
            for s in inst.substations
        ],
    }
    return json.dumps(doc, indent=1).encode("utf-8")


def deserialize(data: bytes) -> Instance:
    try:
        doc = json.loads(data.decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(
            f"malformed instance document at byte offset {exc.pos}: {exc.msg}"
        ) from exc
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise InstanceFormatError(
            f"unsupported schema_version {doc.get('schema_version')!r}, "
            f"expected {SCHEMA_VERSION}"
        )
    try:
        graph = RoadGraph(
            nodes=[RoadNode(n["id"], n["x"], n["y"], n["kind"]) for n in doc["nodes"]],
            edges=[RoadEdge(e["id"], e["u"], e["v"], e["length"],
                            e["c_tr"], e["c_ca"], e["c_max"]) for e in doc["edges"]],
        )
        inst = Instance(
            name=doc["name"],
            graph=graph,
            substations=[Substation(s["node_id"], s["level"], s["demand"])
                         for s in doc["substations"]],
            feeder_capacity=doc["Q"],
            seed=doc["seed"],
            grid_n=doc["grid_n"],
            block_km=doc["block_km"],
        )
    except (KeyError, TypeError) as exc:
        raise InstanceFormatError(f"missing or malformed field: {exc}") from exc
    _validate(inst, strict=False)
    return inst


def load(path) -> Instance:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


def save(inst: Instance, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(inst))
