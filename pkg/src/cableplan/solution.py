"""Solution model: feeders with realized routes, feasibility checks, and the
two cost evaluators (total cable length, and trench + cable construction cost).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .instance import Instance
from .routing import DistanceIndex, RoutedPath


@dataclass
class Feeder:
    """Ordered substation sequence anchored at HV substations.

    stations[0] and stations[-1] are HV nodes (equal for a ring feeder);
    routes[i] realizes the link stations[i] -> stations[i+1].
    """

    stations: list[int]
    routes: list[RoutedPath | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.routes:
            self.routes = [None] * self.n_links

    @property
    def n_links(self) -> int:
        return len(self.stations) - 1

    @property
    def interior(self) -> list[int]:
        return self.stations[1:-1]

    def load(self, instance: Instance) -> float:
        return math.fsum(instance.demand(s) for s in self.interior)

    def is_ring(self) -> bool:
        return self.stations[0] == self.stations[-1]

    def clone(self) -> "Feeder":
        return Feeder(stations=list(self.stations), routes=list(self.routes))


@dataclass
class Solution:
    feeders: list[Feeder]

    def clone(self) -> "Solution":
        return Solution(feeders=[f.clone() for f in self.feeders])

    def links(self):
        """All (feeder index, link index) pairs."""
        for fi, f in enumerate(self.feeders):
            for li in range(f.n_links):
                yield fi, li

    def n_links(self) -> int:
        return sum(f.n_links for f in self.feeders)


@dataclass
class CostBreakdown:
    trench_cost: float
    cable_cost: float
    total: float
    total_cable_length: float


@dataclass
class Violation:
    constraint: str
    where: str
    magnitude: float = 0.0

    def __str__(self):
        return f"{self.constraint} at {self.where} (magnitude {self.magnitude:g})"


def usage_map(solution: Solution) -> dict[int, int]:
    """Per-edge parallel-cable count induced by all realized routes."""
    usage: dict[int, int] = {}
    for fi, f in enumerate(solution.feeders):
        for li, route in enumerate(f.routes):
            if route is None:
                raise ValueError(f"feeder {fi} link {li} has no realized route")
            for eid in route.edges:
                usage[eid] = usage.get(eid, 0) + 1
    return usage


def evaluate_f2(solution: Solution, instance: Instance) -> CostBreakdown:
    """Construction cost: trench once per used edge, cable per occupancy."""
    return cost_from_usage(usage_map(solution), instance)


def cost_from_usage(usage: dict[int, int], instance: Instance) -> CostBreakdown:
    edges = instance.graph.edges
    trench = math.fsum(edges[e].c_tr * edges[e].length for e, k in usage.items() if k >= 1)
    cable = math.fsum(edges[e].c_ca * edges[e].length * k for e, k in usage.items())
    length = math.fsum(edges[e].length * k for e, k in usage.items())
    return CostBreakdown(
        trench_cost=trench,
        cable_cost=cable,
        total=trench + cable,
        total_cable_length=length,
    )


def evaluate_f1(feeders: list[list[int]], dist: DistanceIndex) -> float:
    """Total connectivity length: sum of link distances over all feeders."""
    return math.fsum(
        dist.d(a, b) for seq in feeders for a, b in zip(seq, seq[1:])
    )


def check_feasible(solution: Solution, instance: Instance) -> list[Violation]:
    """Structural, capacity, and route-consistency audit.

    Returns an empty list iff the solution is feasible; violations are data
    so callers can penalize or reject uniformly.
    """
    out: list[Violation] = []
    hv = set(instance.hv_nodes)
    mv = set(instance.mv_nodes)
    q = instance.feeder_capacity
    seen_mv: dict[int, int] = {}

    for fi, f in enumerate(solution.feeders):
        where = f"feeder {fi}"
        if len(f.stations) < 3:
            out.append(Violation("feeder_too_short", where, len(f.stations)))
            continue
        if f.stations[0] not in hv or f.stations[-1] not in hv:
            out.append(Violation("endpoint_not_hv", where))
        for s in f.interior:
            if s not in mv:
                out.append(Violation("interior_not_mv", f"{where} station {s}"))
            seen_mv[s] = seen_mv.get(s, 0) + 1
        load = f.load(instance)
        if load > q + 1e-9:
            out.append(Violation("capacity_exceeded", where, load - q))
        if len(f.routes) != f.n_links:
            out.append(Violation("route_count_mismatch", where))
            continue
        for li, route in enumerate(f.routes):
            lw = f"{where} link {li}"
            if route is None:
                out.append(Violation("missing_route", lw))
                continue
            a, b = f.stations[li], f.stations[li + 1]
            if route.nodes[0] != a or route.nodes[-1] != b:
                out.append(Violation("route_endpoint_mismatch", lw))
            if len(set(route.nodes)) != len(route.nodes):
                out.append(Violation("route_not_simple", lw))
            for (u, v), eid in zip(zip(route.nodes, route.nodes[1:]), route.edges):
                e = instance.graph.edges[eid]
                if {e.u, e.v} != {u, v}:
                    out.append(Violation("route_edge_mismatch", lw))
                    break

    for m in mv:
        count = seen_mv.get(m, 0)
        if count != 1:
            out.append(Violation("mv_assignment", f"mv node {m}", count))

    # cable-cap audit only when all routes are realized
    if all(r is not None for f in solution.feeders for r in f.routes):
        usage = usage_map(solution)
        for eid, k in usage.items():
            cap = instance.graph.edges[eid].c_max
            if k > cap:
                out.append(Violation("cable_cap_exceeded", f"edge {eid}", k - cap))
    return out


def serialize_solution(solution: Solution, instance: Instance) -> bytes:
    import json

    cost = evaluate_f2(solution, instance)
    doc = {
        "instance_name": instance.name,
        "feeders": [
            {
                "stations": f.stations,
                "routes": [r.nodes if r is not None else None for r in f.routes],
            }
            for f in solution.feeders
        ],
        "cost_breakdown": {
            "trench_cost": cost.trench_cost,
            "cable_cost": cost.cable_cost,
            "total": cost.total,
            "total_cable_length": cost.total_cable_length,
        },
    }
    return json.dumps(doc, indent=1).encode("utf-8")


def deserialize_solution(data: bytes, instance: Instance) -> Solution:
    import json

    from .routing import _edges_along, _path_length

    doc = json.loads(data.decode("utf-8"))
    feeders = []
    for fd in doc["feeders"]:
        routes = []
        for nodes in fd["routes"]:
            if nodes is None:
                routes.append(None)
            else:
                edges = _edges_along(instance.graph, tuple(nodes))
                routes.append(RoutedPath(nodes=list(nodes), edges=edges,
                                         total_length=_path_length(instance.graph, edges)))
        feeders.append(Feeder(stations=list(fd["stations"]), routes=routes))
    return Solution(feeders=feeders)
