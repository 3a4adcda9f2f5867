"""Feasible starting solutions.

The connectivity subproblem is a multi-depot CVRP: HV substations are depots,
MV substations are customers with their contracted demand, and the feeder
capacity is the vehicle capacity. Two solvers are provided: a hybrid genetic
search (population with biased fitness, giant-tour crossover, capacity-aware
split, local-search education) and a two-phase sweep + Clarke-Wright savings
baseline. Connectivities are realized on the road graph with plain geometric
shortest paths; trench sharing is left to the improvement search.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .routing import DistanceIndex, all_pairs_distance, shortest_path_geometric
from .solution import Feeder, Solution


class InfeasibleError(RuntimeError):
    """No capacity-feasible connectivity exists."""


@dataclass
class Connectivity:
    """Feeders as substation sequences only (routes not yet realized)."""

    feeders: list[list[int]]


@dataclass
class Budget:
    """Search budget: offspring count (deterministic) or wall-clock seconds."""

    iterations: int | None = None
    seconds: float | None = None

    @staticmethod
    def parse(text: str) -> "Budget":
        text = text.strip().lower()
        if text.endswith("it"):
            return Budget(iterations=int(text[:-2]))
        if text.endswith("s"):
            return Budget(seconds=float(text[:-1]))
        return Budget(seconds=float(text))


def substation_distances(instance: Instance) -> DistanceIndex:
    terminals = instance.hv_nodes + instance.mv_nodes
    return all_pairs_distance(instance.graph, terminals)


def _check_capacity(instance: Instance) -> None:
    q = instance.feeder_capacity
    for node in instance.mv_nodes:
        if instance.demand(node) > q + 1e-9:
            raise InfeasibleError(
                f"MV substation {node} demand {instance.demand(node)} exceeds "
                f"feeder capacity {q}"
            )


# ---------------------------------------------------------------------------
# Hybrid genetic search
# ---------------------------------------------------------------------------

_POP_SIZE = 25
_GENERATION_SIZE = 40
_ELITE_FRACTION = 0.4
_DIVERSITY_NEIGHBORS = 5


class _Hgs:
    def __init__(self, instance: Instance, dist: DistanceIndex, seed: int):
        self.inst = instance
        self.dist = dist
        hv = instance.hv_nodes
        mv = instance.mv_nodes
        self.depots = [dist.index[h] for h in hv]
        self.customers = [dist.index[m] for m in mv]
        self.demand = {dist.index[m]: instance.demand(m) for m in mv}
        self.q = instance.feeder_capacity
        self.D = [list(map(float, row)) for row in dist.matrix]
        self.rng = np.random.default_rng(seed)
        self.n = len(self.customers)

    # -- route machinery (routes are customer-index sequences; the depot of
    #    a route is always the best anchor for its current sequence) --

    def route_cost(self, seq: list[int]) -> float:
        D = self.D
        inner = 0.0
        for a, b in zip(seq, seq[1:]):
            inner += D[a][b]
        first, last = seq[0], seq[-1]
        best = min(D[h][first] + D[last][h] for h in self.depots)
        return best + inner

    def route_depot(self, seq: list[int]) -> int:
        D = self.D
        first, last = seq[0], seq[-1]
        return min(self.depots, key=lambda h: (D[h][first] + D[last][h], h))

    def total_cost(self, routes: list[list[int]]) -> float:
        return math.fsum(self.route_cost(r) for r in routes)

    def split(self, tour: list[int]) -> list[list[int]]:
        """Capacity-respecting optimal split of a giant tour into rings."""
        n = len(tour)
        D = self.D
        best = [math.inf] * (n + 1)
        pred = [0] * (n + 1)
        best[0] = 0.0
        for i in range(n):
            if best[i] == math.inf:
                continue
            load = 0.0
            inner = 0.0
            j = i
            while j < n:
                load += self.demand[tour[j]]
                if load > self.q + 1e-9:
                    break
                if j > i:
                    inner += D[tour[j - 1]][tour[j]]
                first, last = tour[i], tour[j]
                anchor = min(D[h][first] + D[last][h] for h in self.depots)
                cand = best[i] + anchor + inner
                if cand < best[j + 1]:
                    best[j + 1] = cand
                    pred[j + 1] = i
                j += 1
        if best[n] == math.inf:
            raise InfeasibleError("no capacity-feasible split of the giant tour")
        routes = []
        j = n
        while j > 0:
            i = pred[j]
            routes.append(tour[i:j])
            j = i
        routes.reverse()
        return routes

    # -- local search education --

    def educate(self, routes: list[list[int]]) -> list[list[int]]:
        routes = [list(r) for r in routes]
        loads = [math.fsum(self.demand[c] for c in r) for r in routes]
        improved = True
        while improved:
            improved = (
                self._relocate_pass(routes, loads)
                | self._swap_pass(routes, loads)
                | self._two_opt_pass(routes)
                | self._two_opt_star_pass(routes, loads)
            )
        return [r for r in routes if r]

    def _relocate_pass(self, routes, loads) -> bool:
        improved = False
        for ri in range(len(routes)):
            ci = 0
            while ci < len(routes[ri]):
                u = routes[ri][ci]
                base_src = self.route_cost(routes[ri])
                removed = routes[ri][:ci] + routes[ri][ci + 1:]
                src_cost = self.route_cost(removed) if removed else 0.0
                gain_src = base_src - src_cost
                moved = False
                for rj in range(len(routes)):
                    if rj == ri or not routes[rj]:
                        continue
                    if loads[rj] + self.demand[u] > self.q + 1e-9:
                        continue
                    base_dst = self.route_cost(routes[rj])
                    for pos in range(len(routes[rj]) + 1):
                        cand = routes[rj][:pos] + [u] + routes[rj][pos:]
                        delta = (self.route_cost(cand) - base_dst) - gain_src
                        if delta < -1e-9:
                            routes[rj][:] = cand
                            routes[ri][:] = removed
                            loads[rj] += self.demand[u]
                            loads[ri] -= self.demand[u]
                            improved = True
                            moved = True
                            break
                    if moved:
                        break
                if not moved:
                    ci += 1
        return improved

    def _swap_pass(self, routes, loads) -> bool:
        improved = False
        for ri in range(len(routes)):
            for rj in range(ri + 1, len(routes)):
                if not routes[ri] or not routes[rj]:
                    continue
                for ci in range(len(routes[ri])):
                    for cj in range(len(routes[rj])):
                        u, v = routes[ri][ci], routes[rj][cj]
                        if loads[ri] - self.demand[u] + self.demand[v] > self.q + 1e-9:
                            continue
                        if loads[rj] - self.demand[v] + self.demand[u] > self.q + 1e-9:
                            continue
                        before = self.route_cost(routes[ri]) + self.route_cost(routes[rj])
                        routes[ri][ci], routes[rj][cj] = v, u
                        after = self.route_cost(routes[ri]) + self.route_cost(routes[rj])
                        if after < before - 1e-9:
                            loads[ri] += self.demand[v] - self.demand[u]
                            loads[rj] += self.demand[u] - self.demand[v]
                            improved = True
                        else:
                            routes[ri][ci], routes[rj][cj] = u, v
        return improved

    def _two_opt_pass(self, routes) -> bool:
        improved = False
        for r in routes:
            if len(r) < 3:
                continue
            base = self.route_cost(r)
            for i in range(len(r) - 1):
                for j in range(i + 1, len(r)):
                    cand = r[:i] + r[i:j + 1][::-1] + r[j + 1:]
                    cost = self.route_cost(cand)
                    if cost < base - 1e-9:
                        r[:] = cand
                        base = cost
                        improved = True
        return improved

    def _two_opt_star_pass(self, routes, loads) -> bool:
        improved = False
        for ri in range(len(routes)):
            for rj in range(ri + 1, len(routes)):
                a, b = routes[ri], routes[rj]
                if not a or not b:
                    continue
                base = self.route_cost(a) + self.route_cost(b)
                for i in range(1, len(a)):
                    head_a, tail_a = a[:i], a[i:]
                    load_head_a = math.fsum(self.demand[c] for c in head_a)
                    load_tail_a = loads[ri] - load_head_a
                    for j in range(1, len(b)):
                        head_b, tail_b = b[:j], b[j:]
                        load_head_b = math.fsum(self.demand[c] for c in head_b)
                        load_tail_b = loads[rj] - load_head_b
                        if load_head_a + load_tail_b > self.q + 1e-9:
                            continue
                        if load_head_b + load_tail_a > self.q + 1e-9:
                            continue
                        na, nb = head_a + tail_b, head_b + tail_a
                        cost = self.route_cost(na) + self.route_cost(nb)
                        if cost < base - 1e-9:
                            routes[ri][:] = na
                            routes[rj][:] = nb
                            loads[ri] = load_head_a + load_tail_b
                            loads[rj] = load_head_b + load_tail_a
                            return True
        return improved

    # -- population machinery --

    @staticmethod
    def giant_tour(routes: list[list[int]]) -> list[int]:
        return [c for r in routes for c in r]

    def crossover_ox(self, p1: list[int], p2: list[int]) -> list[int]:
        n = len(p1)
        if n < 2:
            return list(p1)
        i, j = sorted(self.rng.integers(0, n, size=2))
        j += 1
        child = [None] * n
        child[i:j] = p1[i:j]
        taken = set(p1[i:j])
        fill = [c for c in p2 if c not in taken]
        it = iter(fill)
        for k in list(range(j, n)) + list(range(0, i)):
            child[k] = next(it)
        return child

    @staticmethod
    def broken_pairs(t1: list[int], t2: list[int]) -> int:
        pairs = set()
        for a, b in zip(t1, t1[1:]):
            pairs.add((a, b) if a < b else (b, a))
        broken = 0
        for a, b in zip(t2, t2[1:]):
            if ((a, b) if a < b else (b, a)) not in pairs:
                broken += 1
        return broken

    def run(self, budget: Budget) -> list[list[int]]:
        if self.n == 0:
            return []
        pop: list[dict] = []
        for _ in range(_POP_SIZE):
            tour = list(self.customers)
            self.rng.shuffle(tour)
            routes = self.educate(self.split(tour))
            pop.append(self._individual(routes))
        start = time.monotonic()
        produced = 0
        while True:
            if budget.iterations is not None and produced >= budget.iterations:
                break
            if budget.seconds is not None and time.monotonic() - start >= budget.seconds:
                break
            fitness = self._biased_fitness(pop)
            p1 = self._tournament(pop, fitness)
            p2 = self._tournament(pop, fitness)
            child_tour = self.crossover_ox(p1["tour"], p2["tour"])
            routes = self.educate(self.split(child_tour))
            pop.append(self._individual(routes))
            produced += 1
            if len(pop) >= _POP_SIZE + _GENERATION_SIZE:
                pop = self._survivors(pop)
        best = min(pop, key=lambda ind: ind["cost"])
        return best["routes"]

    def _individual(self, routes: list[list[int]]) -> dict:
        return {
            "routes": routes,
            "tour": self.giant_tour(routes),
            "cost": self.total_cost(routes),
        }

    def _biased_fitness(self, pop: list[dict]) -> list[float]:
        n = len(pop)
        by_cost = sorted(range(n), key=lambda i: (pop[i]["cost"], i))
        cost_rank = [0] * n
        for r, i in enumerate(by_cost):
            cost_rank[i] = r
        div = []
        for i in range(n):
            ds = sorted(
                self.broken_pairs(pop[i]["tour"], pop[j]["tour"])
                for j in range(n) if j != i
            )
            close = ds[:_DIVERSITY_NEIGHBORS]
            div.append(sum(close) / max(len(close), 1))
        by_div = sorted(range(n), key=lambda i: (-div[i], i))
        div_rank = [0] * n
        for r, i in enumerate(by_div):
            div_rank[i] = r
        w = 1.0 - _ELITE_FRACTION
        return [cost_rank[i] + w * div_rank[i] for i in range(n)]

    def _tournament(self, pop: list[dict], fitness: list[float]) -> dict:
        i, j = self.rng.integers(0, len(pop), size=2)
        return pop[i] if fitness[i] <= fitness[j] else pop[j]

    def _survivors(self, pop: list[dict]) -> list[dict]:
        # drop clones first, then worst biased fitness
        seen: dict[tuple, int] = {}
        keep = []
        for ind in sorted(pop, key=lambda x: x["cost"]):
            key = tuple(ind["tour"])
            if key in seen:
                continue
            seen[key] = 1
            keep.append(ind)
        if len(keep) < _POP_SIZE:
            extras = [ind for ind in sorted(pop, key=lambda x: x["cost"])
                      if len(keep) < _POP_SIZE and ind not in keep]
            keep.extend(extras[: _POP_SIZE - len(keep)])
        if len(keep) > _POP_SIZE:
            fitness = self._biased_fitness(keep)
            order = sorted(range(len(keep)), key=lambda i: fitness[i])
            keep = [keep[i] for i in order[:_POP_SIZE]]
        return keep


def solve_connectivity_hgs(instance: Instance, dist: DistanceIndex,
                           budget: Budget, seed: int) -> Connectivity:
    """Best-effort minimum-length connectivity via hybrid genetic search.

    Emits ring feeders (start depot = end depot); interconnected feeders
    arise later through the tail-exchange operator of the improvement search.
    """
    _check_capacity(instance)
    hgs = _Hgs(instance, dist, seed)
    routes = hgs.run(budget)
    feeders = []
    for seq in routes:
        depot = hgs.route_depot(seq)
        nodes = [dist.terminals[depot]] + [dist.terminals[c] for c in seq] \
            + [dist.terminals[depot]]
        feeders.append(nodes)
    return Connectivity(feeders=feeders)


# ---------------------------------------------------------------------------
# Sweep + Clarke-Wright baseline
# ---------------------------------------------------------------------------

def mcws_baseline(instance: Instance, dist: DistanceIndex) -> Connectivity:
    """Two-phase baseline: nearest-depot clustering then savings merges.

    Phase 1 assigns each MV substation to its nearest HV substation (ties by
    polar angle around the HV centroid, then node id). Phase 2 merges rings
    per depot in decreasing savings order while capacity allows.
    """
    _check_capacity(instance)
    hv = instance.hv_nodes
    mv = instance.mv_nodes
    cx = sum(instance.graph.nodes[h].x for h in hv) / len(hv)
    cy = sum(instance.graph.nodes[h].y for h in hv) / len(hv)

    def angle(node: int) -> float:
        n = instance.graph.nodes[node]
        return math.atan2(n.y - cy, n.x - cx)

    assignment: dict[int, list[int]] = {h: [] for h in hv}
    for m in mv:
        best = min(
            hv,
            key=lambda h: (dist.d(m, h), abs(angle(m) - angle(h)), h),
        )
        assignment[best].append(m)

    feeders: list[list[int]] = []
    for h in hv:
        members = assignment[h]
        if not members:
            continue
        feeders.extend(_clarke_wright(instance, dist, h, members))
    return Connectivity(feeders=feeders)


def _clarke_wright(instance: Instance, dist: DistanceIndex, depot: int,
                   customers: list[int]) -> list[list[int]]:
    q = instance.feeder_capacity
    routes = {c: [c] for c in customers}
    owner = {c: c for c in customers}
    loads = {c: instance.demand(c) for c in customers}
    savings = []
    for i, a in enumerate(customers):
        for b in customers[i + 1:]:
            s = dist.d(a, depot) + dist.d(b, depot) - dist.d(a, b)
            savings.append((s, a, b))
    savings.sort(key=lambda t: (-t[0], t[1], t[2]))
    for s, a, b in savings:
        if s <= 0:
            break
        ra, rb = owner[a], owner[b]
        if ra == rb:
            continue
        if loads[ra] + loads[rb] > q + 1e-9:
            continue
        route_a, route_b = routes[ra], routes[rb]
        # merge only at route endpoints, keeping a single chain per ring
        if route_a[-1] == a and route_b[0] == b:
            merged = route_a + route_b
        elif route_a[-1] == a and route_b[-1] == b:
            merged = route_a + route_b[::-1]
        elif route_a[0] == a and route_b[0] == b:
            merged = route_a[::-1] + route_b
        elif route_a[0] == a and route_b[-1] == b:
            merged = route_b + route_a
        else:
            continue
        del routes[rb]
        routes[ra] = merged
        loads[ra] += loads[rb]
        del loads[rb]
        for c in merged:
            owner[c] = ra
    return [[depot] + seq + [depot] for _, seq in sorted(routes.items())]


# ---------------------------------------------------------------------------
# Realization and relation-only pricing
# ---------------------------------------------------------------------------

def realize_routes(connectivity: Connectivity, graph) -> Solution:
    """Route every consecutive pair independently by geometric shortest path."""
    feeders = []
    for seq in connectivity.feeders:
        routes = [
            shortest_path_geometric(graph, a, b) for a, b in zip(seq, seq[1:])
        ]
        feeders.append(Feeder(stations=list(seq), routes=routes))
    return Solution(feeders=feeders)


def relation_only_cost(connectivity: Connectivity, dist: DistanceIndex,
                       instance: Instance) -> float:
    """Price each link independently with trench length equal to cable length.

    Uses the instance's uniform per-km costs (benchmark convention).
    """
    e0 = instance.graph.edges[0]
    unit = e0.c_tr + e0.c_ca
    return math.fsum(
        dist.d(a, b) * unit
        for seq in connectivity.feeders
        for a, b in zip(seq, seq[1:])
    )
