"""Destroy-and-repair variable neighborhood search.

Each iteration samples destruction loci for three complementary operators
(route removal, intra-feeder 2-opt, inter-feeder tail exchange), repairs every
candidate with marginal-cost A*, and accepts the best candidate only on strict
improvement. The perturbation size grows with the stagnation counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instance import Instance
from .routing import RoutedPath, SaturationError, marginal_cost_astar
from .solution import Solution, check_feasible, cost_from_usage, usage_map


@dataclass
class DestructionLoci:
    op: int
    links: list[tuple[int, int]]  # (feeder index, link index) pairs


@dataclass
class SearchConfig:
    neighbors: int = 10
    iterations: int = 600
    seed: int = 0
    sampler_mode: str = "uniform"  # uniform | learned | mixed
    mix_prob: float = 0.7
    debug_check: bool = False


@dataclass
class TraceEntry:
    iteration: int
    best_cost: float
    kappa: int
    st: int
    accepted_op: int | None


@dataclass
class SearchTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    win_counts: dict[int, int] = field(default_factory=lambda: {1: 0, 2: 0, 3: 0})
    fallback_count: int = 0

    def to_csv(self) -> str:
        lines = ["iteration,best_cost,kappa,st,accepted_op"]
        for e in self.entries:
            op = "" if e.accepted_op is None else str(e.accepted_op)
            lines.append(f"{e.iteration},{e.best_cost!r},{e.kappa},{e.st},{op}")
        return "\n".join(lines) + "\n"


def set_kappa(st: int) -> int:
    """Perturbation size schedule driven by the stagnation counter."""
    if st < 0:
        raise ValueError(f"stagnation counter must be >= 0, got {st}")
    if st < 20:
        return 2
    if st < 30:
        return 4
    if st < 40:
        return 6
    return 8


class Working:
    """A solution plus incrementally maintained usage counts and cost."""

    def __init__(self, solution: Solution, instance: Instance,
                 usage: dict[int, int] | None = None, cost: float | None = None):
        self.solution = solution
        self.instance = instance
        if usage is None:
            usage = usage_map(solution)
        self.usage = usage
        if cost is None:
            cost = cost_from_usage(usage, instance).total
        self.cost = cost

    def clone(self) -> "Working":
        return Working(self.solution.clone(), self.instance,
                       usage=dict(self.usage), cost=self.cost)

    def remove_route(self, fi: int, li: int) -> None:
        feeder = self.solution.feeders[fi]
        route = feeder.routes[li]
        if route is None:
            return
        edges = self.instance.graph.edges
        for eid in route.edges:
            k = self.usage[eid]
            e = edges[eid]
            self.cost -= e.c_ca * e.length
            if k == 1:
                self.cost -= e.c_tr * e.length
                del self.usage[eid]
            else:
                self.usage[eid] = k - 1
        feeder.routes[li] = None

    def set_route(self, fi: int, li: int, route: RoutedPath) -> None:
        edges = self.instance.graph.edges
        for eid in route.edges:
            k = self.usage.get(eid, 0)
            e = edges[eid]
            self.cost += e.c_ca * e.length
            if k == 0:
                self.cost += e.c_tr * e.length
            self.usage[eid] = k + 1
        self.solution.feeders[fi].routes[li] = route

    def recomputed_cost(self) -> float:
        return cost_from_usage(usage_map(self.solution), self.instance).total


# ---------------------------------------------------------------------------
# Loci sampling (one weighted procedure; uniform is the unweighted special case)
# ---------------------------------------------------------------------------

_MAX_RESAMPLE = 20


def _weighted_draw(rng: np.random.Generator, weights: np.ndarray) -> int:
    total = weights.sum()
    if total <= 0:
        raise ValueError("no sampling mass left")
    r = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if r < acc:
            return i
    return int(np.nonzero(weights)[0][-1])


def sample_loci(solution: Solution, op: int, kappa: int,
                rng: np.random.Generator,
                weights: np.ndarray | None = None) -> DestructionLoci | None:
    """Draw destruction loci, weighted by per-link probabilities.

    With weights=None every link carries equal mass, which is the plain MVNS
    sampling rule. Returns None when the operator is inapplicable. A
    `fallback` attribute is set on the result when degenerate weights forced
    a uniform retry.
    """
    links = list(solution.links())
    e = len(links)
    if e == 0:
        return None
    w = np.full(e, 1.0 / e) if weights is None else np.asarray(weights, dtype=float).copy()
    if len(w) != e:
        raise ValueError(f"weight vector length {len(w)} != link count {e}")
    fallback = False

    if op == 1:
        m = min(kappa, e)
        chosen = []
        wk = w.copy()
        for _ in range(m):
            if wk.sum() <= 0:
                wk = np.where([i not in chosen for i in range(e)], 1.0, 0.0)
                fallback = True
            idx = _weighted_draw(rng, wk)
            chosen.append(idx)
            wk[idx] = 0.0
        loci = DestructionLoci(op=1, links=[links[i] for i in chosen])

    elif op == 2:
        feeder_links: dict[int, list[int]] = {}
        for row, (fi, _) in enumerate(links):
            feeder_links.setdefault(fi, []).append(row)
        eligible = [fi for fi, rows in feeder_links.items() if len(rows) >= 4]
        if not eligible:
            return None
        fw = np.array([max(w[feeder_links[fi]].sum(), 0.0) for fi in eligible])
        if fw.sum() <= 0:
            fw = np.ones(len(eligible))
            fallback = True
        fi = eligible[_weighted_draw(rng, fw)]
        rows = feeder_links[fi]
        pair = None
        for _ in range(_MAX_RESAMPLE):
            lw = np.maximum(w[rows], 0.0)
            if lw.sum() <= 0:
                break
            a = _weighted_draw(rng, lw)
            lw2 = lw.copy()
            lw2[a] = 0.0
            if lw2.sum() <= 0:
                break
            b = _weighted_draw(rng, lw2)
            i, j = sorted((a, b))
            if j - i >= 2:
                pair = (i, j)
                break
        if pair is None:
            fallback = True
            valid = [(i, j) for i in range(len(rows)) for j in range(i + 2, len(rows))]
            pair = valid[int(rng.integers(len(valid)))]
        i, j = pair
        loci = DestructionLoci(op=2, links=[links[rows[i]], links[rows[j]]])

    elif op == 3:
        feeders_present = {fi for fi, _ in links}
        if len(feeders_present) < 2:
            return None
        first = _weighted_draw(rng, np.maximum(w, 0.0) if w.sum() > 0 else np.ones(e))
        fa = links[first][0]
        second = None
        for _ in range(_MAX_RESAMPLE):
            ws = np.maximum(w, 0.0)
            if ws.sum() <= 0:
                break
            cand = _weighted_draw(rng, ws)
            if links[cand][0] != fa:
                second = cand
                break
        if second is None:
            fallback = True
            others = [row for row, (fi, _) in enumerate(links) if fi != fa]
            second = others[int(rng.integers(len(others)))]
        loci = DestructionLoci(op=3, links=[links[first], links[second]])

    else:
        raise ValueError(f"unknown operator {op}")

    loci.fallback = fallback
    return loci


def sample_locs_uniform(solution: Solution, op: int, kappa: int,
                        rng: np.random.Generator) -> DestructionLoci | None:
    return sample_loci(solution, op, kappa, rng, weights=None)


# ---------------------------------------------------------------------------
# Destruction operators
# ---------------------------------------------------------------------------

def destroy_d1(working: Working, loci: DestructionLoci) -> bool:
    for fi, li in loci.links:
        working.remove_route(fi, li)
    return True


def destroy_d2(working: Working, loci: DestructionLoci) -> bool:
    (fi, i), (fj, j) = loci.links
    if fi != fj or j < i + 2:
        raise ValueError("intra-feeder 2-opt needs two non-adjacent links of one feeder")
    feeder = working.solution.feeders[fi]
    working.remove_route(fi, i)
    working.remove_route(fi, j)
    st = feeder.stations
    feeder.stations = st[: i + 1] + st[i + 1: j + 1][::-1] + st[j + 1:]
    old_routes = list(feeder.routes)
    for t in range(i + 1, j):
        src = old_routes[t]
        feeder.routes[i + j - t] = src.reversed() if src is not None else None
    feeder.routes[i] = None
    feeder.routes[j] = None
    return True


def destroy_d3(working: Working, loci: DestructionLoci) -> bool:
    """Inter-feeder tail exchange. Returns False when the exchange is
    structurally degenerate or capacity-infeasible (candidate rejected)."""
    (fa, ia), (fb, ib) = loci.links
    if fa == fb:
        raise ValueError("tail exchange needs two distinct feeders")
    sol = working.solution
    a, b = sol.feeders[fa], sol.feeders[fb]
    if a.stations[ia] == b.stations[ib + 1] or b.stations[ib] == a.stations[ia + 1]:
        return False  # joint link would collapse to a single node
    working.remove_route(fa, ia)
    working.remove_route(fb, ib)
    new_a_st = a.stations[: ia + 1] + b.stations[ib + 1:]
    new_b_st = b.stations[: ib + 1] + a.stations[ia + 1:]
    new_a_rt = a.routes[:ia] + [None] + b.routes[ib + 1:]
    new_b_rt = b.routes[:ib] + [None] + a.routes[ia + 1:]
    a.stations, a.routes = new_a_st, new_a_rt
    b.stations, b.routes = new_b_st, new_b_rt
    q = working.instance.feeder_capacity
    for f in (a, b):
        if f.load(working.instance) > q + 1e-9:
            return False
    # a feeder reduced to two HV anchors serves nothing; drop it
    for fi in sorted((fa, fb), reverse=True):
        if len(sol.feeders[fi].stations) < 3:
            dropped = sol.feeders[fi]
            if any(r is not None for r in dropped.routes):
                for li in range(dropped.n_links):
                    working.remove_route(fi, li)
            del sol.feeders[fi]
    return True


def apply_destroy(working: Working, loci: DestructionLoci) -> bool:
    if loci.op == 1:
        return destroy_d1(working, loci)
    if loci.op == 2:
        return destroy_d2(working, loci)
    return destroy_d3(working, loci)


def repair(working: Working, rng: np.random.Generator) -> bool:
    """Re-plan all missing routes with marginal-cost A* in a random order.

    Returns False when some corridor is saturated on this ordering (the
    candidate is discarded).
    """
    missing = [
        (fi, li)
        for fi, f in enumerate(working.solution.feeders)
        for li, r in enumerate(f.routes)
        if r is None
    ]
    order = rng.permutation(len(missing))
    graph = working.instance.graph
    for k in order:
        fi, li = missing[k]
        f = working.solution.feeders[fi]
        a, b = f.stations[li], f.stations[li + 1]
        try:
            route = marginal_cost_astar(graph, working.usage, a, b)
        except SaturationError:
            return False
        working.set_route(fi, li, route)
    return True


# ---------------------------------------------------------------------------
# Samplers
# ---------------------------------------------------------------------------

class UniformSampler:
    """Plain MVNS sampling: equal mass on every link."""

    def sample(self, working: Working, op: int, kappa: int,
               rng: np.random.Generator, mix_rng: np.random.Generator):
        return sample_loci(working.solution, op, kappa, rng), None

    def observe(self, meta, reward: float) -> None:
        pass

    def close(self) -> None:
        pass


# ---------------------------------------------------------------------------
# Main search
# ---------------------------------------------------------------------------

def candidate_rng(master_seed: int, iteration: int, op: int, neighbor: int):
    return np.random.default_rng([master_seed, iteration, op, neighbor])


def mix_rng_for(master_seed: int, iteration: int, op: int, neighbor: int):
    # separate stream so the learned/uniform routing draw never desyncs loci
    return np.random.default_rng([master_seed, iteration, op, neighbor, 1])


def _search(instance: Instance, init: Solution, config: SearchConfig,
            sampler, operators: list[int],
            iteration_hook=None) -> tuple[Solution, SearchTrace]:
    incumbent = Working(init.clone(), instance)
    best_cost = incumbent.cost
    st = 0
    trace = SearchTrace()
    for t in range(1, config.iterations + 1):
        kappa = set_kappa(st)
        best_cand: tuple[float, int, int, Working] | None = None
        pending: list[tuple[object, float]] = []  # (meta, candidate cost)
        for neighbor in range(config.neighbors):
            for op in operators:
                rng = candidate_rng(config.seed, t, op, neighbor)
                mrng = mix_rng_for(config.seed, t, op, neighbor)
                loci, meta = sampler.sample(incumbent, op, kappa, rng, mrng)
                if loci is None:
                    continue
                if getattr(loci, "fallback", False):
                    trace.fallback_count += 1
                cand = incumbent.clone()
                ok = apply_destroy(cand, loci)
                if ok:
                    ok = repair(cand, rng)
                if not ok:
                    if meta is not None:
                        pending.append((meta, math.inf))
                    continue
                if config.debug_check:
                    recomputed = cand.recomputed_cost()
                    rel = abs(cand.cost - recomputed) / max(abs(recomputed), 1.0)
                    if rel > 1e-9:
                        raise AssertionError(
                            f"incremental cost {cand.cost!r} deviates from "
                            f"recomputed {recomputed!r} (rel {rel:g})"
                        )
                    violations = check_feasible(cand.solution, instance)
                    if violations:
                        raise AssertionError(
                            f"candidate infeasible: {violations[:3]}"
                        )
                if meta is not None:
                    pending.append((meta, cand.cost))
                key = (cand.cost, op, neighbor)
                if best_cand is None or key < (best_cand[0], best_cand[1], best_cand[2]):
                    best_cand = (cand.cost, op, neighbor, cand)
        for meta, cost in pending:
            reward = (best_cost - cost) / best_cost if cost < best_cost else 0.0
            sampler.observe(meta, reward)
        accepted_op = None
        if best_cand is not None and best_cand[0] < best_cost:
            _, op, _, cand = best_cand
            incumbent = cand
            best_cost = cand.cost
            st = 0
            accepted_op = op
            trace.win_counts[op] += 1
        else:
            st += 1
        trace.entries.append(TraceEntry(t, best_cost, kappa, st, accepted_op))
        if iteration_hook is not None:
            iteration_hook(t, incumbent, best_cost)
    return incumbent.solution, trace


def mvns_search(instance: Instance, init: Solution, config: SearchConfig,
                sampler=None) -> tuple[Solution, SearchTrace]:
    if sampler is None:
        sampler = UniformSampler()
    return _search(instance, init, config, sampler, operators=[1, 2, 3])


def sns_search(instance: Instance, init: Solution, config: SearchConfig,
               which: int, sampler=None) -> tuple[Solution, SearchTrace]:
    """Single-operator ablation; neighborhood size 30 keeps candidate parity."""
    if which not in (1, 2, 3):
        raise ValueError(f"operator must be 1, 2, or 3, got {which}")
    if sampler is None:
        sampler = UniformSampler()
    cfg = SearchConfig(
        neighbors=config.neighbors * 3,
        iterations=config.iterations,
        seed=config.seed,
        sampler_mode=config.sampler_mode,
        mix_prob=config.mix_prob,
        debug_check=config.debug_check,
    )
    return _search(instance, init, cfg, sampler, operators=[which])
