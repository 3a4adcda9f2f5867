import math

import pytest

from cableplan import initialization
from cableplan.instance import Instance, Substation, generate_lattice
from cableplan.routing import DistanceIndex, RoutedPath, shortest_path_geometric
from cableplan.solution import (
    Feeder,
    Solution,
    check_feasible,
    cost_from_usage,
    deserialize_solution,
    evaluate_f1,
    evaluate_f2,
    serialize_solution,
    usage_map,
)
from toys import make_toy, set_demands


def _bare_instance(grid: int) -> Instance:
    g = generate_lattice(grid, 1.0)
    return Instance(name="bare", graph=g, substations=[], grid_n=grid)


def _route(graph, a: int, b: int) -> RoutedPath:
    return shortest_path_geometric(graph, a, b)


def test_usage_counts_shared_corridor():
    inst = _bare_instance(3)
    g = inst.graph
    # two feeders each routing the same straight 3-edge corridor 0 -> 3
    r1, r2 = _route(g, 0, 3), _route(g, 0, 3)
    sol = Solution(feeders=[Feeder([0, 3], routes=[r1]), Feeder([0, 3], routes=[r2])])
    usage = usage_map(sol)
    assert sorted(usage.values()) == [2, 2, 2]
    cost = cost_from_usage(usage, inst)
    assert cost.trench_cost == pytest.approx(3 * 1.5)
    assert cost.cable_cost == pytest.approx(3 * 2 * 0.5)
    assert cost.total == pytest.approx(7.5)
    assert cost.total_cable_length == pytest.approx(6.0)


def test_usage_single_feeder_disjoint_routes():
    inst = _bare_instance(3)
    g = inst.graph
    sol = Solution(feeders=[Feeder([0, 3, 15], routes=[_route(g, 0, 3), _route(g, 3, 15)])])
    assert set(usage_map(sol).values()) <= {1}


def test_missing_route_is_structural_error():
    sol = Solution(feeders=[Feeder([0, 3], routes=[None])])
    with pytest.raises(ValueError, match="no realized route"):
        usage_map(sol)


def test_f2_single_and_parallel_cables():
    inst = _bare_instance(2)
    assert cost_from_usage({0: 1}, inst).total == pytest.approx(2.0)
    # two parallel cables on one edge beat two separate edges by one trench
    assert cost_from_usage({0: 2}, inst).total == pytest.approx(2.5)
    assert cost_from_usage({0: 1, 1: 1}, inst).total == pytest.approx(4.0)


def test_f2_empty_solution():
    inst = _bare_instance(2)
    assert evaluate_f2(Solution(feeders=[]), inst).total == 0.0


def test_f2_linear_on_disjoint_edge_sets():
    inst = _bare_instance(4)
    part_a = {0: 2, 1: 1}
    part_b = {5: 3, 9: 1}
    whole = dict(part_a)
    whole.update(part_b)
    assert cost_from_usage(whole, inst).total == pytest.approx(
        cost_from_usage(part_a, inst).total + cost_from_usage(part_b, inst).total
    )


def test_f2_sharing_bound_is_equality():
    inst = _bare_instance(4)
    usage = {0: 2, 3: 1, 7: 6}
    cost = cost_from_usage(usage, inst)
    edges = inst.graph.edges
    cable_km = sum(edges[e].length * k for e, k in usage.items())
    trench_km = sum(edges[e].length for e in usage)
    assert cost.total == pytest.approx(0.5 * cable_km + 1.5 * trench_km)


def test_f1_single_link_and_ring():
    d = DistanceIndex([10, 11, 12], [[0, 4, 5], [4, 0, 2], [5, 2, 0]])
    assert evaluate_f1([[10, 11]], d) == 4.0
    assert evaluate_f1([[10, 11, 12, 10]], d) == 4 + 2 + 5


def test_feeder_helpers():
    f = Feeder([1, 2, 3, 1])
    assert f.n_links == 3
    assert f.interior == [2, 3]
    assert f.is_ring()
    assert not Feeder([1, 2, 4]).is_ring()
    c = f.clone()
    c.stations[1] = 9
    assert f.stations[1] == 2


def test_check_feasible_initializer_output(case1, case1_init):
    assert check_feasible(case1_init, case1) == []
    assert max(usage_map(case1_init).values()) <= 6


def test_capacity_violation_magnitude():
    inst = make_toy(4, 3, 1, seed=2)
    set_demands(inst, [4.0, 4.0, 2.4])
    (hv,) = inst.hv_nodes
    seq = [hv] + inst.mv_nodes + [hv]
    routes = [_route(inst.graph, a, b) for a, b in zip(seq, seq[1:])]
    sol = Solution(feeders=[Feeder(seq, routes=routes)])
    violations = [v for v in check_feasible(sol, inst) if v.constraint == "capacity_exceeded"]
    assert len(violations) == 1
    assert violations[0].magnitude == pytest.approx(0.4)


def test_duplicate_mv_assignment_violation():
    inst = make_toy(4, 3, 1, seed=2)
    (hv,) = inst.hv_nodes
    a, b, c = inst.mv_nodes
    conn = initialization.Connectivity([[hv, a, b, hv], [hv, a, c, hv]])
    sol = initialization.realize_routes(conn, inst.graph)
    bad = [v for v in check_feasible(sol, inst) if v.constraint == "mv_assignment"]
    assert len(bad) == 1 and bad[0].magnitude == 2


def test_unserved_mv_violation():
    inst = make_toy(4, 3, 1, seed=2)
    (hv,) = inst.hv_nodes
    a, b, c = inst.mv_nodes
    conn = initialization.Connectivity([[hv, a, b, hv]])
    sol = initialization.realize_routes(conn, inst.graph)
    bad = [v for v in check_feasible(sol, inst) if v.constraint == "mv_assignment"]
    assert [(v.where, v.magnitude) for v in bad] == [(f"mv node {c}", 0)]


def test_structure_violations():
    inst = make_toy(4, 3, 1, seed=2)
    (hv,) = inst.hv_nodes
    a, b, c = inst.mv_nodes
    # non-HV endpoint and missing route
    f = Feeder([a, b, c], routes=[_route(inst.graph, a, b), None])
    kinds = {v.constraint for v in check_feasible(Solution([f]), inst)}
    assert "endpoint_not_hv" in kinds
    assert "missing_route" in kinds
    assert "interior_not_mv" not in kinds


def test_route_endpoint_mismatch_detected():
    inst = make_toy(4, 3, 1, seed=2)
    (hv,) = inst.hv_nodes
    a, b, c = inst.mv_nodes
    routes = [_route(inst.graph, hv, a), _route(inst.graph, hv, b)]  # wrong start
    f = Feeder([hv, a, b], routes=routes)
    # second route should run a -> b but runs hv -> b
    kinds = [v.constraint for v in check_feasible(Solution([f]), inst)]
    assert "route_endpoint_mismatch" in kinds


def test_cable_cap_violation_detected():
    inst = _bare_instance(3)
    inst.substations = [Substation(0, "HV"), Substation(3, "MV", 2.0)]
    inst.graph.nodes[0].kind = "hv_substation"
    inst.graph.nodes[3].kind = "mv_substation"
    r = _route(inst.graph, 0, 3)
    feeders = [Feeder([0, 3, 0], routes=[r, r.reversed()]) for _ in range(4)]
    sol = Solution(feeders=feeders)
    kinds = [v.constraint for v in check_feasible(sol, inst)]
    assert "cable_cap_exceeded" in kinds  # 8 cables on a cap-6 corridor


def test_solution_serialization_round_trip(case1, case1_init):
    blob = serialize_solution(case1_init, case1)
    again = deserialize_solution(blob, case1)
    assert [f.stations for f in again.feeders] == [f.stations for f in case1_init.feeders]
    assert evaluate_f2(again, case1).total == pytest.approx(
        evaluate_f2(case1_init, case1).total, abs=1e-12
    )
    assert serialize_solution(again, case1) == blob


def test_f1_hgs_not_worse_than_mcws(case1, case1_dist):
    hgs = initialization.solve_connectivity_hgs(
        case1, case1_dist, initialization.Budget(iterations=300), seed=0
    )
    mcws = initialization.mcws_baseline(case1, case1_dist)
    f1_hgs = evaluate_f1(hgs.feeders, case1_dist)
    f1_mcws = evaluate_f1(mcws.feeders, case1_dist)
    assert f1_hgs <= f1_mcws + 1e-9
