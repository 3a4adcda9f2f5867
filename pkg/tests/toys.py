"""Small instance builders shared across test modules."""

from __future__ import annotations

from cableplan import instance as inst_mod


def make_toy(grid: int, n_mv: int, n_hv: int, seed: int,
             demand: float | None = None) -> inst_mod.Instance:
    """Generated lattice instance, optionally with all MV demands overridden."""
    graph = inst_mod.generate_lattice(grid, 1.0)
    inst = inst_mod.place_substations(graph, n_mv, n_hv, seed=seed, grid_n=grid)
    if demand is not None:
        set_demands(inst, [demand] * n_mv)
    return inst


def set_demands(inst: inst_mod.Instance, demands: list[float]) -> None:
    mv = [s for s in inst.substations if s.level == "MV"]
    assert len(mv) == len(demands)
    for s, q in zip(mv, demands):
        s.demand = q
    if hasattr(inst, "_demands"):
        del inst._demands
