"""Experiment harness and command-line interface.

Subcommands: gen (instances), solve (one run), bench (multi-seed statistics),
sweep (parameter sensitivity), stats (summaries from run records). All
artifacts are CSV or JSON and regenerable from (case, method, seed, config).

Exit codes: 0 ok, 2 usage error, 3 infeasible instance, 4 agent failure.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import bridge, initialization, instance as inst_mod, mvns, solution as sol_mod

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_AGENT = 4

METHODS = ("mcws", "hgs", "sns1", "sns2", "sns3", "mvns", "lmvns")


@dataclass
class RunRecord:
    method: str
    case: int
    seed: int
    cost: float
    runtime: float
    trace_path: str = ""


@dataclass
class StatSummary:
    method: str
    mean: float
    variance: float
    gap_percent: float
    best: bool


def _load_instance(args) -> inst_mod.Instance:
    if getattr(args, "instance", None):
        return inst_mod.load(args.instance)
    return inst_mod.builtin_case(args.case)


def _make_sampler(args, instance):
    mode = getattr(args, "sampler", "uniform")
    if mode == "uniform":
        return mvns.UniformSampler()
    if not getattr(args, "agent_cmd", None):
        raise AgentUnavailable("--sampler learned/mixed requires --agent-cmd")
    learned = bridge.LearnedSampler(
        instance, args.agent_cmd.split(), timeout=args.agent_timeout
    )
    if mode == "learned":
        return bridge.MixedSampler(learned, mvns.UniformSampler(), p_learned=1.0)
    return bridge.MixedSampler(learned, mvns.UniformSampler(), p_learned=args.mix_prob)


class AgentUnavailable(RuntimeError):
    pass


def build_initial(instance, init_method: str, budget: initialization.Budget,
                  seed: int):
    dist = initialization.substation_distances(instance)
    if init_method == "mcws":
        conn = initialization.mcws_baseline(instance, dist)
    else:
        conn = initialization.solve_connectivity_hgs(instance, dist, budget, seed)
    return conn, dist


def run_single(instance, method: str, seed: int,
               iterations: int = 600, neighbors: int = 10,
               init_budget: initialization.Budget | None = None,
               sampler=None, debug: bool = False,
               record_fh=None):
    """One end-to-end run; returns (cost, trace or None, solution or None)."""
    if init_budget is None:
        init_budget = initialization.Budget(iterations=2000)
    dist = initialization.substation_distances(instance)
    if method == "mcws":
        conn = initialization.mcws_baseline(instance, dist)
        return initialization.relation_only_cost(conn, dist, instance), None, None
    if method == "hgs":
        conn = initialization.solve_connectivity_hgs(instance, dist, init_budget, seed)
        return initialization.relation_only_cost(conn, dist, instance), None, None
    conn = initialization.solve_connectivity_hgs(instance, dist, init_budget, seed)
    init = initialization.realize_routes(conn, instance.graph)
    config = mvns.SearchConfig(neighbors=neighbors, iterations=iterations,
                               seed=seed, debug_check=debug)
    if sampler is None:
        if record_fh is not None:
            sampler = bridge.RecordingSampler(record_fh)
        else:
            sampler = mvns.UniformSampler()
    if method == "mvns" or method == "lmvns":
        best, trace = mvns.mvns_search(instance, init, config, sampler)
    elif method in ("sns1", "sns2", "sns3"):
        best, trace = mvns.sns_search(instance, init, config, which=int(method[-1]),
                                      sampler=sampler)
    else:
        raise ValueError(f"unknown method {method}")
    cost = sol_mod.evaluate_f2(best, instance).total
    return cost, trace, best


def _bench_worker(job):
    case, method, seed, iterations, neighbors, init_iters, out_dir = job
    instance = inst_mod.builtin_case(case)
    start = time.monotonic()
    cost, trace, best = run_single(
        instance, method, seed, iterations=iterations, neighbors=neighbors,
        init_budget=initialization.Budget(iterations=init_iters),
    )
    runtime = time.monotonic() - start
    trace_path = ""
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if trace is not None:
            trace_path = str(out / f"{method}-case{case}-seed{seed}.trace.csv")
            Path(trace_path).write_text(trace.to_csv())
        if best is not None:
            sol_path = out / f"{method}-case{case}-seed{seed}.solution.json"
            sol_path.write_bytes(sol_mod.serialize_solution(best, instance))
    return RunRecord(method=method, case=case, seed=seed, cost=cost,
                     runtime=runtime, trace_path=trace_path)


def run_experiment(case: int, method: str, n_runs: int = 10, base_seed: int = 0,
                   iterations: int = 600, neighbors: int = 10,
                   init_iters: int = 2000, out_dir: str = "",
                   workers: int = 1) -> list[RunRecord]:
    if method not in METHODS:
        raise ValueError(f"unknown method {method}")
    jobs = [
        (case, method, base_seed + i, iterations, neighbors, init_iters, out_dir)
        for i in range(n_runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_bench_worker, jobs))
    return [_bench_worker(j) for j in jobs]


def summarize(records: list[RunRecord]) -> list[StatSummary]:
    """Per-method mean, population variance, and percent gap to the best mean."""
    by_method: dict[str, list[float]] = {}
    for r in records:
        by_method.setdefault(r.method, []).append(r.cost)
    means = {m: math.fsum(v) / len(v) for m, v in by_method.items()}
    best_mean = min(means.values())
    out = []
    for m, costs in by_method.items():
        mu = means[m]
        var = math.fsum((c - mu) ** 2 for c in costs) / len(costs)
        gap = (mu - best_mean) / best_mean * 100.0
        out.append(StatSummary(method=m, mean=mu, variance=var,
                               gap_percent=gap, best=(mu == best_mean)))
    return out


def summary_csv(summaries: list[StatSummary]) -> str:
    lines = ["method,mean,variance,gap_percent,best"]
    for s in summaries:
        lines.append(
            f"{s.method},{s.mean:.2f},{s.variance:.2f},{s.gap_percent:.2f},"
            f"{int(s.best)}"
        )
    return "\n".join(lines) + "\n"


def operator_stats(traces: list[mvns.SearchTrace]) -> dict[int, int]:
    counts = {1: 0, 2: 0, 3: 0}
    for t in traces:
        for op in (1, 2, 3):
            counts[op] += t.win_counts[op]
    return counts


def sweep(parameter: str, values: list[float], case: int, n_runs: int,
          base_seed: int = 0, iterations: int = 400, neighbors: int = 10,
          workers: int = 1) -> list[tuple[float, RunRecord]]:
    """Per-value MVNS batches with shared seeds; rows suit boxplot rebuilds."""
    if not values:
        raise ValueError("sweep needs at least one parameter value")
    if parameter not in ("init_time", "neighborhood_size"):
        raise ValueError(f"unknown sweep parameter {parameter}")
    rows = []
    for v in values:
        if parameter == "init_time":
            records = run_experiment(
                case, "mvns", n_runs=n_runs, base_seed=base_seed,
                iterations=iterations, neighbors=neighbors,
                init_iters=int(v), workers=workers,
            )
        else:
            records = run_experiment(
                case, "mvns", n_runs=n_runs, base_seed=base_seed,
                iterations=iterations, neighbors=int(v), workers=workers,
            )
        rows.extend((v, r) for r in records)
    return rows


def _read_config(path: str) -> dict[str, str]:
    """KEY=VALUE lines; '#' starts a comment; keys match CLI flag names."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _build_parser() -> tuple[argparse.ArgumentParser, dict]:
    p = argparse.ArgumentParser(prog="cableplan")
    p.add_argument("--config", help="key=value config file; flags override it")
    sub = p.add_subparsers(dest="command", required=True)
    subparsers: dict[str, argparse.ArgumentParser] = {}

    def add_instance_args(sp):
        sp.add_argument("--case", type=int, choices=range(5))
        sp.add_argument("--instance", help="path to an instance JSON file")

    g = sub.add_parser("gen", help="generate a benchmark instance")
    g.add_argument("--case", type=int, choices=range(5))
    g.add_argument("--grid", type=int, help="lattice size n (custom instance)")
    g.add_argument("--mv", type=int)
    g.add_argument("--hv", type=int)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run one solve")
    add_instance_args(s)
    s.add_argument("--mode", default="mvns",
                   choices=["init", "mvns", "sns1", "sns2", "sns3"])
    s.add_argument("--init", default="hgs", choices=["hgs", "mcws"])
    s.add_argument("--init-budget", default="2000it",
                   help="e.g. 200s (wall clock) or 2000it (deterministic)")
    s.add_argument("--iters", type=int, default=600)
    s.add_argument("--neighbors", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sampler", default="uniform",
                   choices=["uniform", "learned", "mixed"])
    s.add_argument("--agent-cmd", help="command line of the proposal agent")
    s.add_argument("--mix-prob", type=float, default=0.7)
    s.add_argument("--agent-timeout", type=float, default=10.0)
    s.add_argument("--debug-check", action="store_true")
    s.add_argument("--out-solution")
    s.add_argument("--trace")
    s.add_argument("--record-trajectory",
                   help="write (state, action, reward) transitions to this JSONL file")

    b = sub.add_parser("bench", help="multi-seed benchmark runs")
    b.add_argument("--case", type=int, required=True, choices=range(5))
    b.add_argument("--method", required=True, choices=METHODS)
    b.add_argument("--runs", type=int, default=10)
    b.add_argument("--base-seed", type=int, default=0)
    b.add_argument("--iters", type=int, default=600)
    b.add_argument("--neighbors", type=int, default=10)
    b.add_argument("--init-iters", type=int, default=2000)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--agent-cmd")
    b.add_argument("--out-dir", default="")
    b.add_argument("--out", help="CSV of run records")

    w = sub.add_parser("sweep", help="sensitivity sweep")
    w.add_argument("--param", required=True,
                   choices=["init_time", "neighborhood_size"])
    w.add_argument("--values", required=True,
                   help="comma-separated parameter values")
    w.add_argument("--case", type=int, required=True, choices=range(5))
    w.add_argument("--runs", type=int, default=10)
    w.add_argument("--base-seed", type=int, default=0)
    w.add_argument("--iters", type=int, default=400)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--out", required=True)

    st = sub.add_parser("stats", help="summarize run-record CSVs")
    st.add_argument("--records", required=True, nargs="+",
                    help="run-record CSV files (method,case,seed,cost,runtime)")
    st.add_argument("--out")
    subparsers.update(gen=g, solve=s, bench=b, sweep=w, stats=st)
    return p, subparsers


def _cmd_gen(args) -> int:
    if args.case is not None:
        inst = inst_mod.builtin_case(args.case)
    else:
        if args.grid is None or args.mv is None or args.hv is None:
            print("gen needs --case or all of --grid/--mv/--hv", file=sys.stderr)
            return EXIT_USAGE
        graph = inst_mod.generate_lattice(args.grid, 1.0)
        inst = inst_mod.place_substations(graph, args.mv, args.hv, seed=args.seed,
                                          grid_n=args.grid)
    inst_mod.save(inst, args.out)
    print(f"wrote {args.out}: {len(inst.graph.nodes)} nodes, "
          f"{len(inst.graph.edges)} edges, {len(inst.substations)} substations")
    return EXIT_OK


def _cmd_solve(args) -> int:
    instance = _load_instance(args)
    budget = initialization.Budget.parse(args.init_budget)
    try:
        conn, dist = build_initial(instance, args.init, budget, args.seed)
    except initialization.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    init = initialization.realize_routes(conn, instance.graph)
    init_cost = sol_mod.evaluate_f2(init, instance).total
    print(f"initial ({args.init}): relation-only "
          f"{initialization.relation_only_cost(conn, dist, instance):.2f}, "
          f"realized F2 {init_cost:.2f}")
    if args.mode == "init":
        best, trace = init, None
    else:
        try:
            sampler = _make_sampler(args, instance)
        except AgentUnavailable as exc:
            print(f"agent failure: {exc}", file=sys.stderr)
            return EXIT_AGENT
        record_fh = None
        if args.record_trajectory:
            record_fh = open(args.record_trajectory, "w")
            sampler = bridge.RecordingSampler(record_fh)
        config = mvns.SearchConfig(neighbors=args.neighbors, iterations=args.iters,
                                   seed=args.seed, sampler_mode=args.sampler,
                                   mix_prob=args.mix_prob,
                                   debug_check=args.debug_check)
        try:
            if args.mode == "mvns":
                best, trace = mvns.mvns_search(instance, init, config, sampler)
            else:
                best, trace = mvns.sns_search(instance, init, config,
                                              which=int(args.mode[-1]),
                                              sampler=sampler)
        finally:
            sampler.close()
            if record_fh is not None:
                record_fh.close()
        print(f"final F2: {sol_mod.evaluate_f2(best, instance).total:.2f} "
              f"after {args.iters} iterations")
    if args.trace and trace is not None:
        Path(args.trace).write_text(trace.to_csv())
    if args.out_solution:
        Path(args.out_solution).write_bytes(
            sol_mod.serialize_solution(best, instance))
    return EXIT_OK


def _records_csv(records: list[RunRecord]) -> str:
    lines = ["method,case,seed,cost,runtime,trace_path"]
    for r in records:
        lines.append(f"{r.method},{r.case},{r.seed},{r.cost!r},"
                     f"{r.runtime:.3f},{r.trace_path}")
    return "\n".join(lines) + "\n"


def _cmd_bench(args) -> int:
    if args.method == "lmvns" and not args.agent_cmd:
        print("benchmarking lmvns requires --agent-cmd (no silent fallback); "
              "configure the proposal agent command", file=sys.stderr)
        return EXIT_AGENT
    try:
        records = run_experiment(
            args.case, args.method, n_runs=args.runs, base_seed=args.base_seed,
            iterations=args.iters, neighbors=args.neighbors,
            init_iters=args.init_iters, out_dir=args.out_dir,
            workers=args.workers,
        )
    except initialization.InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    text = _records_csv(records)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    values = [float(v) for v in args.values.split(",") if v.strip()]
    if not values:
        print("sweep needs at least one value", file=sys.stderr)
        return EXIT_USAGE
    rows = sweep(args.param, values, args.case, args.runs,
                 base_seed=args.base_seed, iterations=args.iters,
                 workers=args.workers)
    lines = [f"{args.param},seed,cost,runtime"]
    for v, r in rows:
        lines.append(f"{v:g},{r.seed},{r.cost!r},{r.runtime:.3f}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out} ({len(rows)} rows)")
    return EXIT_OK


def _cmd_stats(args) -> int:
    records = []
    for path in args.records:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(RunRecord(
                    method=row["method"], case=int(row["case"]),
                    seed=int(row["seed"]), cost=float(row["cost"]),
                    runtime=float(row.get("runtime", 0) or 0),
                ))
    if not records:
        print("no records found", file=sys.stderr)
        return EXIT_USAGE
    text = summary_csv(summarize(records))
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def main(argv=None) -> int:
    parser, subparsers = _build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = subparsers[args.command]
        for key, raw in _read_config(args.config).items():
            attr = key.replace("-", "_")
            if not hasattr(args, attr):
                continue
            default = sub.get_default(attr)
            if getattr(args, attr) != default:
                continue  # an explicit command-line flag wins over the config
            value: object = raw
            if isinstance(default, bool):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif default is not None:
                value = type(default)(raw)
            setattr(args, attr, value)
    handlers = {
        "gen": _cmd_gen,
        "solve": _cmd_solve,
        "bench": _cmd_bench,
        "sweep": _cmd_sweep,
        "stats": _cmd_stats,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
