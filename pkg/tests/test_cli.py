import csv

import pytest

from cableplan import cli
from cableplan.cli import (
    EXIT_AGENT,
    EXIT_INFEASIBLE,
    EXIT_OK,
    EXIT_USAGE,
    RunRecord,
    _read_config,
    operator_stats,
    run_experiment,
    summarize,
    summary_csv,
    sweep,
)
from cableplan.mvns import SearchTrace, TraceEntry


def _record(method, cost, seed=0, case=1):
    return RunRecord(method=method, case=case, seed=seed, cost=cost, runtime=0.0)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

def test_summarize_published_means_reproduce_published_gaps():
    means = {
        "mcws": 3787.80, "hgs": 3244.40, "sns1": 2559.75, "sns2": 2582.91,
        "sns3": 2535.95, "mvns": 2481.42, "lmvns": 2489.23,
    }
    gaps = {
        "mcws": 52.65, "hgs": 30.75, "sns1": 3.16, "sns2": 4.09,
        "sns3": 2.20, "mvns": 0.00, "lmvns": 0.31,
    }
    summaries = summarize([_record(m, c) for m, c in means.items()])
    by_method = {s.method: s for s in summaries}
    for method, gap in gaps.items():
        assert by_method[method].gap_percent == pytest.approx(gap, abs=0.01)
    assert by_method["mvns"].best
    assert sum(s.best for s in summaries) == 1


def test_summarize_single_method_gap_zero():
    (s,) = summarize([_record("mvns", 100.0), _record("mvns", 110.0)])
    assert s.gap_percent == 0.0 and s.best
    assert s.mean == 105.0
    assert s.variance == 25.0  # population variance, n divisor


def test_summarize_single_run_variance_zero():
    (s,) = summarize([_record("mcws", 42.0)])
    assert s.variance == 0.0


def test_summary_csv_layout():
    text = summary_csv(summarize([_record("mvns", 100.0), _record("hgs", 150.0)]))
    lines = text.strip().splitlines()
    assert lines[0] == "method,mean,variance,gap_percent,best"
    assert any(line.startswith("hgs,150.00,0.00,50.00,0") for line in lines)


def test_operator_stats_counts():
    trace = SearchTrace()
    for op in (1, 1, 2, 1, 3):
        trace.win_counts[op] += 1
    assert operator_stats([trace, trace]) == {1: 6, 2: 2, 3: 2}


# ---------------------------------------------------------------------------
# experiment harness
# ---------------------------------------------------------------------------

def test_mcws_runs_are_deterministic():
    records = run_experiment(0, "mcws", n_runs=3, init_iters=10)
    assert len({r.cost for r in records}) == 1
    (s,) = summarize(records)
    assert s.variance == 0.0


def test_run_experiment_rejects_unknown_method():
    with pytest.raises(ValueError):
        run_experiment(0, "magic", n_runs=1)


def test_sweep_requires_values():
    with pytest.raises(ValueError):
        sweep("init_time", [], case=0, n_runs=1)
    with pytest.raises(ValueError):
        sweep("learning_rate", [1.0], case=0, n_runs=1)


def test_read_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("iters=100  # fast\n\n# comment only\nseed=7\n")
    assert _read_config(str(cfg)) == {"iters": "100", "seed": "7"}
    cfg.write_text("no equals here\n")
    with pytest.raises(ValueError):
        _read_config(str(cfg))


# ---------------------------------------------------------------------------
# command-line entry points
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_instance_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("inst") / "tiny.json"
    rc = cli.main(["gen", "--grid", "4", "--mv", "3", "--hv", "1",
                   "--seed", "5", "--out", str(path)])
    assert rc == EXIT_OK
    return path


def test_gen_requires_case_or_custom_shape(tmp_path, capsys):
    rc = cli.main(["gen", "--grid", "4", "--out", str(tmp_path / "x.json")])
    assert rc == EXIT_USAGE
    assert "gen needs" in capsys.readouterr().err


def test_gen_builtin_case(tmp_path):
    out = tmp_path / "case0.json"
    assert cli.main(["gen", "--case", "0", "--out", str(out)]) == EXIT_OK
    from cableplan import instance as inst_mod

    inst = inst_mod.load(out)
    assert len(inst.mv_nodes) == 20 and len(inst.hv_nodes) == 4


def test_solve_init_mode(tiny_instance_file, capsys):
    rc = cli.main(["solve", "--instance", str(tiny_instance_file),
                   "--mode", "init", "--init-budget", "50it"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "relation-only" in out and "realized F2" in out


def test_solve_end_to_end_writes_artifacts(tiny_instance_file, tmp_path, capsys):
    sol_path = tmp_path / "solution.json"
    trace_path = tmp_path / "trace.csv"
    rc = cli.main(["solve", "--instance", str(tiny_instance_file),
                   "--mode", "mvns", "--iters", "10", "--neighbors", "3",
                   "--init-budget", "50it", "--seed", "1", "--debug-check",
                   "--out-solution", str(sol_path), "--trace", str(trace_path)])
    assert rc == EXIT_OK
    assert "final F2" in capsys.readouterr().out
    assert trace_path.read_text().startswith("iteration,best_cost")
    from cableplan import instance as inst_mod, solution as sol_mod

    inst = inst_mod.load(tiny_instance_file)
    sol = sol_mod.deserialize_solution(sol_path.read_bytes(), inst)
    assert sol_mod.check_feasible(sol, inst) == []


def test_solve_record_trajectory(tiny_instance_file, tmp_path):
    traj = tmp_path / "traj.jsonl"
    rc = cli.main(["solve", "--instance", str(tiny_instance_file),
                   "--mode", "mvns", "--iters", "5", "--neighbors", "2",
                   "--init-budget", "20it", "--record-trajectory", str(traj)])
    assert rc == EXIT_OK
    assert traj.exists() and traj.read_text().strip()


def test_solve_infeasible_instance(tmp_path, capsys):
    import json

    from cableplan import instance as inst_mod

    doc = json.loads(inst_mod.serialize(inst_mod.builtin_case(0)))
    big = next(s for s in doc["substations"] if s["level"] == "MV")
    big["demand"] = 50.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.warns(UserWarning):
        rc = cli.main(["solve", "--instance", str(path), "--mode", "init",
                       "--init-budget", "10it"])
    assert rc == EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


def test_solve_learned_without_agent_cmd(tiny_instance_file, capsys):
    rc = cli.main(["solve", "--instance", str(tiny_instance_file),
                   "--mode", "mvns", "--iters", "2", "--init-budget", "20it",
                   "--sampler", "learned"])
    assert rc == EXIT_AGENT
    assert "agent" in capsys.readouterr().err


def test_bench_lmvns_requires_agent(capsys):
    rc = cli.main(["bench", "--case", "0", "--method", "lmvns", "--runs", "1"])
    assert rc == EXIT_AGENT
    assert "no silent fallback" in capsys.readouterr().err


def test_bench_and_stats_round_trip(tmp_path, capsys):
    records_csv = tmp_path / "records.csv"
    rc = cli.main(["bench", "--case", "0", "--method", "mcws", "--runs", "2",
                   "--init-iters", "10", "--out", str(records_csv)])
    assert rc == EXIT_OK
    capsys.readouterr()
    with open(records_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and rows[0]["method"] == "mcws"

    summary_path = tmp_path / "summary.csv"
    rc = cli.main(["stats", "--records", str(records_csv),
                   "--out", str(summary_path)])
    assert rc == EXIT_OK
    text = summary_path.read_text()
    assert text.startswith("method,mean,variance")
    assert ",0.00,0.00,1" in text  # variance 0, gap 0, best


def test_stats_no_records(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("method,case,seed,cost,runtime\n")
    rc = cli.main(["stats", "--records", str(empty)])
    assert rc == EXIT_USAGE


def test_sweep_cli_empty_values(tmp_path, capsys):
    rc = cli.main(["sweep", "--param", "init_time", "--values", ",",
                   "--case", "0", "--out", str(tmp_path / "s.csv")])
    assert rc == EXIT_USAGE


def test_sweep_cli_writes_rows(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = cli.main(["sweep", "--param", "neighborhood_size", "--values", "2,3",
                   "--case", "0", "--runs", "1", "--iters", "3",
                   "--out", str(out)])
    assert rc == EXIT_OK
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "neighborhood_size,seed,cost,runtime"
    assert len(lines) == 3


def test_config_file_defaults(tiny_instance_file, tmp_path, capsys):
    cfg = tmp_path / "cfg"
    cfg.write_text("init-budget=20it\niters=3\n")
    rc = cli.main(["--config", str(cfg), "solve",
                   "--instance", str(tiny_instance_file), "--mode", "mvns",
                   "--neighbors", "2"])
    assert rc == EXIT_OK
    assert "after 3 iterations" in capsys.readouterr().out
