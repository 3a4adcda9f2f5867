"""Command-line entry point: serve proposals or pretrain from trajectories."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from .serve import AgentServer
from .training import (
    TrainConfig,
    load_trajectories,
    pretrain,
    save_checkpoint,
    smooth,
)

EXIT_OK = 0
EXIT_USAGE = 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="cableagent",
        description="destruction-proposal agents: inference server and trainer")
    p.add_argument("--mode", choices=["serve", "pretrain"], required=True)
    p.add_argument("--checkpoint-dir", default=None,
                   help="directory with agent{1,2,3}.pt checkpoints")
    p.add_argument("--operator", choices=["1", "2", "3", "all"], default="all",
                   help="which agents this process hosts / trains")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-finetune", action="store_true",
                   help="serve with frozen parameters")
    p.add_argument("--finetune-window", type=int, default=200,
                   help="observe frames consumed before freezing (serve mode)")
    p.add_argument("--trajectories", default=None,
                   help="JSONL transition file (pretrain mode)")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=1e-4)
    p.add_argument("--log-csv", default=None,
                   help="per-epoch mean reward log (pretrain mode)")
    p.add_argument("--curve-csv", default=None,
                   help="window-30 smoothed per-update reward curve (pretrain mode)")
    return p


def _pretrain(args) -> int:
    if args.trajectories is None or args.checkpoint_dir is None:
        print("pretrain needs --trajectories and --checkpoint-dir", file=sys.stderr)
        return EXIT_USAGE
    config = TrainConfig(batch=args.batch, learning_rate=args.learning_rate,
                         epochs=args.epochs)
    per_op = load_trajectories(args.trajectories)
    if args.operator != "all":
        per_op = {int(args.operator): per_op[int(args.operator)]}
    os.makedirs(args.checkpoint_dir, exist_ok=True)

    def progress(op, epoch, mean_reward):
        print(f"agent {op} epoch {epoch + 1}/{config.epochs}: "
              f"weighted reward {mean_reward:.5f}", flush=True)

    results = pretrain(per_op, config, seed=args.seed, progress=progress)
    for op, res in results.items():
        path = os.path.join(args.checkpoint_dir, f"agent{op}.pt")
        save_checkpoint(path, op, res["policy"], res["baseline"], config)
        print(f"agent {op}: checkpoint {path}, trend "
              f"{'improved' if res['trend_improved'] else 'flat-or-down'}")
    if args.log_csv:
        with open(args.log_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["operator", "epoch", "mean_reward"])
            for op, res in results.items():
                for epoch, val in enumerate(res["epoch_means"]):
                    w.writerow([op, epoch, f"{val:.6f}"])
    if args.curve_csv:
        with open(args.curve_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["operator", "update", "smoothed_reward"])
            for op, res in results.items():
                for i, val in enumerate(smooth(res["series"], 30)):
                    w.writerow([op, i, f"{val:.6f}"])
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, stream=sys.stderr)
    args = _build_parser().parse_args(argv)
    if args.mode == "pretrain":
        return _pretrain(args)
    config = TrainConfig(finetune_window=args.finetune_window)
    server = AgentServer(checkpoint_dir=args.checkpoint_dir,
                         operator=args.operator, seed=args.seed,
                         finetune=not args.no_finetune, config=config)
    return server.run()


if __name__ == "__main__":
    sys.exit(main())
