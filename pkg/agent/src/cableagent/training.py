"""REINFORCE training for the destruction-proposal agents.

Transitions are (state, action, reward) records collected from search
trajectories. The policy loss is the advantage-weighted negative action
log-likelihood; a multi-link action's log-probability uses the sequential
without-replacement (Plackett-Luce) factorization matching how the search
samples loci. The baseline network is regressed on the observed rewards.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .models import BaselineNet, PolicyNet, fresh_agent

log = logging.getLogger(__name__)

OPERATORS = (1, 2, 3)


def reward(c_next: float, c_best: float) -> float:
    """Relative improvement over the incumbent best, zero when not improving."""
    if c_best <= 0:
        raise ValueError(f"c_best must be positive, got {c_best}")
    return (c_best - c_next) / c_best if c_next < c_best else 0.0


@dataclass
class Transition:
    state: np.ndarray  # (E, M, 2)
    action: list[int]  # link row indices, in sampling order
    reward: float
    operator: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.reward < 1.0:
            raise ValueError(f"reward must lie in [0, 1), got {self.reward}")


@dataclass
class TrainConfig:
    batch: int = 32
    learning_rate: float = 1e-4
    warmup_fraction: float = 0.1
    epochs: int = 50
    finetune_window: int = 200  # transitions observed before freezing

    def __post_init__(self) -> None:
        if min(self.batch, self.learning_rate, self.epochs) <= 0:
            raise ValueError("batch, learning_rate and epochs must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")


def load_trajectories(path) -> dict[int, list[Transition]]:
    """Read a JSONL trajectory file into per-operator transition lists."""
    per_op: dict[int, list[Transition]] = {op: [] for op in OPERATORS}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            per_op[rec["op"]].append(Transition(
                state=np.asarray(rec["state"], dtype=np.float32),
                action=[int(a) for a in rec["action"]],
                reward=float(rec["reward"]),
                operator=int(rec["op"]),
            ))
    if all(not v for v in per_op.values()):
        raise ValueError(f"no transitions in {path}")
    return per_op


def collate(batch: list[Transition], dtype=torch.float32):
    """Pad a batch to common (E, M) and build the real-link mask."""
    e_max = max(t.state.shape[0] for t in batch)
    m_max = max(t.state.shape[1] for t in batch)
    states = torch.zeros(len(batch), e_max, m_max, 2, dtype=dtype)
    mask = torch.zeros(len(batch), e_max, dtype=torch.bool)
    for i, t in enumerate(batch):
        e, m, _ = t.state.shape
        states[i, :e, :m] = torch.as_tensor(t.state, dtype=dtype)
        mask[i, :e] = True
    rewards = torch.tensor([t.reward for t in batch], dtype=dtype)
    actions = [t.action for t in batch]
    return states, mask, actions, rewards


def action_log_prob(log_probs: torch.Tensor, action: list[int]) -> torch.Tensor:
    """Sequential without-replacement log-likelihood of an ordered link set.

    log_probs is one sample's (E,) log-softmax output; each draw renormalizes
    over the links not yet chosen.
    """
    probs = log_probs.exp()
    total = log_probs.new_zeros(())
    remaining = log_probs.new_ones(())
    for j in action:
        total = total + log_probs[j] - torch.log(remaining.clamp(min=1e-12))
        remaining = remaining - probs[j]
    return total


def reinforce_loss(policy: PolicyNet, baseline: BaselineNet,
                   states: torch.Tensor, mask: torch.Tensor,
                   actions: list[list[int]], rewards: torch.Tensor,
                   detach_baseline: bool = True):
    """Policy loss -(1/B) sum (r - b(s)) log p(a|s) and the baseline MSE."""
    log_probs = policy.log_probs(states, mask)
    action_lp = torch.stack([
        action_log_prob(log_probs[i], actions[i]) for i in range(len(actions))
    ])
    values = baseline(states, mask)
    advantage = rewards - (values.detach() if detach_baseline else values)
    policy_loss = -(advantage * action_lp).mean()
    baseline_loss = torch.mean((values - rewards) ** 2)
    return policy_loss, baseline_loss, action_lp


@dataclass
class Trainer:
    """One agent's optimizer state with warmup scheduling and skip handling."""

    policy: PolicyNet
    baseline: BaselineNet
    config: TrainConfig
    total_updates: int = 0  # planned; 0 disables warmup
    halved: bool = field(default=False, init=False)
    steps: int = field(default=0, init=False)

    def __post_init__(self) -> None:
        lr = self.config.learning_rate
        self.opt_policy = torch.optim.Adam(self.policy.parameters(), lr=lr)
        self.opt_baseline = torch.optim.Adam(self.baseline.parameters(), lr=lr)
        warm = max(1, math.ceil(self.config.warmup_fraction * self.total_updates))
        ramp = (lambda step: min(1.0, (step + 1) / warm)) if self.total_updates \
            else (lambda step: 1.0)
        self.sched_policy = torch.optim.lr_scheduler.LambdaLR(self.opt_policy, ramp)
        self.sched_baseline = torch.optim.lr_scheduler.LambdaLR(self.opt_baseline, ramp)

    def update(self, batch: list[Transition]) -> dict | None:
        """One REINFORCE step; returns metrics or None on a skipped batch."""
        states, mask, actions, rewards = collate(batch)
        policy_loss, baseline_loss, action_lp = reinforce_loss(
            self.policy, self.baseline, states, mask, actions, rewards)
        loss = policy_loss + baseline_loss
        if not torch.isfinite(loss):
            log.warning("non-finite loss %r; skipping batch", float(loss))
            if not self.halved:
                for opt in (self.opt_policy, self.opt_baseline):
                    for group in opt.param_groups:
                        group["lr"] *= 0.5
                self.halved = True
            return None
        self.opt_policy.zero_grad()
        self.opt_baseline.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(self.policy.parameters(), 1.0)
        torch.nn.utils.clip_grad_norm_(self.baseline.parameters(), 1.0)
        self.opt_policy.step()
        self.opt_baseline.step()
        self.sched_policy.step()
        self.sched_baseline.step()
        self.steps += 1
        with torch.no_grad():
            weights = action_lp.exp()
            weighted = float((weights * rewards).sum() / weights.sum().clamp(min=1e-30))
        return {
            "policy_loss": policy_loss.detach().item(),
            "baseline_loss": baseline_loss.detach().item(),
            "mean_reward": float(rewards.mean()),
            "weighted_reward": weighted,
        }


def smooth(series, window: int = 30) -> np.ndarray:
    """Trailing moving average with a growing head window."""
    arr = np.asarray(series, dtype=float)
    out = np.empty_like(arr)
    csum = np.concatenate([[0.0], np.cumsum(arr)])
    for i in range(len(arr)):
        lo = max(0, i + 1 - window)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


def trend_improved(series, window: int = 30) -> bool:
    """Final decile of the smoothed series at or above the first decile."""
    sm = smooth(series, window)
    decile = max(1, len(sm) // 10)
    return float(sm[-decile:].mean()) >= float(sm[:decile].mean())


def pretrain(per_op: dict[int, list[Transition]], config: TrainConfig,
             seed: int = 0, progress=None) -> dict[int, dict]:
    """Train one agent per operator by epochs of shuffled mini-batches.

    Returns, per operator, the trained networks, the per-update
    weighted-reward series (the Fig.-style learning curve input), and the
    per-epoch means.
    """
    results: dict[int, dict] = {}
    for op, transitions in per_op.items():
        if not transitions:
            continue
        policy, baseline = fresh_agent(op, seed)
        n_batches = len(transitions) // config.batch
        if n_batches == 0:
            raise ValueError(
                f"operator {op}: {len(transitions)} transitions < batch {config.batch}")
        trainer = Trainer(policy, baseline, config,
                          total_updates=config.epochs * n_batches)
        rng = np.random.default_rng([seed, op])
        series: list[float] = []
        epoch_means: list[float] = []
        for epoch in range(config.epochs):
            order = rng.permutation(len(transitions))
            epoch_vals = []
            for b in range(n_batches):
                batch = [transitions[i]
                         for i in order[b * config.batch:(b + 1) * config.batch]]
                metrics = trainer.update(batch)
                if metrics is not None:
                    series.append(metrics["weighted_reward"])
                    epoch_vals.append(metrics["weighted_reward"])
            epoch_means.append(float(np.mean(epoch_vals)) if epoch_vals else 0.0)
            if progress is not None:
                progress(op, epoch, epoch_means[-1])
        results[op] = {
            "policy": policy,
            "baseline": baseline,
            "series": series,
            "epoch_means": epoch_means,
            "trend_improved": trend_improved(series),
        }
    return results


def save_checkpoint(path, operator: int, policy: PolicyNet,
                    baseline: BaselineNet, config: TrainConfig) -> None:
    torch.save({
        "version": 1,
        "operator": operator,
        "hidden": policy.hidden,
        "policy": policy.state_dict(),
        "baseline": baseline.state_dict(),
        "config": vars(config),
    }, path)


def load_checkpoint(path) -> tuple[int, PolicyNet, BaselineNet, TrainConfig]:
    blob = torch.load(path, weights_only=True)
    if blob.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    policy = PolicyNet(hidden=blob["hidden"])
    baseline = BaselineNet(hidden=blob["hidden"])
    policy.load_state_dict(blob["policy"])
    baseline.load_state_dict(blob["baseline"])
    return blob["operator"], policy, baseline, TrainConfig(**blob["config"])
