"""Learned destruction-proposal agents for the cableplan search."""

from .models import BaselineNet, PolicyNet, fresh_agent
from .serve import AgentServer
from .training import (
    TrainConfig,
    Trainer,
    Transition,
    action_log_prob,
    collate,
    load_checkpoint,
    load_trajectories,
    pretrain,
    reinforce_loss,
    reward,
    save_checkpoint,
    smooth,
    trend_improved,
)

__all__ = [
    "AgentServer", "BaselineNet", "PolicyNet", "TrainConfig", "Trainer",
    "Transition", "action_log_prob", "collate", "fresh_agent",
    "load_checkpoint", "load_trajectories", "pretrain", "reinforce_loss",
    "reward", "save_checkpoint", "smooth", "trend_improved",
]
