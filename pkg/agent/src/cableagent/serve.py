"""Inference server speaking the line-delimited JSON proposal protocol.

One process hosts one or all three operator agents (keyed by the ``op`` field
of each request). Observe frames drive online fine-tuning during the opening
window of a run; afterwards the parameters are frozen. Every reply is a full
single line flushed at once, so a terminated process never emits a partial
frame.
"""

from __future__ import annotations

import json
import logging
import os
import signal
import sys

import numpy as np
import torch

from .models import BaselineNet, PolicyNet, fresh_agent
from .training import OPERATORS, TrainConfig, Trainer, Transition, load_checkpoint

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
FRAME_TYPES = {"init", "propose_request", "propose_reply", "observe",
               "shutdown", "error"}


class AgentServer:
    """Protocol state machine, independent of the transport streams."""

    def __init__(self, checkpoint_dir=None, operator: str = "all",
                 seed: int = 0, finetune: bool = True,
                 config: TrainConfig | None = None):
        self.config = config or TrainConfig()
        ops = OPERATORS if operator == "all" else (int(operator),)
        self.agents: dict[int, tuple[PolicyNet, BaselineNet]] = {}
        self.trainers: dict[int, Trainer] = {}
        self.buffers: dict[int, list[Transition]] = {}
        self.observed: dict[int, int] = {}
        for op in ops:
            policy, baseline = self._load_or_init(checkpoint_dir, op, seed)
            policy.eval()
            self.agents[op] = (policy, baseline)
            self.buffers[op] = []
            self.observed[op] = 0
            if finetune:
                self.trainers[op] = Trainer(policy, baseline, self.config)
        self.finetune = finetune

    @staticmethod
    def _load_or_init(checkpoint_dir, op: int, seed: int):
        if checkpoint_dir is not None:
            path = os.path.join(checkpoint_dir, f"agent{op}.pt")
            if os.path.exists(path):
                stored_op, policy, baseline, _ = load_checkpoint(path)
                if stored_op != op:
                    raise ValueError(
                        f"{path} holds operator {stored_op}, expected {op}")
                return policy, baseline
        return fresh_agent(op, seed)

    def _error(self, text: str, request_id=None) -> dict:
        frame = {"type": "error", "v": PROTOCOL_VERSION, "text": text}
        if request_id is not None:
            frame["id"] = request_id
        return frame

    def handle_line(self, line: str) -> dict | None:
        """Process one input line; returns the reply frame, if any.

        Raises SystemExit(0) on shutdown.
        """
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame is not an object")
        except ValueError as exc:
            return self._error(f"malformed frame: {exc}")
        if frame.get("type") not in FRAME_TYPES:
            return self._error(f"unknown frame type {frame.get('type')!r}")
        if frame.get("v") != PROTOCOL_VERSION:
            return self._error(
                f"protocol version mismatch: {frame.get('v')!r}", frame.get("id"))
        kind = frame["type"]
        if kind == "shutdown":
            raise SystemExit(0)
        if kind == "init":
            return None
        if kind == "propose_request":
            return self._propose(frame)
        if kind == "observe":
            self._observe(frame)
            return None
        return self._error(f"unexpected frame type {kind!r}", frame.get("id"))

    def _agent_for(self, op, request_id) -> tuple[PolicyNet, BaselineNet] | None:
        if op not in self.agents:
            return None
        return self.agents[op]

    def _propose(self, frame: dict) -> dict:
        rid = frame.get("id")
        op = frame.get("op")
        pair = self._agent_for(op, rid)
        if pair is None:
            return self._error(f"no agent for operator {op!r}", rid)
        try:
            state = np.asarray(frame["state"], dtype=np.float32)
            if state.ndim != 3 or state.shape[2] != 2:
                raise ValueError(f"state shape {state.shape} is not (E, M, 2)")
            if state.shape[0] != frame.get("E") or state.shape[1] != frame.get("M"):
                raise ValueError(
                    f"state shape {state.shape[:2]} != declared "
                    f"({frame.get('E')}, {frame.get('M')})")
        except (KeyError, TypeError, ValueError) as exc:
            return self._error(f"bad propose_request: {exc}", rid)
        policy, _ = pair
        with torch.no_grad():
            probs = policy(torch.from_numpy(state).unsqueeze(0))[0]
        vec = probs.double().numpy()
        vec = vec / vec.sum()  # exact unit sum after float32 -> float64
        return {"type": "propose_reply", "v": PROTOCOL_VERSION, "id": rid,
                "probs": vec.tolist()}

    def _observe(self, frame: dict) -> None:
        op = frame.get("op")
        if op not in self.agents:
            return
        try:
            transition = Transition(
                state=np.asarray(frame["state"], dtype=np.float32),
                action=[int(a) for a in frame["action"]],
                reward=float(frame["reward"]),
                operator=int(op),
            )
        except (KeyError, TypeError, ValueError) as exc:
            log.warning("dropping bad observe frame: %s", exc)
            return
        if not self.finetune or self.observed[op] >= self.config.finetune_window:
            return
        self.observed[op] += 1
        self.buffers[op].append(transition)
        if len(self.buffers[op]) >= self.config.batch:
            batch = self.buffers[op][:self.config.batch]
            del self.buffers[op][:self.config.batch]
            policy = self.agents[op][0]
            policy.train()
            self.trainers[op].update(batch)
            policy.eval()

    def run(self, stdin=None, stdout=None) -> int:
        stdin = stdin or sys.stdin
        stdout = stdout or sys.stdout
        signal.signal(signal.SIGTERM, lambda *_: sys.exit(0))
        for line in stdin:
            if not line.strip():
                continue
            try:
                reply = self.handle_line(line)
            except SystemExit:
                return 0
            if reply is not None:
                stdout.write(json.dumps(reply, separators=(",", ":")) + "\n")
                stdout.flush()
        return 0
