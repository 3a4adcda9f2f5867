"""Learning-assisted neighborhood generation, primary side.

Encodes the incumbent solution as a per-link coordinate tensor, talks to an
external proposal agent over line-delimited JSON on the child's standard
streams, and turns the returned per-link probabilities into destruction loci.
A mixed sampler routes each candidate to the learned or the uniform rule.
Agent failure never aborts the search: every failure path degrades to
uniform sampling for that candidate.
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .instance import Instance
from .mvns import DestructionLoci, Working, sample_loci

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT = 10.0

FRAME_TYPES = {"init", "propose_request", "propose_reply", "observe", "shutdown", "error"}


class ProtocolError(ValueError):
    pass


@dataclass
class StateTensor:
    """E x M x 2 array of normalized route coordinates plus a row index table.

    Rows are ordered by (canonical feeder rank, link position); feeders rank
    by their first interior MV node id so storage order never leaks into the
    encoding. Short routes are zero-padded to M nodes.
    """

    array: np.ndarray
    rows: list[tuple[int, int]]  # row -> (feeder index, link index)

    @property
    def e(self) -> int:
        return self.array.shape[0]

    @property
    def m(self) -> int:
        return self.array.shape[1]


def encode_state(working: Working) -> StateTensor:
    sol = working.solution
    inst: Instance = working.instance
    extent = inst.extent() or 1.0
    order = sorted(
        range(len(sol.feeders)),
        key=lambda fi: (min(sol.feeders[fi].interior, default=-1), fi),
    )
    rows: list[tuple[int, int]] = []
    routes = []
    for fi in order:
        f = sol.feeders[fi]
        for li in range(f.n_links):
            rows.append((fi, li))
            routes.append(f.routes[li])
    m = max((len(r.nodes) for r in routes if r is not None), default=1)
    arr = np.zeros((len(rows), m, 2))
    for row, route in enumerate(routes):
        if route is None:
            continue
        for k, node in enumerate(route.nodes):
            x, y = inst.graph.coords(node)
            arr[row, k, 0] = x / extent
            arr[row, k, 1] = y / extent
    return StateTensor(array=arr, rows=rows)


def validate_probs(probs, e: int) -> np.ndarray | None:
    """Accept only a finite, non-negative length-E vector summing to 1±1e-6."""
    try:
        arr = np.asarray(probs, dtype=float)
    except (TypeError, ValueError):
        return None
    if arr.shape != (e,) or not np.all(np.isfinite(arr)) or np.any(arr < 0):
        return None
    if abs(arr.sum() - 1.0) > 1e-6:
        return None
    return arr


def propose_loci(probs: np.ndarray, op: int, kappa: int,
                 rng: np.random.Generator, working: Working,
                 state: StateTensor | None = None) -> DestructionLoci | None:
    """Weighted loci sampling from a per-link probability vector.

    probs is indexed in StateTensor row order; it is re-aligned to the
    solution's own link ordering before sampling.
    """
    if state is None:
        state = encode_state(working)
    sol = working.solution
    links = list(sol.links())
    if len(probs) != len(links):
        raise ProtocolError(
            f"probability vector length {len(probs)} != link count {len(links)}"
        )
    row_of = {link: i for i, link in enumerate(state.rows)}
    weights = np.empty(len(links))
    for i, link in enumerate(links):
        weights[i] = probs[row_of[link]]
    return sample_loci(sol, op, kappa, rng, weights=weights)


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------

def encode_frame(frame: dict) -> str:
    if frame.get("type") not in FRAME_TYPES:
        raise ProtocolError(f"unknown frame type {frame.get('type')!r}")
    out = dict(frame)
    out.setdefault("v", PROTOCOL_VERSION)
    return json.dumps(out, separators=(",", ":")) + "\n"


def decode_frame(line: str) -> dict:
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed frame: {exc.msg}") from exc
    if not isinstance(frame, dict) or frame.get("type") not in FRAME_TYPES:
        raise ProtocolError(f"unknown frame type in {line[:80]!r}")
    if frame.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: {frame.get('v')!r}")
    return frame


class AgentClient:
    """One proposal-agent child process with request/reply framing."""

    def __init__(self, command: list[str], timeout: float = DEFAULT_TIMEOUT):
        self.command = command
        self.timeout = timeout
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue[str] = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()
        self._next_id = 0
        self.warning_count = 0
        self._dead_logged = False

    def _read_loop(self) -> None:
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line)

    def alive(self) -> bool:
        return self.proc.poll() is None

    def _send(self, frame: dict) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(encode_frame(frame))
        self.proc.stdin.flush()

    def send_noreply(self, frame: dict) -> bool:
        if not self.alive():
            self._log_dead()
            return False
        try:
            self._send(frame)
            return True
        except (BrokenPipeError, OSError):
            self._log_dead()
            return False

    def request(self, frame: dict) -> dict | None:
        """Send one frame and wait for its tagged reply; None on any failure."""
        if not self.alive():
            self._log_dead()
            return None
        frame = dict(frame)
        frame["id"] = self._next_id
        self._next_id += 1
        try:
            self._send(frame)
        except (BrokenPipeError, OSError):
            self._log_dead()
            return None
        deadline = self.timeout
        while True:
            try:
                line = self._lines.get(timeout=deadline)
            except queue.Empty:
                self.warning_count += 1
                log.warning("agent reply timed out after %.1fs", self.timeout)
                return None
            try:
                reply = decode_frame(line)
            except ProtocolError as exc:
                self.warning_count += 1
                log.warning("dropping malformed agent frame: %s", exc)
                continue  # resync on the next newline
            if reply.get("id") != frame["id"]:
                continue  # stale reply from an earlier timed-out request
            return reply

    def _log_dead(self) -> None:
        if not self._dead_logged:
            log.warning("proposal agent process is not running; using uniform sampling")
            self._dead_logged = True

    def shutdown(self, grace: float = 5.0) -> None:
        if self.alive():
            try:
                self._send({"type": "shutdown"})
            except (BrokenPipeError, OSError):
                pass
            try:
                self.proc.wait(timeout=grace)
            except subprocess.TimeoutExpired:
                self.proc.kill()
        if self.proc.stdin is not None:
            try:
                self.proc.stdin.close()
            except OSError:
                pass


class LearnedSampler:
    """Per-operator agent processes behind the sampler interface.

    Each destruction operator talks to its own child process; a request
    failure of any kind falls back to uniform sampling for that candidate.
    """

    def __init__(self, instance: Instance, command: list[str],
                 timeout: float = DEFAULT_TIMEOUT, processes_per_op: bool = True):
        self.instance = instance
        if processes_per_op:
            self.clients = {op: AgentClient(command, timeout) for op in (1, 2, 3)}
        else:
            shared = AgentClient(command, timeout)
            self.clients = {1: shared, 2: shared, 3: shared}
        sent = set()
        for op, client in self.clients.items():
            if id(client) in sent:
                continue
            sent.add(id(client))
            client.send_noreply({
                "type": "init",
                "instance": instance.name,
                "operator": op if processes_per_op else 0,
            })

    def sample(self, working: Working, op: int, kappa: int,
               rng: np.random.Generator, mix_rng: np.random.Generator):
        state = encode_state(working)
        reply = self.clients[op].request({
            "type": "propose_request",
            "op": op,
            "kappa": kappa,
            "E": state.e,
            "M": state.m,
            "state": state.array.tolist(),
        })
        probs = None
        if reply is not None and reply.get("type") == "propose_reply":
            probs = validate_probs(reply.get("probs"), state.e)
            if probs is None:
                self.clients[op].warning_count += 1
                log.warning("agent proposal failed validation; using uniform sampling")
        if probs is None:
            return sample_loci(working.solution, op, kappa, rng), None
        loci = propose_loci(probs, op, kappa, rng, working, state=state)
        if loci is None:
            return None, None
        row_of = {link: i for i, link in enumerate(state.rows)}
        action = [row_of[link] for link in loci.links]
        meta = {"op": op, "state": state.array.tolist(), "action": action}
        return loci, meta

    def observe(self, meta, reward: float) -> None:
        frame = {"type": "observe", "reward": reward}
        frame.update(meta)
        self.clients[meta["op"]].send_noreply(frame)

    def close(self) -> None:
        seen = set()
        for client in self.clients.values():
            if id(client) not in seen:
                seen.add(id(client))
                client.shutdown()


class MixedSampler:
    """Bernoulli(p) routing between the learned and the uniform sampler.

    The routing draw comes from the dedicated mix stream, so candidates keep
    identical loci streams whichever branch they take.
    """

    def __init__(self, learned, uniform, p_learned: float = 0.7):
        if not 0.0 <= p_learned <= 1.0:
            raise ValueError(f"p_learned must be in [0, 1], got {p_learned}")
        self.learned = learned
        self.uniform = uniform
        self.p_learned = p_learned
        self.learned_count = 0
        self.uniform_count = 0

    def sample(self, working: Working, op: int, kappa: int,
               rng: np.random.Generator, mix_rng: np.random.Generator):
        if mix_rng.random() < self.p_learned:
            self.learned_count += 1
            return self.learned.sample(working, op, kappa, rng, mix_rng)
        self.uniform_count += 1
        return self.uniform.sample(working, op, kappa, rng, mix_rng)

    def observe(self, meta, reward: float) -> None:
        if meta is not None:
            self.learned.observe(meta, reward)

    def close(self) -> None:
        self.learned.close()
        self.uniform.close()


class RecordingSampler:
    """Uniform sampling that also logs (state, action, reward) transitions.

    Used to collect pretraining trajectories from plain MVNS runs; one JSON
    object per line, the same field layout as the observe frame.
    """

    def __init__(self, fh):
        self.fh = fh

    def sample(self, working: Working, op: int, kappa: int,
               rng: np.random.Generator, mix_rng: np.random.Generator):
        state = encode_state(working)
        loci = sample_loci(working.solution, op, kappa, rng)
        if loci is None:
            return None, None
        row_of = {link: i for i, link in enumerate(state.rows)}
        action = [row_of[link] for link in loci.links]
        meta = {"op": op, "state": state.array.tolist(), "action": action}
        return loci, meta

    def observe(self, meta, reward: float) -> None:
        record = {"op": meta["op"], "state": meta["state"],
                  "action": meta["action"], "reward": reward}
        self.fh.write(json.dumps(record, separators=(",", ":")) + "\n")

    def close(self) -> None:
        self.fh.flush()
