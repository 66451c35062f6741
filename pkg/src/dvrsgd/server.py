"""Parameter server: authoritative w, pull gating, updates, stage snapshots.

The server serializes two activities on one inbox (a single event loop stands
in for a daemon thread plus a computing thread sharing a lock on w):

* pull gating -- a pull for an update task with timestamp t is answered only
  once every update timestamp < t - tau is finished; a pull for an evaluation
  task waits until every update timestamp < t is finished, so all workers
  receive the identical stage-final w.  Ineligible pulls stay buffered and are
  re-examined, in ascending task-timestamp order, after every applied update.
* update application -- each UpdatePush replaces w wholesale via the
  configured update rule (default: the hybrid rule
  w = (1-theta)*(w - eta*delta) + theta*w_bar) and marks its timestamp
  finished.

Finished timestamps are tracked as a watermark plus a sparse overflow set,
since tasks complete nearly in order.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .protocol import (EvalPush, PullRequest, PullResponse, SnapshotBroadcast,
                       Stop, TaskAssign, TaskKind, UpdatePush)
from .transport import Node
from .vrgrad import Snapshot

__all__ = ["HyperParams", "FinishedTasks", "ParamServer", "ProtocolError",
           "apply_hybrid", "aggregate_local_gradients"]

log = logging.getLogger(__name__)


class ProtocolError(Exception):
    """A peer violated the task protocol (duplicate pull/update, bad stage)."""


@dataclass(frozen=True)
class HyperParams:
    """Algorithm and asynchrony knobs: (eta, theta, tau, B, m, S, P).

    theta in [0, 1]; theta = 0 realizes the pure asynchronous-SVRG special
    case (the linear-rate guarantee needs theta in (0, 1]).
    """

    eta: float
    theta: float = 0.5
    tau: int = 0
    B: int = 1
    m: int = 1
    S: int = 1
    P: int = 1

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be > 0")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0, 1]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.B < 1 or self.m < 1 or self.P < 1:
            raise ValueError("B, m, P must be >= 1")
        if self.S < 0:
            raise ValueError("S must be >= 0")


class FinishedTasks:
    """Finished update-task timestamps: watermark + overflow set.

    watermark = largest t0 such that every update timestamp <= t0 is finished.
    """

    def __init__(self):
        self.watermark = 0
        self._overflow = set()

    def mark(self, t: int):
        if t <= self.watermark or t in self._overflow:
            raise ProtocolError(f"duplicate update for timestamp {t}")
        if t == self.watermark + 1:
            self.watermark += 1
            while self.watermark + 1 in self._overflow:
                self._overflow.discard(self.watermark + 1)
                self.watermark += 1
        else:
            self._overflow.add(t)

    def __contains__(self, t: int) -> bool:
        return t <= self.watermark or t in self._overflow

    def all_finished_below(self, t: int) -> bool:
        """True iff every update timestamp < t is finished."""
        return self.watermark >= t - 1


def apply_hybrid(w, delta, w_bar, eta: float, theta: float) -> np.ndarray:
    """Hybrid delayed update: w <- (1-theta)*(w - eta*delta) + theta*w_bar."""
    return (1.0 - theta) * (w - eta * delta) + theta * w_bar


def _hybrid_rule(server: "ParamServer", push: UpdatePush) -> np.ndarray:
    return apply_hybrid(server.w, push.delta, push.w_bar,
                        server.hyper.eta, server.hyper.theta)


def aggregate_local_gradients(grads: list[np.ndarray], weights) -> np.ndarray:
    """Weighted aggregate sum_p q_p * grad_p, accumulated in worker order."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(grads) != weights.shape[0]:
        raise ProtocolError(f"expected {weights.shape[0]} local gradients, got {len(grads)}")
    if abs(float(weights.sum()) - 1.0) > 1e-12:
        raise ValueError("partition weights must sum to 1")
    acc = weights[0] * grads[0]
    for p in range(1, len(grads)):
        acc += weights[p] * grads[p]
    return acc


class ParamServer(Node):
    """Server role (Node).  See module docstring for the gating contract.

    ``gate_bound`` overrides the delay bound used for update-task pulls:
    ``None`` means unbounded (downpour-style).  ``update_rule`` maps
    (server, push) -> new w; the default is the hybrid rule.
    """

    def __init__(self, dim: int, hyper: HyperParams, weights, *,
                 update_rule=None, gate_bound="tau", w0=None,
                 worker_endpoints=None):
        self.hyper = hyper
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (hyper.P,):
            raise ValueError("need one partition weight per worker")
        self.w = np.zeros(dim) if w0 is None else np.asarray(w0, dtype=np.float64).copy()
        self.update_rule = update_rule or _hybrid_rule
        self.gate_bound = hyper.tau if gate_bound == "tau" else gate_bound
        self.worker_endpoints = worker_endpoints or [f"worker:{p}" for p in range(hyper.P)]
        self.finished = FinishedTasks()
        self.pending_pulls: list[tuple[int, str, PullRequest]] = []
        self._answered: set[tuple[int, int, TaskKind]] = set()
        self._arrival = 0
        self.snapshot: Snapshot | None = None
        self.snapshot_history: list[Snapshot] = []
        self._eval_stage = -1
        self._eval_done_stage = -1
        self._eval_anchor = None
        self._eval_pushes: dict[int, EvalPush] = {}
        self.stopped = False

    # -- gating -----------------------------------------------------------

    def _eligible(self, task) -> bool:
        if task.kind == TaskKind.UPDATE:
            if self.gate_bound is None:
                return True
            return self.finished.all_finished_below(task.timestamp - self.gate_bound)
        return self.finished.all_finished_below(task.timestamp)

    def gate_pull(self, req: PullRequest) -> bool:
        """Answer ``req`` now if eligible, else buffer it.  Returns True if answered."""
        key = (req.worker, req.task.timestamp, req.task.kind)
        if key in self._answered or \
                any(r.worker == req.worker and r.task == req.task for _, _, r in self.pending_pulls):
            raise ProtocolError(f"duplicate pull from worker {req.worker} for {req.task}")
        if req.task.kind == TaskKind.UPDATE and req.task.timestamp in self.finished:
            raise ProtocolError(f"pull for already-finished task {req.task}")
        if self._eligible(req.task):
            self._respond(req)
            return True
        self._arrival += 1
        self.pending_pulls.append((self._arrival, f"worker:{req.worker}", req))
        return False

    def _respond(self, req: PullRequest):
        self._answered.add((req.worker, req.task.timestamp, req.task.kind))
        if req.task.kind == TaskKind.EVALUATION:
            stage = (req.task.timestamp - 1) // self.hyper.m
            if stage != self._eval_stage:
                # stage-final w; frozen here, before any next-stage update lands
                self._eval_stage = stage
                self._eval_anchor = self.w
                self._eval_pushes = {}
            # every worker gets the frozen anchor, byte-identical
            self.send(f"worker:{req.worker}", PullResponse(req.task, self._eval_anchor))
            return
        self.send(f"worker:{req.worker}", PullResponse(req.task, self.w))

    def _rescan_pending(self):
        if not self.pending_pulls:
            return
        self.pending_pulls.sort(key=lambda e: (e[2].task.timestamp, e[0]))
        kept = []
        for entry in self.pending_pulls:
            if self._eligible(entry[2].task):
                self._respond(entry[2])
            else:
                kept.append(entry)
        self.pending_pulls = kept

    # -- updates and stage end ---------------------------------------------

    def apply_update(self, push: UpdatePush):
        """Apply one update push atomically and release newly eligible pulls."""
        if push.task.kind != TaskKind.UPDATE:
            raise ProtocolError("update push must carry an update task")
        new_w = self.update_rule(self, push)
        if not np.all(np.isfinite(new_w)):
            raise FloatingPointError(f"w diverged at task {push.task.timestamp}")
        self.w = new_w
        self.finished.mark(push.task.timestamp)
        self._rescan_pending()

    def stage_end(self, eval_pushes: list[EvalPush]) -> Snapshot:
        """Aggregate local gradients into the stage snapshot and broadcast it."""
        got = {p.worker for p in eval_pushes}
        if got != set(range(self.hyper.P)):
            missing = sorted(set(range(self.hyper.P)) - got)
            raise ProtocolError(f"stage end missing eval pushes from workers {missing}")
        ordered = sorted(eval_pushes, key=lambda p: p.worker)
        grad = aggregate_local_gradients([p.local_grad for p in ordered], self.weights)
        snap = Snapshot(anchor=self._eval_anchor, anchor_grad=grad, stage=self._eval_stage)
        self.snapshot = snap
        self.snapshot_history.append(snap)
        self._eval_done_stage = self._eval_stage
        if not self.stopped:
            for dst in self.worker_endpoints:
                self.send(dst, SnapshotBroadcast(grad))
        return snap

    def _eval_round_open(self) -> bool:
        """An evaluation round has answered pulls but not yet aggregated."""
        return self._eval_stage > self._eval_done_stage

    def can_shutdown(self) -> bool:
        return self.stopped and not self._eval_round_open()

    # -- message handling ---------------------------------------------------

    def handle(self, src: str, msg):
        if self.stopped:
            # a STOP ends new work, but an evaluation round whose pulls were
            # already answered still completes; the final snapshot must exist
            if isinstance(msg, EvalPush) and self._eval_round_open():
                self._eval_pushes[msg.worker] = msg
                if len(self._eval_pushes) == self.hyper.P:
                    self.stage_end(list(self._eval_pushes.values()))
                return
            log.info("server stopped; discarding %r from %s", msg, src)
            return
        if isinstance(msg, PullRequest):
            self.gate_pull(msg)
        elif isinstance(msg, UpdatePush):
            self.apply_update(msg)
        elif isinstance(msg, EvalPush):
            self._eval_pushes[msg.worker] = msg
            if len(self._eval_pushes) == self.hyper.P:
                self.stage_end(list(self._eval_pushes.values()))
        elif isinstance(msg, TaskAssign):
            if msg.task.kind != TaskKind.EVALUATION:
                raise ProtocolError("server only accepts evaluation task assignments")
        elif isinstance(msg, Stop):
            self.stopped = True
            for _, _, req in self.pending_pulls:
                log.info("discarding deferred pull %r after STOP", req)
            self.pending_pulls.clear()
        else:
            raise ProtocolError(f"server cannot handle {type(msg).__name__}")
