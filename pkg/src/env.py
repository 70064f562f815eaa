"""The dispatching MDP over a partial-schedule disjunctive graph.

A :class:`State` is an independent value: :func:`step` never mutates its input
and returns a fresh state. Time quantities are int64 so the makespan bound
``H``, rewards and start times are exact.

Placement semantics
-------------------
``push``: the dispatched operation goes before the first scheduled
operation on its machine that starts later than the operation could; the
operations behind it may be delayed. ``no-push`` (default): it only fills an idle gap
that fits it entirely, else it is appended. After either placement every
scheduled start is recomputed as its longest-path value over the partial DAG.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import networkx as nx
import numpy as np

from src.instance_io import ValidationResult, validate
from src.models import (
    DEFAULT_SEMANTICS,
    AdjacencyMode,
    Instance,
    OpId,
    ScheduledOperation,
    ScheduleExport,
    Semantics,
)

__all__ = [
    "Layout",
    "State",
    "StepOutcome",
    "IneligibleActionError",
    "ScheduleCycleError",
    "layout_of",
    "reset",
    "eligible_actions",
    "step",
    "lower_bound_H",
    "makespan",
    "critical_path_makespan",
    "node_features",
    "adjacency",
    "verify_schedule",
    "export_schedule",
    "DEFAULT_FEATURE_SCALE",
]

DEFAULT_FEATURE_SCALE: float = 1000.0


class IneligibleActionError(ValueError):
    """The chosen operation is not dispatchable in the given state."""


class ScheduleCycleError(RuntimeError):
    """The partial disjunctive graph contains a cycle (an implementation bug)."""


# ---------------------------------------------------------------------------
# Layout: flat arrays derived once per instance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Layout:
    """Flat per-operation arrays of an instance (job-major order)."""

    num_jobs: int
    num_machines: int
    num_ops: int
    offsets: np.ndarray
    lengths: np.ndarray
    job_of: np.ndarray
    pos_of: np.ndarray
    machine: np.ndarray
    duration: np.ndarray
    release: np.ndarray
    machine_ops: tuple[tuple[int, ...], ...]


def layout_of(inst: Instance) -> Layout:
    """Build the flat :class:`Layout` of *inst*."""
    lengths = np.array([len(r) for r in inst.routes], dtype=np.int64)
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1])).astype(np.int64)
    job_of = np.repeat(np.arange(inst.num_jobs, dtype=np.int64), lengths)
    pos_of = np.concatenate([np.arange(n, dtype=np.int64) for n in lengths])
    machine = np.array([m for r in inst.routes for m in r], dtype=np.int64)
    duration = np.array([p for t in inst.proc_times for p in t], dtype=np.int64)
    per_machine: list[list[int]] = [[] for _ in range(inst.num_machines)]
    for flat, m in enumerate(machine):
        per_machine[int(m)].append(flat)
    return Layout(
        num_jobs=inst.num_jobs,
        num_machines=inst.num_machines,
        num_ops=int(lengths.sum()),
        offsets=offsets,
        lengths=lengths,
        job_of=job_of,
        pos_of=pos_of,
        machine=machine,
        duration=duration,
        release=np.array(inst.release, dtype=np.int64),
        machine_ops=tuple(tuple(ops) for ops in per_machine),
    )


# ---------------------------------------------------------------------------
# State and outcome
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class State:
    """Partial schedule. ``start`` is -1 for unscheduled operations."""

    inst: Instance
    layout: Layout
    semantics: Semantics
    scheduled: np.ndarray
    start: np.ndarray
    clb: np.ndarray
    machine_seq: tuple[tuple[int, ...], ...]
    next_pos: np.ndarray
    step: int

    @property
    def done(self) -> bool:
        return self.step == self.layout.num_ops

    def flat(self, op: OpId) -> int:
        return int(self.layout.offsets[op.job]) + op.pos

    def op_of(self, flat: int) -> OpId:
        return OpId(int(self.layout.job_of[flat]), int(self.layout.pos_of[flat]))

    def completion(self, flat: int) -> int:
        return int(self.start[flat] + self.layout.duration[flat])

    def directed_arcs(self) -> set[tuple[int, int]]:
        """Conjunctions plus the directed machine arcs decided so far."""
        lay = self.layout
        arcs = {(v - 1, v) for v in range(lay.num_ops) if lay.pos_of[v] > 0}
        for seq in self.machine_seq:
            arcs.update(zip(seq, seq[1:], strict=False))
        return arcs


@dataclass(frozen=True)
class StepOutcome:
    """Result of one dispatch; ``reward == h_before - h_after``."""

    reward: int
    done: bool
    h_before: int
    h_after: int


# ---------------------------------------------------------------------------
# Transitions
# ---------------------------------------------------------------------------


def reset(inst: Instance, semantics: Semantics = DEFAULT_SEMANTICS) -> State:
    """Return the initial state of *inst*: nothing scheduled."""
    checked = validate(inst)
    if not checked.ok:
        raise ValueError(f"invalid instance {inst.id!r}: {'; '.join(checked.errors)}")

    lay = layout_of(inst)
    scheduled = np.zeros(lay.num_ops, dtype=bool)
    start = np.full(lay.num_ops, -1, dtype=np.int64)
    return State(
        inst=inst,
        layout=lay,
        semantics=Semantics(semantics),
        scheduled=scheduled,
        start=start,
        clb=_completion_bounds(lay, scheduled, start),
        machine_seq=tuple(() for _ in range(lay.num_machines)),
        next_pos=np.zeros(lay.num_jobs, dtype=np.int64),
        step=0,
    )


def eligible_actions(s: State) -> list[OpId]:
    """First unscheduled operation of every unfinished job, by job index."""
    lay = s.layout
    return [
        OpId(j, int(s.next_pos[j])) for j in range(lay.num_jobs) if s.next_pos[j] < lay.lengths[j]
    ]


def step(s: State, a: OpId) -> tuple[State, StepOutcome]:
    """Dispatch *a* and return the successor state with its reward."""
    lay = s.layout
    if (
        not 0 <= a.job < lay.num_jobs
        or s.next_pos[a.job] != a.pos
        or a.pos >= lay.lengths[a.job]
    ):
        raise IneligibleActionError(f"operation {a} is not eligible at step {s.step}")

    flat = s.flat(a)
    machine = int(lay.machine[flat])
    ready = s.completion(flat - 1) if a.pos > 0 else int(lay.release[a.job])
    seq = s.machine_seq[machine]
    at = _insertion_index(s, seq, ready, int(lay.duration[flat]))

    machine_seq = list(s.machine_seq)
    machine_seq[machine] = seq[:at] + (flat,) + seq[at:]
    scheduled = s.scheduled.copy()
    scheduled[flat] = True
    next_pos = s.next_pos.copy()
    next_pos[a.job] += 1

    start = _longest_path_starts(lay, scheduled, machine_seq)
    clb = _completion_bounds(lay, scheduled, start)
    nxt = State(
        inst=s.inst,
        layout=lay,
        semantics=s.semantics,
        scheduled=scheduled,
        start=start,
        clb=clb,
        machine_seq=tuple(machine_seq),
        next_pos=next_pos,
        step=s.step + 1,
    )
    h_before = lower_bound_H(s)
    h_after = lower_bound_H(nxt)
    return nxt, StepOutcome(
        reward=h_before - h_after, done=nxt.done, h_before=h_before, h_after=h_after
    )


def _insertion_index(s: State, seq: tuple[int, ...], ready: int, duration: int) -> int:
    prev_end = 0
    for i, other in enumerate(seq):
        earliest = max(ready, prev_end)
        other_start = int(s.start[other])
        if s.semantics == Semantics.PUSH:
            if earliest < other_start:
                return i
        elif earliest + duration <= other_start:
            return i
        prev_end = s.completion(other)
    return len(seq)


def _longest_path_starts(
    lay: Layout, scheduled: np.ndarray, machine_seq: list[tuple[int, ...]]
) -> np.ndarray:
    """Semi-active start times of the scheduled ops, in topological order."""
    machine_pred = np.full(lay.num_ops, -1, dtype=np.int64)
    machine_succ = np.full(lay.num_ops, -1, dtype=np.int64)
    for seq in machine_seq:
        for u, v in zip(seq, seq[1:], strict=False):
            machine_pred[v] = u
            machine_succ[u] = v

    indegree = np.zeros(lay.num_ops, dtype=np.int64)
    nodes = np.flatnonzero(scheduled)
    for v in nodes:
        indegree[v] = int(lay.pos_of[v] > 0) + int(machine_pred[v] >= 0)

    start = np.full(lay.num_ops, -1, dtype=np.int64)
    queue = deque(int(v) for v in nodes if indegree[v] == 0)
    visited = 0
    while queue:
        v = queue.popleft()
        visited += 1
        earliest = int(lay.release[lay.job_of[v]])
        if lay.pos_of[v] > 0:
            earliest = max(earliest, int(start[v - 1] + lay.duration[v - 1]))
        mp = machine_pred[v]
        if mp >= 0:
            earliest = max(earliest, int(start[mp] + lay.duration[mp]))
        start[v] = earliest

        job_succ = v + 1
        if job_succ < lay.num_ops and lay.pos_of[job_succ] > 0 and scheduled[job_succ]:
            indegree[job_succ] -= 1
            if indegree[job_succ] == 0:
                queue.append(job_succ)
        ms = int(machine_succ[v])
        if ms >= 0:
            indegree[ms] -= 1
            if indegree[ms] == 0:
                queue.append(ms)

    if visited != len(nodes):
        raise ScheduleCycleError(
            f"partial schedule has a cycle: ordered {visited} of {len(nodes)} operations"
        )
    return start


def _completion_bounds(lay: Layout, scheduled: np.ndarray, start: np.ndarray) -> np.ndarray:
    clb = np.empty(lay.num_ops, dtype=np.int64)
    for v in range(lay.num_ops):
        if scheduled[v]:
            clb[v] = start[v] + lay.duration[v]
        elif lay.pos_of[v] == 0:
            clb[v] = lay.release[lay.job_of[v]] + lay.duration[v]
        else:
            clb[v] = clb[v - 1] + lay.duration[v]
    return clb


# ---------------------------------------------------------------------------
# Objective
# ---------------------------------------------------------------------------


def lower_bound_H(s: State) -> int:
    """Makespan lower bound: the largest completion bound."""
    return int(s.clb.max())


def makespan(s: State) -> int:
    """Largest completion time of a terminal schedule."""
    if not s.done:
        raise ValueError(f"makespan needs a terminal state, {s.step}/{s.layout.num_ops} dispatched")
    return int((s.start + s.layout.duration).max())


def critical_path_makespan(s: State) -> int:
    """Longest source-to-sink path of the completed disjunctive graph."""
    if not s.done:
        raise ValueError("critical path needs a terminal state")
    lay = s.layout
    graph = nx.DiGraph()
    graph.add_node("S")
    graph.add_node("T")
    for v in range(lay.num_ops):
        if lay.pos_of[v] == 0:
            graph.add_edge("S", v, weight=int(lay.release[lay.job_of[v]]))
        graph.add_edge(v, "T", weight=int(lay.duration[v]))
    for u, v in s.directed_arcs():
        graph.add_edge(u, v, weight=int(lay.duration[u]))
    if not nx.is_directed_acyclic_graph(graph):
        raise ScheduleCycleError("completed disjunctive graph has a cycle")
    return int(nx.dag_longest_path_length(graph, weight="weight"))


# ---------------------------------------------------------------------------
# Encoder inputs
# ---------------------------------------------------------------------------


def node_features(s: State, scale: float = DEFAULT_FEATURE_SCALE) -> np.ndarray:
    """``|O| x 2`` matrix of (scheduled flag, completion bound / scale)."""
    if scale <= 0:
        raise ValueError(f"feature scale must be positive, got {scale}")
    return np.column_stack((s.scheduled.astype(np.float64), s.clb.astype(np.float64) / scale))


def adjacency(s: State, mode: AdjacencyMode = AdjacencyMode.ADDING_ARC) -> list[list[int]]:
    """Incoming-neighbour lists per operation node (dummy nodes excluded)."""
    lay = s.layout
    incoming: list[set[int]] = [set() for _ in range(lay.num_ops)]
    for u, v in s.directed_arcs():
        incoming[v].add(u)
    if mode == AdjacencyMode.REMOVING_ARC:
        for ops in lay.machine_ops:
            for i, u in enumerate(ops):
                for v in ops[i + 1 :]:
                    if not (s.scheduled[u] and s.scheduled[v]):
                        incoming[v].add(u)
                        incoming[u].add(v)
    return [sorted(n) for n in incoming]


# ---------------------------------------------------------------------------
# Verification and export
# ---------------------------------------------------------------------------


def verify_schedule(s: State) -> ValidationResult:
    """Check precedence, machine exclusivity, release times and start signs."""
    result = ValidationResult()
    lay = s.layout
    for v in range(lay.num_ops):
        op = s.op_of(v)
        if not s.scheduled[v]:
            result.error(f"operation {op.label()}: unscheduled operation")
            continue
        if s.start[v] < 0:
            result.error(f"operation {op.label()}: negative start {int(s.start[v])}")
        if s.start[v] < lay.release[op.job]:
            result.error(f"operation {op.label()}: starts before job release")
        if op.pos > 0 and s.start[v] < s.start[v - 1] + lay.duration[v - 1]:
            result.error(f"operation {op.label()}: precedence violated")

    for m, ops in enumerate(lay.machine_ops):
        placed = sorted((int(s.start[v]), v) for v in ops if s.scheduled[v])
        for (a_start, a), (b_start, b) in zip(placed, placed[1:], strict=False):
            if b_start < a_start + lay.duration[a]:
                result.error(
                    f"machine {m}: machine overlap between "
                    f"{s.op_of(a).label()} and {s.op_of(b).label()}"
                )
    return result


def export_schedule(s: State) -> ScheduleExport:
    """JSON-ready form of a terminal schedule, ordered by machine then start."""
    lay = s.layout
    operations = [
        ScheduledOperation(
            op=s.op_of(v),
            machine=m,
            start=int(s.start[v]),
            end=s.completion(v),
        )
        for m, seq in enumerate(s.machine_seq)
        for v in seq
    ]
    return ScheduleExport(
        instance_id=s.inst.id,
        semantics=s.semantics,
        makespan=makespan(s),
        num_machines=lay.num_machines,
        operations=operations,
    )
