"""Exact makespan of tiny instances by enumerating active schedules.

Depth-first Giffler–Thompson branching: at every node the operation with the
earliest possible completion fixes a machine, and each operation of the
conflict set on that machine (those able to start before that completion)
opens a branch. An optimal schedule is always active, so exhausting the tree
proves optimality. Branches whose simple job/machine bound cannot beat the
incumbent are pruned.
"""

from __future__ import annotations

import logging
from collections.abc import Iterator
from enum import StrEnum

from pydantic import BaseModel, Field

from src.instance_io import validate
from src.models import Instance

__all__ = ["Proof", "OracleResult", "optimal_makespan"]

logger = logging.getLogger(__name__)


class Proof(StrEnum):
    OPTIMAL = "optimal"
    LIMIT_HIT = "limit-hit"


class OracleResult(BaseModel):
    """Best makespan found, whether it is proven, and its start times."""

    makespan: int = Field(..., ge=0)
    proof: Proof
    nodes: int = Field(..., ge=0, description="Search nodes expanded")
    starts: list[list[int]] = Field(default_factory=list, description="Start per job op")


class _Search:
    def __init__(self, inst: Instance, node_limit: int) -> None:
        self.inst = inst
        self.node_limit = node_limit
        self.nodes = 0
        self.limit_hit = False
        self.best: int | None = None
        self.best_starts: list[list[int]] = []

        self.next_pos = [0] * inst.num_jobs
        self.job_ready = list(inst.release)
        self.machine_ready = [0] * inst.num_machines
        self.job_left = [sum(t) for t in inst.proc_times]
        self.machine_left = [0] * inst.num_machines
        for route, times in zip(inst.routes, inst.proc_times, strict=True):
            for m, p in zip(route, times, strict=True):
                self.machine_left[m] += p
        self.cmax = 0
        self.starts = [[-1] * len(r) for r in inst.routes]
        self.remaining = inst.num_ops

    # ----- node mechanics ----------------------------------------------------

    def _bound(self) -> int:
        jobs = max(r + w for r, w in zip(self.job_ready, self.job_left, strict=True))
        machines = max(r + w for r, w in zip(self.machine_ready, self.machine_left, strict=True))
        return max(self.cmax, jobs, machines)

    def _conflict_set(self) -> list[tuple[int, int]]:
        """``(est, job)`` pairs that may run first on the critical machine."""
        inst = self.inst
        best_ect: tuple[int, int] | None = None
        candidates: list[tuple[int, int, int]] = []
        for j in range(inst.num_jobs):
            pos = self.next_pos[j]
            if pos == len(inst.routes[j]):
                continue
            m = inst.routes[j][pos]
            est = max(self.job_ready[j], self.machine_ready[m])
            ect = est + inst.proc_times[j][pos]
            candidates.append((est, j, m))
            if best_ect is None or ect < best_ect[0]:
                best_ect = (ect, m)
        assert best_ect is not None
        ect, machine = best_ect
        return sorted((est, j) for est, j, m in candidates if m == machine and est < ect)

    def _apply(self, job: int, est: int) -> tuple[int, int, int]:
        inst = self.inst
        pos = self.next_pos[job]
        m = inst.routes[job][pos]
        p = inst.proc_times[job][pos]
        saved = (self.job_ready[job], self.machine_ready[m], self.cmax)
        self.starts[job][pos] = est
        self.next_pos[job] = pos + 1
        self.job_ready[job] = est + p
        self.machine_ready[m] = est + p
        self.job_left[job] -= p
        self.machine_left[m] -= p
        self.cmax = max(self.cmax, est + p)
        self.remaining -= 1
        return saved

    def _undo(self, job: int, saved: tuple[int, int, int]) -> None:
        inst = self.inst
        pos = self.next_pos[job] - 1
        m = inst.routes[job][pos]
        p = inst.proc_times[job][pos]
        self.starts[job][pos] = -1
        self.next_pos[job] = pos
        self.job_ready[job], self.machine_ready[m], self.cmax = saved
        self.job_left[job] += p
        self.machine_left[m] += p
        self.remaining += 1

    def _record(self) -> None:
        if self.best is None or self.cmax < self.best:
            self.best = self.cmax
            self.best_starts = [list(row) for row in self.starts]

    # ----- search ------------------------------------------------------------

    def _finish_greedily(self) -> None:
        trail: list[tuple[int, tuple[int, int, int]]] = []
        while self.remaining:
            est, job = self._conflict_set()[0]
            trail.append((job, self._apply(job, est)))
        self._record()
        for job, saved in reversed(trail):
            self._undo(job, saved)

    def _enter(self) -> Iterator[tuple[int, int]] | None:
        """Visit the current node; None when it is a leaf or pruned."""
        if self.remaining == 0:
            self._record()
            return None
        if self.nodes >= self.node_limit:
            self.limit_hit = True
            if self.best is None:
                self._finish_greedily()
            return None
        self.nodes += 1
        if self.best is not None and self._bound() >= self.best:
            return None
        return iter(self._conflict_set())

    def run(self) -> None:
        """Depth-first search over an explicit stack of child iterators."""
        root = self._enter()
        if root is None:
            return
        stack = [root]
        # trail[d] is the move that led from stack[d] to stack[d + 1]
        trail: list[tuple[int, tuple[int, int, int]]] = []
        while stack:
            move = next(stack[-1], None)
            if move is None:
                stack.pop()
                if trail:
                    self._undo(*trail.pop())
                continue
            est, job = move
            trail.append((job, self._apply(job, est)))
            children = self._enter()
            if children is None:
                self._undo(*trail.pop())
            else:
                stack.append(children)


def optimal_makespan(inst: Instance, node_limit: int = 1_000_000) -> OracleResult:
    """Optimal makespan of *inst*, or the incumbent when *node_limit* is hit."""
    if node_limit <= 0:
        raise ValueError(f"node_limit must be positive, got {node_limit}")
    checked = validate(inst)
    if not checked.ok:
        raise ValueError(f"invalid instance {inst.id!r}: {'; '.join(checked.errors)}")

    search = _Search(inst, node_limit)
    search.run()
    assert search.best is not None
    proof = Proof.LIMIT_HIT if search.limit_hit else Proof.OPTIMAL
    logger.debug("oracle %s: %d after %d nodes (%s)", inst.id, search.best, search.nodes, proof)
    return OracleResult(
        makespan=search.best, proof=proof, nodes=search.nodes, starts=search.best_starts
    )
