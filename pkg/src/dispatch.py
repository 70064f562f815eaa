"""Priority dispatching rules and the greedy dispatch loop.

Four classical rules plus a seeded random rule:

1. **ShortestProcessingTime** (``spt``)       -- smallest ``p_ij`` first.
2. **MostWorkRemaining** (``mwkr``)          -- largest remaining job work first.
3. **FlowDueDateOverWorkRemaining** (``fdd-mwkr``) -- smallest
   ``(r_i + work done through j) / remaining work``.
4. **MostOperationsRemaining** (``mopnr``)   -- most remaining operations first.
5. **RandomRule** (``random[:seed]``)        -- reproducible uniform scores.

Every rule returns a score where *lower is better*; maximizing rules negate
their index. Ties go to the lowest job index, so a rule is fully
deterministic: identical inputs always produce identical schedules.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from enum import StrEnum
from typing import NamedTuple, Protocol

import numpy as np

from src.env import State, eligible_actions, makespan, reset, step
from src.models import DEFAULT_SEMANTICS, Instance, OpId, Semantics

__all__ = [
    "RuleKind",
    "DispatchRule",
    "ShortestProcessingTime",
    "MostWorkRemaining",
    "FlowDueDateOverWorkRemaining",
    "MostOperationsRemaining",
    "RandomRule",
    "DispatchResult",
    "make_rule",
    "parse_rule",
    "priority",
    "choose",
    "rollout",
    "run_pdr",
    "best_of_random",
    "BENCHMARK_RULES",
]


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

# Decimal places used when rounding scores for stable floating-point comparison.
_SCORE_PRECISION: int = 12


class RuleKind(StrEnum):
    """Rule names as accepted on the command line."""

    SPT = "spt"
    MWKR = "mwkr"
    FDDMWKR = "fdd-mwkr"
    MOPNR = "mopnr"
    RANDOM = "random"


BENCHMARK_RULES: tuple[RuleKind, ...] = (
    RuleKind.SPT,
    RuleKind.MWKR,
    RuleKind.FDDMWKR,
    RuleKind.MOPNR,
)


# ---------------------------------------------------------------------------
# Protocol
# ---------------------------------------------------------------------------


class DispatchRule(Protocol):
    """Common interface that every dispatching rule must satisfy."""

    @property
    def name(self) -> str: ...

    def priority(self, s: State, op: OpId) -> float: ...


# ---------------------------------------------------------------------------
# Pure helpers
# ---------------------------------------------------------------------------


def _remaining_work(s: State, op: OpId) -> int:
    """Work of *op* and every later operation of its job."""
    return sum(s.inst.proc_times[op.job][op.pos :])


def _work_through(s: State, op: OpId) -> int:
    """Work of the job's operations up to and including *op*."""
    return sum(s.inst.proc_times[op.job][: op.pos + 1])


# ---------------------------------------------------------------------------
# Rules
# ---------------------------------------------------------------------------


class ShortestProcessingTime:
    """``min Z_ij = p_ij``."""

    @property
    def name(self) -> str:
        return RuleKind.SPT.value

    def priority(self, s: State, op: OpId) -> float:
        return float(s.inst.proc_times[op.job][op.pos])


class MostWorkRemaining:
    """``max Z_ij = sum of p_ik for k >= j``."""

    @property
    def name(self) -> str:
        return RuleKind.MWKR.value

    def priority(self, s: State, op: OpId) -> float:
        return -float(_remaining_work(s, op))


class FlowDueDateOverWorkRemaining:
    """``min Z_ij = (r_i + sum_{k<=j} p_ik) / sum_{k>=j} p_ik``."""

    @property
    def name(self) -> str:
        return RuleKind.FDDMWKR.value

    def priority(self, s: State, op: OpId) -> float:
        flow_due = s.inst.release[op.job] + _work_through(s, op)
        return flow_due / _remaining_work(s, op)


class MostOperationsRemaining:
    """``max Z_ij = n_i - j + 1`` (1-based ``j``)."""

    @property
    def name(self) -> str:
        return RuleKind.MOPNR.value

    def priority(self, s: State, op: OpId) -> float:
        return -float(s.inst.job_length(op.job) - op.pos)


class RandomRule:
    """Uniform scores from a stream keyed by ``(seed, step, flat op)``.

    Not one of the benchmarked rules; used as a sanity baseline and to sample
    random rollouts for oracle comparisons.
    """

    def __init__(self, seed: int = 0) -> None:
        self._seed = seed

    @property
    def name(self) -> str:
        return f"{RuleKind.RANDOM.value}:{self._seed}"

    @property
    def seed(self) -> int:
        return self._seed

    def priority(self, s: State, op: OpId) -> float:
        return float(np.random.default_rng([self._seed, s.step, s.flat(op)]).random())


def make_rule(kind: RuleKind, seed: int = 0) -> DispatchRule:
    """Instantiate the rule for *kind*; *seed* only matters for ``random``."""
    match RuleKind(kind):
        case RuleKind.SPT:
            return ShortestProcessingTime()
        case RuleKind.MWKR:
            return MostWorkRemaining()
        case RuleKind.FDDMWKR:
            return FlowDueDateOverWorkRemaining()
        case RuleKind.MOPNR:
            return MostOperationsRemaining()
        case RuleKind.RANDOM:
            return RandomRule(seed)


def parse_rule(text: str) -> DispatchRule:
    """Parse a CLI rule string: ``spt``, ``mwkr``, ``fdd-mwkr``, ``mopnr``, ``random[:seed]``."""
    name, _, seed = text.strip().lower().partition(":")
    try:
        kind = RuleKind(name)
    except ValueError:
        choices = ", ".join(k.value for k in RuleKind)
        raise ValueError(f"unknown rule {text!r}; choose from {choices}") from None
    if seed and kind != RuleKind.RANDOM:
        raise ValueError(f"rule {name!r} takes no seed")
    try:
        return make_rule(kind, int(seed) if seed else 0)
    except ValueError:
        raise ValueError(f"random seed must be an integer, got {seed!r}") from None


# ---------------------------------------------------------------------------
# Dispatch loop
# ---------------------------------------------------------------------------


class DispatchResult(NamedTuple):
    state: State
    makespan: int
    wall_time: float


def priority(rule: DispatchRule, s: State, op: OpId) -> float:
    """Score of an eligible *op* under *rule* (lower dispatches first)."""
    if op not in eligible_actions(s):
        raise ValueError(f"operation {op} is not eligible at step {s.step}")
    return rule.priority(s, op)


def choose(rule: DispatchRule, s: State) -> OpId:
    """Eligible operation with the best score; ties go to the lowest job index."""
    candidates = eligible_actions(s)
    if not candidates:
        raise ValueError("no eligible operation: the state is terminal")
    return min(candidates, key=lambda op: (round(rule.priority(s, op), _SCORE_PRECISION), op.job))


def rollout(
    inst: Instance,
    chooser: Callable[[State], OpId],
    semantics: Semantics = DEFAULT_SEMANTICS,
) -> DispatchResult:
    """Dispatch until terminal, letting *chooser* pick each operation."""
    began = time.perf_counter()
    s = reset(inst, semantics)
    while not s.done:
        s, _ = step(s, chooser(s))
    return DispatchResult(s, makespan(s), time.perf_counter() - began)


def run_pdr(
    inst: Instance,
    rule: DispatchRule,
    semantics: Semantics = DEFAULT_SEMANTICS,
) -> DispatchResult:
    """Solve *inst* greedily with *rule*."""
    return rollout(inst, lambda s: choose(rule, s), semantics)


def best_of_random(
    inst: Instance,
    n: int,
    seed: int = 0,
    semantics: Semantics = DEFAULT_SEMANTICS,
) -> int:
    """Best makespan over *n* random-rule rollouts with derived seeds."""
    if n < 1:
        raise ValueError(f"need at least one rollout, got {n}")
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return min(run_pdr(inst, RandomRule(int(k)), semantics).makespan for k in seeds)
