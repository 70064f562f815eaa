"""Pydantic v2 data models for the job-shop dispatch toolkit."""

from __future__ import annotations

import math
from enum import StrEnum
from typing import Any, NamedTuple

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

__all__ = [
    "OpId",
    "InstanceFormat",
    "Semantics",
    "DEFAULT_SEMANTICS",
    "AdjacencyMode",
    "Instance",
    "ScheduledOperation",
    "ScheduleExport",
    "ManifestEntry",
    "Manifest",
    "EvalReport",
]


# ---------------------------------------------------------------------------
# 1. Enumerations
# ---------------------------------------------------------------------------


class InstanceFormat(StrEnum):
    """Text formats accepted by the instance parser."""

    STANDARD = "standard"
    TAILLARD = "taillard"


class Semantics(StrEnum):
    """How a dispatched operation is placed on its machine."""

    PUSH = "push"
    NO_PUSH = "no-push"


# No-push reproduces the published rule averages on generated 6x6 instances.
DEFAULT_SEMANTICS = Semantics.NO_PUSH


class AdjacencyMode(StrEnum):
    """Which arcs of the disjunctive graph the encoder sees."""

    ADDING_ARC = "adding-arc"
    REMOVING_ARC = "removing-arc"


# ---------------------------------------------------------------------------
# 2. OpId
# ---------------------------------------------------------------------------


class OpId(NamedTuple):
    """Operation ``pos`` (0-based) of job ``job`` (0-based)."""

    job: int
    pos: int

    def label(self) -> str:
        return f"{self.job}·{self.pos}"


# ---------------------------------------------------------------------------
# 3. Instance
# ---------------------------------------------------------------------------


class Instance(BaseModel):
    """An immutable JSSP problem.

    Structural invariants (route/duration lengths, machine range, positive
    durations) are *not* enforced here so that a broken instance can still be
    constructed and reported in full by :func:`src.instance_io.validate`.
    """

    model_config = ConfigDict(frozen=True)

    num_jobs: int = Field(..., ge=1, description="Number of jobs |J|")
    num_machines: int = Field(..., ge=1, description="Number of machines |M|")
    routes: tuple[tuple[int, ...], ...] = Field(..., description="Machine index per job op")
    proc_times: tuple[tuple[int, ...], ...] = Field(..., description="Duration per job op")
    release: tuple[int, ...] = Field(default=(), description="Release time per job")
    id: str = Field(default="", description="Free-form label")

    @model_validator(mode="before")
    @classmethod
    def _default_release(cls, data: Any) -> Any:
        if isinstance(data, dict) and not data.get("release"):
            data = dict(data)
            data["release"] = tuple(0 for _ in range(int(data.get("num_jobs", 0))))
        return data

    @property
    def num_ops(self) -> int:
        """Total operation count |O|."""
        return sum(len(r) for r in self.routes)

    def job_length(self, job: int) -> int:
        """Return ``n_i`` for *job*."""
        return len(self.routes[job])

    def offsets(self) -> list[int]:
        """Prefix sums of job lengths: flat index of each job's first op."""
        out: list[int] = []
        acc = 0
        for route in self.routes:
            out.append(acc)
            acc += len(route)
        return out

    def flat(self, op: OpId) -> int:
        """Return the flat array index of *op*."""
        return self.offsets()[op.job] + op.pos

    def is_permutation_shaped(self) -> bool:
        """True when every route visits every machine exactly once."""
        machines = list(range(self.num_machines))
        return all(sorted(r) == machines for r in self.routes)

    def relabeled(self, order: list[int]) -> Instance:
        """Return a copy whose job ``k`` is this instance's job ``order[k]``."""
        return Instance(
            num_jobs=self.num_jobs,
            num_machines=self.num_machines,
            routes=tuple(self.routes[j] for j in order),
            proc_times=tuple(self.proc_times[j] for j in order),
            release=tuple(self.release[j] for j in order),
            id=self.id,
        )


# ---------------------------------------------------------------------------
# 4. Schedule export
# ---------------------------------------------------------------------------


class ScheduledOperation(BaseModel):
    """One placed operation of a terminal schedule."""

    model_config = ConfigDict(frozen=True)

    op: OpId
    machine: int = Field(..., ge=0)
    start: int = Field(..., ge=0)
    end: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _end_after_start(self) -> ScheduledOperation:
        if self.end < self.start:
            raise ValueError(f"end ({self.end}) must not precede start ({self.start})")
        return self


class ScheduleExport(BaseModel):
    """JSON form of a terminal schedule, consumed by the Gantt renderer."""

    instance_id: str = ""
    semantics: Semantics = DEFAULT_SEMANTICS
    makespan: int = Field(..., ge=0)
    num_machines: int = Field(..., ge=0)
    operations: list[ScheduledOperation] = Field(default_factory=list)

    @model_validator(mode="after")
    def _machines_in_range(self) -> ScheduleExport:
        for o in self.operations:
            if o.machine >= self.num_machines:
                raise ValueError(
                    f"operation {o.op.label()} on machine {o.machine} "
                    f"but the schedule has {self.num_machines} machines"
                )
        return self


# ---------------------------------------------------------------------------
# 5. Dataset manifest
# ---------------------------------------------------------------------------


class ManifestEntry(BaseModel):
    """One generated or registered instance file."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(..., min_length=1)
    path: str = Field(..., min_length=1, description="Relative to the manifest directory")
    format: InstanceFormat = InstanceFormat.STANDARD
    num_jobs: int = Field(..., ge=1)
    num_machines: int = Field(..., ge=1)
    seed: int | None = None


class Manifest(BaseModel):
    """Ordered list of instance files; evaluation follows this order."""

    low: int | None = None
    high: int | None = None
    seed: int | None = None
    entries: list[ManifestEntry] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# 6. EvalReport
# ---------------------------------------------------------------------------


class EvalReport(BaseModel):
    """One solved instance: the row of a results table."""

    model_config = ConfigDict(frozen=True)

    instance_id: str
    method: str
    makespan: int = Field(..., gt=0)
    gap: float | None = Field(default=None, description="(makespan - ref) / ref")
    time_ms: float = Field(..., ge=0.0)
    semantics: Semantics = DEFAULT_SEMANTICS

    @field_validator("gap", "time_ms")
    @classmethod
    def _finite(cls, v: float | None, info: ValidationInfo) -> float | None:
        if v is not None and (math.isnan(v) or math.isinf(v)):
            raise ValueError(f"{info.field_name} must be a finite number, got {v}")
        return v
