"""Tests for Pydantic models."""

from __future__ import annotations

import pytest
from pydantic import ValidationError

from src.models import (
    EvalReport,
    Instance,
    Manifest,
    ManifestEntry,
    OpId,
    ScheduledOperation,
    ScheduleExport,
    Semantics,
)


class TestOpId:
    def test_fields(self) -> None:
        op = OpId(2, 1)
        assert op.job == 2
        assert op.pos == 1

    def test_label(self) -> None:
        assert OpId(0, 3).label() == "0·3"

    def test_orders_by_job_then_pos(self) -> None:
        assert sorted([OpId(1, 0), OpId(0, 1), OpId(0, 0)]) == [
            OpId(0, 0),
            OpId(0, 1),
            OpId(1, 0),
        ]


class TestInstance:
    def test_release_defaults_to_zero(self, tiny: Instance) -> None:
        assert tiny.release == (0, 0)

    def test_num_ops(self, tiny: Instance) -> None:
        assert tiny.num_ops == 4

    def test_offsets_and_flat(self) -> None:
        inst = Instance(
            num_jobs=3,
            num_machines=2,
            routes=((0,), (0, 1), (1, 0)),
            proc_times=((1,), (2, 3), (4, 5)),
        )
        assert inst.offsets() == [0, 1, 3]
        assert inst.flat(OpId(2, 1)) == 4
        assert inst.job_length(1) == 2

    def test_frozen(self, tiny: Instance) -> None:
        with pytest.raises(ValidationError):
            tiny.num_jobs = 3  # type: ignore[misc]

    def test_zero_jobs_rejected(self) -> None:
        with pytest.raises(ValidationError, match="num_jobs"):
            Instance(num_jobs=0, num_machines=1, routes=(), proc_times=())

    def test_permutation_shaped(self, tiny: Instance, push_instance: Instance) -> None:
        assert tiny.is_permutation_shaped()
        assert not push_instance.is_permutation_shaped()

    def test_relabeled_swaps_jobs(self, tiny: Instance) -> None:
        swapped = tiny.relabeled([1, 0])
        assert swapped.routes == ((1, 0), (0, 1))
        assert swapped.proc_times == ((2, 4), (3, 2))
        assert swapped.id == tiny.id


class TestScheduledOperation:
    def test_valid(self) -> None:
        o = ScheduledOperation(op=OpId(0, 0), machine=1, start=2, end=5)
        assert o.end - o.start == 3

    def test_end_before_start_rejected(self) -> None:
        with pytest.raises(ValidationError, match="must not precede"):
            ScheduledOperation(op=OpId(0, 0), machine=0, start=5, end=2)

    def test_negative_start_rejected(self) -> None:
        with pytest.raises(ValidationError, match="start"):
            ScheduledOperation(op=OpId(0, 0), machine=0, start=-1, end=2)


class TestScheduleExport:
    def test_round_trips_through_json(self) -> None:
        export = ScheduleExport(
            instance_id="x",
            semantics=Semantics.NO_PUSH,
            makespan=5,
            num_machines=1,
            operations=[ScheduledOperation(op=OpId(0, 0), machine=0, start=0, end=5)],
        )
        loaded = ScheduleExport.model_validate_json(export.model_dump_json())
        assert loaded == export
        assert loaded.operations[0].op == OpId(0, 0)

    def test_machine_out_of_range_rejected(self) -> None:
        with pytest.raises(ValidationError, match="machine 2"):
            ScheduleExport(
                makespan=5,
                num_machines=2,
                operations=[ScheduledOperation(op=OpId(0, 0), machine=2, start=0, end=5)],
            )


class TestManifest:
    def test_entries_keep_order(self) -> None:
        m = Manifest(
            entries=[
                ManifestEntry(id="b", path="b.txt", num_jobs=2, num_machines=2),
                ManifestEntry(id="a", path="a.txt", num_jobs=2, num_machines=2),
            ]
        )
        assert [e.id for e in m.entries] == ["b", "a"]

    def test_empty_path_rejected(self) -> None:
        with pytest.raises(ValidationError, match="path"):
            ManifestEntry(id="a", path="", num_jobs=1, num_machines=1)


class TestEvalReport:
    def test_valid(self) -> None:
        r = EvalReport(instance_id="t", method="spt", makespan=7, gap=0.0, time_ms=1.5)
        assert r.semantics == Semantics.NO_PUSH

    def test_gap_optional(self) -> None:
        r = EvalReport(instance_id="t", method="spt", makespan=7, time_ms=0.0)
        assert r.gap is None

    def test_nan_gap_rejected(self) -> None:
        with pytest.raises(ValidationError, match="finite"):
            EvalReport(instance_id="t", method="spt", makespan=7, gap=float("nan"), time_ms=0.0)

    def test_zero_makespan_rejected(self) -> None:
        with pytest.raises(ValidationError, match="makespan"):
            EvalReport(instance_id="t", method="spt", makespan=0, time_ms=0.0)
