"""Tests for reference tables, batch evaluation and semantics calibration."""

from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd
import pytest

from src.bench import (
    REPORT_COLUMNS,
    CalibrationReport,
    CalibrationRow,
    Method,
    averages,
    calibrate,
    calibrate_averages,
    evaluate_manifest,
    gap,
    generated_instances,
    load_average_table,
    load_refs,
    load_rule_table,
    load_seed_table,
    load_taillard_suite,
    parse_method,
    parse_size,
    reports_frame,
    solve,
    write_reports,
)
from src.checkpoints import save_checkpoint
from src.config import PolicyConfig
from src.dispatch import BENCHMARK_RULES, make_rule, run_pdr
from src.instance_io import generate_taillard, save_instance
from src.models import (
    DEFAULT_SEMANTICS,
    EvalReport,
    Instance,
    InstanceFormat,
    Manifest,
    ManifestEntry,
    Semantics,
)
from src.policy import init_params


def report(instance_id: str, method: str, makespan: int, gap: float | None = None) -> EvalReport:
    return EvalReport(
        instance_id=instance_id, method=method, makespan=makespan, gap=gap, time_ms=1.0
    )


@pytest.fixture
def manifest_dir(tiny: Instance, tmp_path: Path) -> Path:
    second = generate_taillard(3, 3, seed=2)
    save_instance(tiny, tmp_path / "tiny.txt")
    save_instance(second, tmp_path / "second.txt")
    manifest = Manifest(
        entries=[
            ManifestEntry(id="tiny", path="tiny.txt", num_jobs=2, num_machines=2),
            ManifestEntry(id=second.id, path="second.txt", num_jobs=3, num_machines=3),
        ]
    )
    (tmp_path / "manifest.json").write_text(manifest.model_dump_json(), encoding="utf-8")
    return tmp_path


class TestReferenceFiles:
    def test_load_refs(self, tiny_refs_path: Path) -> None:
        assert load_refs(tiny_refs_path) == {"tiny": 7.0}

    def test_refs_bad_line(self, tmp_path: Path) -> None:
        path = tmp_path / "refs.txt"
        path.write_text("ta01 1231\nta02\n", encoding="utf-8")
        with pytest.raises(ValueError, match="refs.txt:2"):
            load_refs(path)

    def test_refs_not_a_number(self, tmp_path: Path) -> None:
        path = tmp_path / "refs.txt"
        path.write_text("ta01 lots\n", encoding="utf-8")
        with pytest.raises(ValueError, match="not a number"):
            load_refs(path)

    def test_refs_must_be_positive(self, tmp_path: Path) -> None:
        path = tmp_path / "refs.txt"
        path.write_text("ta01 0\n", encoding="utf-8")
        with pytest.raises(ValueError, match="positive"):
            load_refs(path)

    def test_bundled_rule_table(self) -> None:
        table = load_rule_table()
        assert list(table.index) == [f"ta{k:02d}" for k in range(1, 11)]
        assert list(table.columns) == ["spt", "mwkr", "fdd-mwkr", "mopnr"]
        assert table.loc["ta01", "spt"] == 1872

    def test_bundled_averages(self) -> None:
        table = load_average_table()
        assert "6x6" in table.index
        assert table.loc["6x6", "learned"] == pytest.approx(574.09)

    def test_table_missing_columns(self, tmp_path: Path) -> None:
        path = tmp_path / "t.csv"
        path.write_text("instance,spt\nta01,1\n", encoding="utf-8")
        with pytest.raises(ValueError, match="missing columns mwkr"):
            load_rule_table(path)

    def test_gap(self) -> None:
        assert gap(1443, 1231) == pytest.approx(0.1722, abs=1e-4)
        assert gap(10, None) is None


class TestParseMethod:
    def test_rule(self) -> None:
        assert parse_method("mwkr") == Method(label="mwkr", rule="mwkr")

    def test_random_rule_label(self) -> None:
        assert parse_method("random:3").label == "random:3"

    def test_checkpoint(self) -> None:
        m = parse_method("runs/a/best.json")
        assert m.label == "policy:best"
        assert m.checkpoint == Path("runs/a/best.json")

    def test_unknown(self) -> None:
        with pytest.raises(ValueError, match="unknown rule"):
            parse_method("nope")


class TestSolve:
    def test_rule(self, tiny: Instance) -> None:
        rep, state = solve(tiny, parse_method("spt"), ref=7.0)
        assert rep.makespan == 7
        assert rep.gap == 0.0
        assert rep.method == "spt"
        assert state.done

    def test_checkpoint(
        self, tiny: Instance, small_policy_config: PolicyConfig, tmp_path: Path
    ) -> None:
        path = save_checkpoint(init_params(small_policy_config), tmp_path / "ck.json")
        rep, _ = solve(tiny, parse_method(str(path)), Semantics.NO_PUSH)
        assert rep.method == "policy:ck"
        assert rep.semantics == Semantics.NO_PUSH
        assert rep.gap is None
        assert rep.makespan >= 7


class TestEvaluateManifest:
    def test_rows_follow_manifest_then_methods(self, manifest_dir: Path) -> None:
        manifest = Manifest.model_validate_json(
            (manifest_dir / "manifest.json").read_text(encoding="utf-8")
        )
        methods = [parse_method("spt"), parse_method("mwkr")]
        rows = evaluate_manifest(manifest, manifest_dir, methods, refs={"tiny": 7.0})
        assert [(r.instance_id, r.method) for r in rows] == [
            ("tiny", "spt"),
            ("tiny", "mwkr"),
            ("ta3x3-1-99-s2", "spt"),
            ("ta3x3-1-99-s2", "mwkr"),
        ]
        assert rows[0].gap == 0.0
        assert rows[2].gap is None

    def test_missing_reference_warns(
        self, manifest_dir: Path, caplog: pytest.LogCaptureFixture
    ) -> None:
        manifest = Manifest.model_validate_json(
            (manifest_dir / "manifest.json").read_text(encoding="utf-8")
        )
        with caplog.at_level(logging.WARNING, logger="src.bench"):
            evaluate_manifest(manifest, manifest_dir, [parse_method("spt")], refs={"tiny": 7.0})
        assert "ta3x3-1-99-s2" in caplog.text

    def test_workers_do_not_change_results(self, manifest_dir: Path) -> None:
        manifest = Manifest.model_validate_json(
            (manifest_dir / "manifest.json").read_text(encoding="utf-8")
        )
        methods = [parse_method("spt"), parse_method("mopnr")]
        serial = evaluate_manifest(manifest, manifest_dir, methods)
        parallel = evaluate_manifest(manifest, manifest_dir, methods, workers=2)
        assert [(r.instance_id, r.method, r.makespan) for r in serial] == [
            (r.instance_id, r.method, r.makespan) for r in parallel
        ]


class TestTables:
    def test_frame_columns(self) -> None:
        df = reports_frame([report("a", "spt", 10)])
        assert list(df.columns) == list(REPORT_COLUMNS)

    def test_averages_keep_method_order(self) -> None:
        rows = [
            report("a", "spt", 10, 0.1),
            report("a", "mwkr", 20, 0.2),
            report("b", "spt", 30, 0.3),
            report("b", "mwkr", 40, None),
        ]
        avg = averages(rows)
        assert avg["method"].tolist() == ["spt", "mwkr"]
        assert avg["instances"].tolist() == [2, 2]
        assert avg["makespan"].tolist() == [20.0, 30.0]
        assert avg["gap"].tolist() == pytest.approx([0.2, 0.2])

    def test_averages_empty(self) -> None:
        avg = averages([])
        assert avg.empty
        assert list(avg.columns) == ["method", "instances", "makespan", "gap", "time_ms"]

    def test_write_reports(self, tmp_path: Path) -> None:
        path = tmp_path / "out" / "eval.csv"
        avg_path = write_reports([report("a", "spt", 10)], path)
        assert avg_path == tmp_path / "out" / "eval_averages.csv"
        assert pd.read_csv(path)["makespan"].tolist() == [10]
        assert pd.read_csv(avg_path)["method"].tolist() == ["spt"]


class TestCalibrate:
    def _table(self, value: int) -> pd.DataFrame:
        return pd.DataFrame(
            {"spt": [value], "mwkr": [value], "fdd-mwkr": [value], "mopnr": [value]},
            index=pd.Index(["tiny"], name="instance"),
        )

    def test_exact_table(self, tiny: Instance) -> None:
        rep = calibrate([tiny], self._table(7))
        assert len(rep.rows) == 8
        assert rep.exact_matches == {Semantics.PUSH: 4, Semantics.NO_PUSH: 4}
        assert rep.total_deviation[Semantics.PUSH] == 0.0
        assert rep.preferred == Semantics.NO_PUSH

    def test_deviation(self, tiny: Instance) -> None:
        rep = calibrate([tiny], self._table(14))
        assert rep.total_deviation[Semantics.PUSH] == pytest.approx(4 * 0.5)
        assert all(r.deviation == pytest.approx(-0.5) for r in rep.rows)

    def test_unknown_instances_skipped(
        self, push_instance: Instance, caplog: pytest.LogCaptureFixture
    ) -> None:
        with caplog.at_level(logging.WARNING, logger="src.bench"):
            rep = calibrate([push_instance], self._table(7))
        assert rep.rows == []
        assert rep.preferred is None
        assert "push" in caplog.text

    def test_tie_goes_to_default(self) -> None:
        rep = CalibrationReport()
        for sem in Semantics:
            rep.add(CalibrationRow(
                instance_id="x", rule="spt", semantics=sem, makespan=11, expected=10,
                deviation=0.1,
            ))  # fmt: skip
        rep.decide()
        assert rep.preferred == DEFAULT_SEMANTICS

    def test_smaller_deviation_wins(self) -> None:
        rep = CalibrationReport()
        for sem, got in ((Semantics.PUSH, 10.0), (Semantics.NO_PUSH, 12.0)):
            rep.add(CalibrationRow(
                instance_id="x", rule="spt", semantics=sem, makespan=got, expected=10,
                deviation=(got - 10) / 10,
            ))  # fmt: skip
        rep.decide()
        assert rep.preferred == Semantics.PUSH
        assert rep.exact_matches == {Semantics.PUSH: 1, Semantics.NO_PUSH: 0}


class TestCalibrateAverages:
    def _table(self, semantics: Semantics, size: str = "3x3", count: int = 4) -> pd.DataFrame:
        instances = generated_instances(size, count)
        row = {
            kind.value: sum(run_pdr(i, make_rule(kind), semantics).makespan for i in instances)
            / count
            for kind in BENCHMARK_RULES
        }
        return pd.DataFrame([row], index=pd.Index([size], name="size"))

    def test_matching_semantics_has_zero_deviation(self) -> None:
        rep = calibrate_averages(self._table(Semantics.NO_PUSH), "3x3", count=4)
        assert len(rep.rows) == 8
        assert {r.instance_id for r in rep.rows} == {"3x3"}
        assert rep.total_deviation[Semantics.NO_PUSH] == pytest.approx(0.0)
        assert rep.preferred == Semantics.NO_PUSH

    def test_published_table_loads(self) -> None:
        table = load_average_table()
        assert table.loc["6x6", "spt"] == pytest.approx(691.95)

    def test_unknown_size(self) -> None:
        with pytest.raises(ValueError, match="no published averages"):
            calibrate_averages(self._table(Semantics.NO_PUSH), "9x9", count=1)

    def test_count_must_be_positive(self) -> None:
        with pytest.raises(ValueError, match="count"):
            calibrate_averages(self._table(Semantics.NO_PUSH), "3x3", count=0)

    def test_generated_instances(self) -> None:
        insts = generated_instances("4x3", count=3, seed=7)
        assert [i.id for i in insts] == ["ta4x3-1-99-s7", "ta4x3-1-99-s8", "ta4x3-1-99-s9"]
        with pytest.raises(ValueError, match="size"):
            parse_size("six")


class TestTaillardSuite:
    def test_seed_table(self) -> None:
        seeds = load_seed_table()
        assert list(seeds.index) == [f"ta{k:02d}" for k in range(1, 11)]
        assert int(seeds.loc["ta01", "time_seed"]) == 840612802

    def test_rebuilds_missing_files_from_seeds(self, tmp_path: Path) -> None:
        (ta01,) = load_taillard_suite(["ta01"], bench_dir=tmp_path)
        assert ta01.id == "ta01"
        assert (ta01.num_jobs, ta01.num_machines) == (15, 15)
        assert ta01.proc_times[0][:3] == (94, 66, 10)
        assert ta01.routes[0][0] == 6

    def test_file_takes_precedence(self, tiny: Instance, tmp_path: Path) -> None:
        save_instance(tiny, tmp_path / "ta01.txt", InstanceFormat.TAILLARD)
        (inst,) = load_taillard_suite(["ta01"], bench_dir=tmp_path)
        assert inst.proc_times == tiny.proc_times
        assert inst.routes == tiny.routes

    def test_unknown_id_skipped(self, tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
        with caplog.at_level(logging.WARNING, logger="src.bench"):
            assert load_taillard_suite(["ta99"], bench_dir=tmp_path) == []
        assert "ta99" in caplog.text
