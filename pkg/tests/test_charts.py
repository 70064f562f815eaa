"""Tests for the SVG Gantt and training-curve charts."""

from __future__ import annotations

import math
from pathlib import Path

import pandas as pd
import pytest

from src.charts import _tick_step, curve_svg, gantt_svg, load_schedule, write_svg
from src.dispatch import ShortestProcessingTime, run_pdr
from src.env import export_schedule
from src.models import Instance, ScheduleExport


@pytest.fixture
def schedule(tiny: Instance) -> ScheduleExport:
    return export_schedule(run_pdr(tiny, ShortestProcessingTime()).state)


class TestGantt:
    def test_one_bar_per_operation(self, schedule: ScheduleExport) -> None:
        svg = gantt_svg(schedule)
        assert svg.startswith("<svg")
        assert svg.count('class="op"') == 4
        assert svg.count('class="machine"') == 2
        assert 'data-machine="0" data-job="1" data-pos="1" data-start="3" data-end="7"' in svg

    def test_ticks_cover_makespan(self, schedule: ScheduleExport) -> None:
        assert gantt_svg(schedule).count('class="tick"') == 8

    def test_title_escaped(self, schedule: ScheduleExport) -> None:
        svg = gantt_svg(schedule.model_copy(update={"instance_id": "<a&b>"}))
        assert "&lt;a&amp;b&gt;" in svg
        assert "<a&b>" not in svg

    def test_bar_width_scales(self, schedule: ScheduleExport) -> None:
        svg = gantt_svg(schedule, width=56 + 24 + 700)
        # 700 px for 7 time units; the 4-unit bar is 400 px wide
        assert 'width="400.000"' in svg

    @pytest.mark.parametrize(
        ("span", "step"), [(0, 1), (7, 1), (100, 10), (130, 20), (1500, 200), (40, 5)]
    )
    def test_tick_step(self, span: int, step: int) -> None:
        assert _tick_step(span) == step


class TestCurve:
    def _curve(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "iteration": [1, 2, 3],
                "avg_makespan_train": [60.0, 55.0, 50.0],
                "avg_makespan_validation": [math.nan, 52.0, 48.0],
            }
        )

    def test_lines_and_points(self) -> None:
        svg = curve_svg(self._curve(), title="run")
        assert svg.count('<polyline class="train"') == 1
        assert svg.count('<polyline class="validation"') == 1
        assert svg.count('class="validation-point"') == 2
        assert "<title>run</title>" in svg

    def test_without_validation(self) -> None:
        df = self._curve()
        df["avg_makespan_validation"] = math.nan
        svg = curve_svg(df)
        assert 'class="validation"' not in svg
        assert "training curve" in svg

    def test_flat_curve(self) -> None:
        df = pd.DataFrame(
            {
                "iteration": [1],
                "avg_makespan_train": [10.0],
                "avg_makespan_validation": [10.0],
            }
        )
        assert "nan" not in curve_svg(df)


class TestFiles:
    def test_schedule_round_trip(self, schedule: ScheduleExport, tmp_path: Path) -> None:
        path = tmp_path / "s.json"
        path.write_text(schedule.model_dump_json(), encoding="utf-8")
        assert load_schedule(path) == schedule

    def test_malformed_schedule(self, tmp_path: Path) -> None:
        path = tmp_path / "s.json"
        path.write_text('{"makespan": -1}', encoding="utf-8")
        with pytest.raises(ValueError, match="Malformed schedule"):
            load_schedule(path)

    def test_missing_schedule(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_schedule(tmp_path / "none.json")

    def test_write_svg(self, tmp_path: Path) -> None:
        path = write_svg("<svg/>", tmp_path / "charts" / "g.svg")
        assert path.read_text(encoding="utf-8") == "<svg/>"
        assert [p.name for p in path.parent.iterdir()] == ["g.svg"]
