"""SVG charts rendered from jinja2 templates: schedule Gantt and training curve."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, NamedTuple

import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import ValidationError

from src.models import ScheduleExport

__all__ = [
    "TEMPLATES_DIR",
    "Bar",
    "load_schedule",
    "gantt_svg",
    "curve_svg",
    "write_svg",
]

TEMPLATES_DIR = Path(__file__).resolve().parent / "templates"

_env = Environment(
    loader=FileSystemLoader(TEMPLATES_DIR),
    autoescape=True,
    trim_blocks=True,
    lstrip_blocks=True,
    undefined=StrictUndefined,
    keep_trailing_newline=True,
)

_LEFT = 56
_RIGHT_PAD = 24
_TOP = 24
_ROW_HEIGHT = 28
_BAR_HEIGHT = 20


class Bar(NamedTuple):
    x: float
    y: float
    width: float
    machine: int
    job: int
    pos: int
    start: int
    end: int
    label: str
    fill: str


def load_schedule(path: Path) -> ScheduleExport:
    """Read a schedule JSON written by ``solve``."""
    if not path.exists():
        raise FileNotFoundError(f"Schedule file not found: {path}")
    try:
        return ScheduleExport.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ValueError(f"Malformed schedule {path}: {e}") from e


def _job_fill(job: int) -> str:
    return f"hsl({(job * 137) % 360},55%,62%)"


def _tick_step(span: int, target: int = 10) -> int:
    """A 1/2/5 x 10^k step giving about *target* ticks."""
    if span <= 0:
        return 1
    raw = span / target
    base = 10 ** math.floor(math.log10(raw)) if raw >= 1 else 1
    for mult in (1, 2, 5, 10):
        if base * mult >= raw:
            return int(base * mult)
    return int(base * 10)


def gantt_svg(schedule: ScheduleExport, width: int = 960) -> str:
    """One row per machine, one rectangle per operation, time on x."""
    right = width - _RIGHT_PAD
    horizon = max(schedule.makespan, max((o.end for o in schedule.operations), default=0))
    scale = (right - _LEFT) / horizon if horizon > 0 else 0.0
    rows = [{"machine": m, "y": _TOP + m * _ROW_HEIGHT} for m in range(schedule.num_machines)]
    bars = [
        Bar(
            x=_LEFT + o.start * scale,
            y=_TOP + o.machine * _ROW_HEIGHT + (_ROW_HEIGHT - _BAR_HEIGHT) / 2,
            width=(o.end - o.start) * scale,
            machine=o.machine,
            job=o.op.job,
            pos=o.op.pos,
            start=o.start,
            end=o.end,
            label=o.op.label(),
            fill=_job_fill(o.op.job),
        )
        for o in schedule.operations
    ]
    step = _tick_step(horizon)
    ticks = [{"x": _LEFT + t * scale, "value": t} for t in range(0, horizon + 1, step)]
    axis_y = _TOP + schedule.num_machines * _ROW_HEIGHT
    return _env.get_template("gantt.svg.j2").render(
        title=f"{schedule.instance_id} makespan {schedule.makespan} ({schedule.semantics})",
        width=width,
        height=axis_y + 32,
        left=_LEFT,
        right=right,
        top=_TOP,
        axis_y=axis_y,
        row_height=_ROW_HEIGHT,
        bar_height=_BAR_HEIGHT,
        rows=rows,
        bars=bars,
        ticks=ticks,
    )


def _points(xs: pd.Series, ys: pd.Series, fx: Any, fy: Any) -> list[tuple[float, float]]:
    return [(fx(x), fy(y)) for x, y in zip(xs, ys, strict=True) if pd.notna(y)]


def curve_svg(curve: pd.DataFrame, width: int = 720, height: int = 360, title: str = "") -> str:
    """Rolling training average as a line, validation averages as marked points."""
    right, top, bottom = width - _RIGHT_PAD, _TOP, height - 32
    its = curve["iteration"]
    train = curve["avg_makespan_train"]
    val = curve["avg_makespan_validation"]
    values = pd.concat([train, val]).dropna()
    y_min = float(values.min()) if len(values) else 0.0
    y_max = float(values.max()) if len(values) else 1.0
    if y_max - y_min < 1e-9:
        y_min, y_max = y_min - 1.0, y_max + 1.0
    x_min = int(its.min()) if len(its) else 0
    x_max = int(its.max()) if len(its) else 1
    x_span = max(x_max - x_min, 1)

    def fx(x: float) -> float:
        return _LEFT + (x - x_min) / x_span * (right - _LEFT)

    def fy(y: float) -> float:
        return bottom - (y - y_min) / (y_max - y_min) * (bottom - top)

    return _env.get_template("curve.svg.j2").render(
        title=title or "training curve",
        width=width,
        height=height,
        left=_LEFT,
        right=right,
        top=top,
        bottom=bottom,
        x_min=x_min,
        x_max=x_max,
        y_min=y_min,
        y_max=y_max,
        train_points=_points(its, train, fx, fy),
        validation_points=_points(its, val, fx, fy),
    )


def write_svg(svg: str, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(svg, encoding="utf-8")
    tmp.replace(path)
    return path
