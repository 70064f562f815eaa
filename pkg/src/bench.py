"""Benchmark harness: reference tables, batch evaluation and semantics calibration.

Reference values never come from this package's own solvers. They are read
from plain files:

* ``<id> <value>`` text (upper bounds or oracle optima), one per line;
* per-instance rule makespans (CSV ``instance,spt,mwkr,fdd-mwkr,mopnr``);
* size-level averages (CSV ``size,spt,mwkr,fdd-mwkr,mopnr,learned``);
* generator seeds of the Taillard instances (CSV ``instance,time_seed,machine_seed``).
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple

import pandas as pd
from pydantic import BaseModel, Field

from src.checkpoints import load_checkpoint
from src.dispatch import BENCHMARK_RULES, make_rule, parse_rule, run_pdr
from src.env import State
from src.instance_io import (
    BENCHMARKS_DIR,
    REFERENCES_DIR,
    generate_taillard,
    generate_taillard_published,
    load_instance,
)
from src.models import (
    DEFAULT_SEMANTICS,
    EvalReport,
    Instance,
    InstanceFormat,
    Manifest,
    Semantics,
)
from src.policy import PolicyParams
from src.ppo import greedy_rollout

__all__ = [
    "Method",
    "CalibrationRow",
    "CalibrationReport",
    "REPORT_COLUMNS",
    "TAILLARD_UB_PATH",
    "TAILLARD_RULES_PATH",
    "GENERATED_AVERAGES_PATH",
    "TAILLARD_SEEDS_PATH",
    "load_refs",
    "load_rule_table",
    "load_average_table",
    "load_seed_table",
    "load_taillard_suite",
    "parse_size",
    "generated_instances",
    "parse_method",
    "gap",
    "solve",
    "evaluate_manifest",
    "reports_frame",
    "averages",
    "write_reports",
    "calibrate",
    "calibrate_averages",
]

logger = logging.getLogger(__name__)

TAILLARD_UB_PATH = REFERENCES_DIR / "taillard_15x15_ub.txt"
TAILLARD_RULES_PATH = REFERENCES_DIR / "taillard_15x15_rules.csv"
GENERATED_AVERAGES_PATH = REFERENCES_DIR / "generated_averages.csv"
TAILLARD_SEEDS_PATH = REFERENCES_DIR / "taillard_15x15_seeds.csv"

REPORT_COLUMNS: tuple[str, ...] = (
    "instance_id",
    "method",
    "makespan",
    "gap",
    "time_ms",
    "semantics",
)

_RULE_COLUMNS = tuple(k.value for k in BENCHMARK_RULES)


# ---------------------------------------------------------------------------
# 1. Reference files
# ---------------------------------------------------------------------------


def load_refs(path: Path) -> dict[str, float]:
    """Parse ``<instance_id> <value>`` lines; ``#`` starts a comment."""
    if not path.exists():
        raise FileNotFoundError(f"Reference file not found: {path}")
    refs: dict[str, float] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected '<id> <value>', got {raw.strip()!r}")
        try:
            value = float(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: value {parts[1]!r} is not a number") from None
        if value <= 0:
            raise ValueError(f"{path}:{lineno}: reference must be positive, got {value}")
        refs[parts[0]] = value
    return refs


def _read_table(path: Path, key: str, extra: tuple[str, ...] = ()) -> pd.DataFrame:
    if not path.exists():
        raise FileNotFoundError(f"Reference table not found: {path}")
    df = pd.read_csv(path, comment="#")
    missing = [c for c in (key, *_RULE_COLUMNS, *extra) if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(missing)}")
    return df.set_index(key)


def load_rule_table(path: Path = TAILLARD_RULES_PATH) -> pd.DataFrame:
    """Per-instance published rule makespans, indexed by instance id."""
    return _read_table(path, "instance")


def load_average_table(path: Path = GENERATED_AVERAGES_PATH) -> pd.DataFrame:
    """Published averages over 100 generated instances, indexed by size (``6x6`` ...)."""
    return _read_table(path, "size", ("learned",))


def load_seed_table(path: Path = TAILLARD_SEEDS_PATH) -> pd.DataFrame:
    """Generator seeds per Taillard instance, indexed by instance id."""
    if not path.exists():
        raise FileNotFoundError(f"Seed table not found: {path}")
    df = pd.read_csv(path, comment="#")
    missing = [c for c in ("instance", "time_seed", "machine_seed") if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {', '.join(missing)}")
    return df.set_index("instance")


def load_taillard_suite(
    ids: Sequence[str],
    bench_dir: Path = BENCHMARKS_DIR,
    seeds: pd.DataFrame | None = None,
    num_jobs: int = 15,
    num_machines: int = 15,
) -> list[Instance]:
    """Load ``<bench_dir>/<id>.txt`` per id, rebuilding it from its seeds when absent.

    Ids with neither a file nor a seed row are skipped with a warning.
    """
    if seeds is None:
        seeds = load_seed_table()
    instances = []
    for instance_id in ids:
        path = bench_dir / f"{instance_id}.txt"
        if path.exists():
            instances.append(load_instance(path, InstanceFormat.TAILLARD, instance_id))
        elif instance_id in seeds.index:
            row = seeds.loc[instance_id]
            instances.append(
                generate_taillard_published(
                    num_jobs,
                    num_machines,
                    int(row["time_seed"]),
                    int(row["machine_seed"]),
                    instance_id,
                )
            )
            logger.debug("%s rebuilt from its generator seeds", instance_id)
        else:
            logger.warning("no file or seeds for %s; skipped", instance_id)
    return instances


def parse_size(size: str) -> tuple[int, int]:
    """``"6x6"`` -> ``(6, 6)``."""
    try:
        jobs, machines = (int(p) for p in size.lower().split("x"))
    except ValueError:
        raise ValueError(f"size must look like '6x6', got {size!r}") from None
    return jobs, machines


def generated_instances(
    size: str, count: int = 100, seed: int = 0, lo: int = 1, hi: int = 99
) -> list[Instance]:
    """``count`` random instances of *size* with consecutive seeds from *seed*."""
    jobs, machines = parse_size(size)
    return [generate_taillard(jobs, machines, lo, hi, seed + k) for k in range(count)]


def gap(makespan: float, ref: float | None) -> float | None:
    """``(makespan - ref) / ref``, or None without a reference."""
    if ref is None:
        return None
    return (makespan - ref) / ref


# ---------------------------------------------------------------------------
# 2. Solving
# ---------------------------------------------------------------------------


class Method(NamedTuple):
    """A rule name such as ``spt`` or a policy checkpoint path."""

    label: str
    rule: str | None = None
    checkpoint: Path | None = None


def parse_method(text: str) -> Method:
    """``*.json`` (or an existing file) is a checkpoint; anything else a rule."""
    path = Path(text)
    if text.endswith(".json") or path.is_file():
        return Method(label=f"policy:{path.stem}", checkpoint=path)
    rule = parse_rule(text)
    return Method(label=rule.name, rule=text)


@lru_cache(maxsize=8)
def _policy(path: Path) -> PolicyParams:
    return load_checkpoint(path)


def solve(
    inst: Instance,
    method: Method,
    semantics: Semantics = DEFAULT_SEMANTICS,
    ref: float | None = None,
) -> tuple[EvalReport, State]:
    """Solve *inst* once; returns the report row and the terminal state."""
    if method.checkpoint is not None:
        result = greedy_rollout(inst, _policy(method.checkpoint), semantics)
    else:
        assert method.rule is not None
        result = run_pdr(inst, parse_rule(method.rule), semantics)
    report = EvalReport(
        instance_id=inst.id,
        method=method.label,
        makespan=result.makespan,
        gap=gap(result.makespan, ref),
        time_ms=result.wall_time * 1000.0,
        semantics=semantics,
    )
    return report, result.state


class _Job(NamedTuple):
    path: Path
    fmt: InstanceFormat
    instance_id: str
    method: Method
    semantics: Semantics
    ref: float | None


def _run_job(job: _Job) -> EvalReport:
    inst = load_instance(job.path, job.fmt, job.instance_id)
    report, _ = solve(inst, job.method, job.semantics, job.ref)
    return report


def evaluate_manifest(
    manifest: Manifest,
    root: Path,
    methods: Sequence[Method],
    refs: dict[str, float] | None = None,
    semantics: Semantics = DEFAULT_SEMANTICS,
    workers: int = 1,
) -> list[EvalReport]:
    """Solve every manifest entry with every method.

    Rows follow manifest order, then method order, whatever the worker count.
    """
    refs = refs or {}
    for entry in manifest.entries:
        if entry.id not in refs:
            logger.warning("no reference value for %s; gap omitted", entry.id)
    jobs = [
        _Job(root / e.path, e.format, e.id, m, semantics, refs.get(e.id))
        for e in manifest.entries
        for m in methods
    ]
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


# ---------------------------------------------------------------------------
# 3. Tables
# ---------------------------------------------------------------------------


def reports_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    return pd.DataFrame(
        [r.model_dump(mode="json") for r in reports], columns=list(REPORT_COLUMNS)
    )


def averages(reports: Sequence[EvalReport]) -> pd.DataFrame:
    """Per-method mean makespan, gap and time, in first-appearance order."""
    df = reports_frame(reports)
    cols = ["method", "instances", "makespan", "gap", "time_ms"]
    if df.empty:
        return pd.DataFrame(columns=cols)
    df["gap"] = pd.to_numeric(df["gap"])
    g = df.groupby("method", sort=False).agg(
        instances=("instance_id", "count"),
        makespan=("makespan", "mean"),
        gap=("gap", "mean"),
        time_ms=("time_ms", "mean"),
    )
    return g.reset_index()[cols]


def write_reports(reports: Sequence[EvalReport], path: Path) -> Path:
    """Write the rows to *path* and the averages next to it as ``<stem>_averages.csv``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    reports_frame(reports).to_csv(path, index=False)
    avg_path = path.with_name(f"{path.stem}_averages.csv")
    averages(reports).to_csv(avg_path, index=False)
    return avg_path


# ---------------------------------------------------------------------------
# 4. Transition-semantics calibration
# ---------------------------------------------------------------------------


class CalibrationRow(BaseModel):
    instance_id: str = Field(..., description="Instance id, or the size for average rows")
    rule: str
    semantics: Semantics
    makespan: float = Field(..., gt=0)
    expected: float = Field(..., gt=0)
    deviation: float = Field(..., description="(makespan - expected) / expected")


class CalibrationReport(BaseModel):
    """How closely each placement semantics reproduces published rule makespans."""

    rows: list[CalibrationRow] = Field(default_factory=list)
    total_deviation: dict[Semantics, float] = Field(
        default_factory=dict, description="Sum of |deviation| per semantics"
    )
    exact_matches: dict[Semantics, int] = Field(default_factory=dict)
    preferred: Semantics | None = None

    def add(self, row: CalibrationRow) -> None:
        self.rows.append(row)
        total = self.total_deviation.get(row.semantics, 0.0)
        self.total_deviation[row.semantics] = total + abs(row.deviation)
        exact = self.exact_matches.get(row.semantics, 0)
        self.exact_matches[row.semantics] = exact + (row.makespan == row.expected)

    def decide(self) -> None:
        """Name the semantics with the smallest total; ties go to the default."""
        if not self.rows:
            return
        for sem in Semantics:
            logger.info(
                "%s: total |deviation| %.4f, %d exact",
                sem,
                self.total_deviation.get(sem, 0.0),
                self.exact_matches.get(sem, 0),
            )
        self.preferred = min(
            self.total_deviation,
            key=lambda s: (self.total_deviation[s], s != DEFAULT_SEMANTICS),
        )


def _row(key: str, rule: str, sem: Semantics, got: float, want: float) -> CalibrationRow:
    return CalibrationRow(
        instance_id=key,
        rule=rule,
        semantics=sem,
        makespan=got,
        expected=want,
        deviation=(got - want) / want,
    )


def calibrate(instances: Sequence[Instance], expected: pd.DataFrame) -> CalibrationReport:
    """Run the four rules under both semantics against the *expected* table."""
    report = CalibrationReport()
    usable = [i for i in instances if i.id in expected.index]
    for inst in instances:
        if inst.id not in expected.index:
            logger.warning("no published rule makespans for %s; skipped", inst.id)
    for sem in Semantics:
        for inst in usable:
            for kind in BENCHMARK_RULES:
                want = float(expected.loc[inst.id, kind.value])
                got = run_pdr(inst, make_rule(kind), sem).makespan
                report.add(_row(inst.id, kind.value, sem, got, want))
    report.decide()
    return report


def calibrate_averages(
    table: pd.DataFrame,
    size: str = "6x6",
    count: int = 100,
    seed: int = 0,
) -> CalibrationReport:
    """Compare rule averages on generated *size* instances with the *table* row.

    Needs no benchmark files; the instances come from :func:`generated_instances`.
    """
    if size not in table.index:
        raise ValueError(f"no published averages for size {size!r}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    instances = generated_instances(size, count, seed)
    report = CalibrationReport()
    for sem in Semantics:
        for kind in BENCHMARK_RULES:
            spans = [run_pdr(inst, make_rule(kind), sem).makespan for inst in instances]
            want = float(table.loc[size, kind.value])
            report.add(_row(size, kind.value, sem, sum(spans) / len(spans), want))
    report.decide()
    return report
