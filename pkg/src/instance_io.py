"""Instance parsing, writing, generation, validation and dataset manifests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from src.models import Instance, InstanceFormat, Manifest

__all__ = [
    "ValidationResult",
    "InstanceFormatError",
    "parse_instance",
    "write_instance",
    "generate_taillard",
    "TaillardStream",
    "generate_taillard_published",
    "validate",
    "load_instance",
    "save_instance",
    "load_manifest",
    "save_manifest",
    "DATA_DIR",
    "BENCHMARKS_DIR",
    "REFERENCES_DIR",
]

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
BENCHMARKS_DIR = DATA_DIR / "benchmarks"
REFERENCES_DIR = DATA_DIR / "references"

# Section labels found in published Taillard files; skipped when alone on a line.
_TAILLARD_LABELS = frozenset({"times", "machines"})


class ValidationResult:
    """Collected validation errors and warnings."""

    def __init__(self) -> None:
        self.errors: list[str] = []
        self.warnings: list[str] = []

    @property
    def ok(self) -> bool:
        return len(self.errors) == 0

    def error(self, msg: str) -> None:
        self.errors.append(msg)

    def warn(self, msg: str) -> None:
        self.warnings.append(msg)

    def summary(self) -> str:
        lines = []
        if self.errors:
            lines.append(f"ERRORS ({len(self.errors)}):")
            for e in self.errors:
                lines.append(f"  - {e}")
        if self.warnings:
            lines.append(f"WARNINGS ({len(self.warnings)}):")
            for w in self.warnings:
                lines.append(f"  - {w}")
        if self.ok and not self.warnings:
            lines.append("All checks passed.")
        return "\n".join(lines)


class InstanceFormatError(ValueError):
    """Malformed instance text; carries 1-based line/column of the fault."""

    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        self.line = line
        self.column = column
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(f"{where}{message}")


# ---------------------------------------------------------------------------
# Tokenizing
# ---------------------------------------------------------------------------


class _Row:
    """Integers of one non-empty input line with their source positions."""

    __slots__ = ("line", "values", "columns")

    def __init__(self, line: int, values: list[int], columns: list[int]) -> None:
        self.line = line
        self.values = values
        self.columns = columns

    def end_column(self) -> int:
        return self.columns[-1] if self.columns else 1


def _tokenize(text: str, skip_labels: frozenset[str] = frozenset()) -> list[_Row]:
    rows: list[_Row] = []
    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        if not raw.strip():
            continue
        if raw.strip().lower() in skip_labels:
            continue
        values: list[int] = []
        columns: list[int] = []
        col = 0
        for token in raw.split():
            col = raw.index(token, col)
            try:
                values.append(int(token))
            except ValueError:
                raise InstanceFormatError(
                    f"malformed token {token!r}, expected an integer", lineno, col + 1
                ) from None
            columns.append(col + 1)
            col += len(token)
        rows.append(_Row(lineno, values, columns))
    return rows


def _header(rows: list[_Row], exact: bool) -> tuple[int, int]:
    if not rows:
        raise InstanceFormatError("empty input: missing 'num_jobs num_machines' header")
    head = rows[0]
    if len(head.values) < 2 or (exact and len(head.values) != 2):
        raise InstanceFormatError(
            f"header must be 'num_jobs num_machines', got {len(head.values)} values",
            head.line,
            1,
        )
    num_jobs, num_machines = head.values[0], head.values[1]
    if num_jobs < 1 or num_machines < 1:
        raise InstanceFormatError(
            f"dimension mismatch: header declares {num_jobs}x{num_machines}", head.line, 1
        )
    return num_jobs, num_machines


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------


def parse_instance(
    text: str,
    fmt: InstanceFormat = InstanceFormat.STANDARD,
    instance_id: str = "",
) -> Instance:
    """Parse *text* in the declared format and return a validated Instance.

    Standard: header ``num_jobs num_machines`` then one line per job of
    ``machine proc_time`` pairs (0-based machines). Taillard: header, a
    ``num_jobs x num_machines`` duration matrix, then the machine-order matrix
    with 1-based machine ids. Release times are 0.

    Raises :class:`InstanceFormatError` with line/column context.
    """
    if fmt == InstanceFormat.TAILLARD:
        inst = _parse_taillard(text, instance_id)
    else:
        inst = _parse_standard(text, instance_id)

    result = validate(inst)
    if not result.ok:
        raise InstanceFormatError("; ".join(result.errors))
    return inst


def _parse_standard(text: str, instance_id: str) -> Instance:
    rows = _tokenize(text)
    num_jobs, num_machines = _header(rows, exact=True)
    job_rows = rows[1:]
    if len(job_rows) != num_jobs:
        last = rows[-1]
        raise InstanceFormatError(
            f"dimension mismatch: expected {num_jobs} job lines, found {len(job_rows)}",
            last.line,
            last.end_column(),
        )

    routes: list[tuple[int, ...]] = []
    times: list[tuple[int, ...]] = []
    for row in job_rows:
        if len(row.values) % 2:
            raise InstanceFormatError(
                "dimension mismatch: job line must hold 'machine proc_time' pairs",
                row.line,
                row.end_column(),
            )
        machines = row.values[0::2]
        durations = row.values[1::2]
        for k, machine in enumerate(machines):
            if not 0 <= machine < num_machines:
                raise InstanceFormatError(
                    f"machine id {machine} out of range", row.line, row.columns[2 * k]
                )
        routes.append(tuple(machines))
        times.append(tuple(durations))

    return Instance(
        num_jobs=num_jobs,
        num_machines=num_machines,
        routes=tuple(routes),
        proc_times=tuple(times),
        release=tuple(0 for _ in range(num_jobs)),
        id=instance_id,
    )


def _parse_taillard(text: str, instance_id: str) -> Instance:
    rows = _tokenize(text, skip_labels=_TAILLARD_LABELS)
    # Published files append seeds and bounds to the header; only the first
    # two values are dimensions.
    num_jobs, num_machines = _header(rows, exact=False)
    body = rows[1:]
    if len(body) != 2 * num_jobs:
        last = rows[-1]
        raise InstanceFormatError(
            f"dimension mismatch: expected {2 * num_jobs} matrix lines, found {len(body)}",
            last.line,
            last.end_column(),
        )
    for row in body:
        if len(row.values) != num_machines:
            raise InstanceFormatError(
                f"dimension mismatch: expected {num_machines} values, found {len(row.values)}",
                row.line,
                row.end_column(),
            )

    times = [tuple(r.values) for r in body[:num_jobs]]
    routes: list[tuple[int, ...]] = []
    for row in body[num_jobs:]:
        route: list[int] = []
        for k, machine in enumerate(row.values):
            if not 1 <= machine <= num_machines:
                raise InstanceFormatError(
                    f"machine id {machine} out of range", row.line, row.columns[k]
                )
            route.append(machine - 1)
        if sorted(route) != list(range(num_machines)):
            raise InstanceFormatError(
                "route is not a permutation of the machines", row.line, row.columns[0]
            )
        routes.append(tuple(route))

    return Instance(
        num_jobs=num_jobs,
        num_machines=num_machines,
        routes=tuple(routes),
        proc_times=tuple(times),
        release=tuple(0 for _ in range(num_jobs)),
        id=instance_id,
    )


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------


def write_instance(inst: Instance, fmt: InstanceFormat = InstanceFormat.STANDARD) -> str:
    """Render *inst* in the given text format (LF line endings)."""
    lines = [f"{inst.num_jobs} {inst.num_machines}"]
    if fmt == InstanceFormat.TAILLARD:
        if not inst.is_permutation_shaped():
            raise ValueError(
                "Taillard format requires every route to be a permutation of the machines"
            )
        lines.extend(" ".join(str(p) for p in times) for times in inst.proc_times)
        lines.extend(" ".join(str(m + 1) for m in route) for route in inst.routes)
    else:
        for route, times in zip(inst.routes, inst.proc_times, strict=True):
            lines.append(" ".join(f"{m} {p}" for m, p in zip(route, times, strict=True)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def generate_taillard(
    num_jobs: int,
    num_machines: int,
    lo: int = 1,
    hi: int = 99,
    seed: int = 0,
) -> Instance:
    """Generate an instance by Taillard's method.

    Every job visits every machine once in an independent uniformly random
    order; each duration is uniform on the integers ``[lo, hi]``. The PCG64
    stream seeded with *seed* makes the result reproducible.
    """
    if num_jobs < 1 or num_machines < 1:
        raise ValueError(f"dimensions must be >= 1, got {num_jobs}x{num_machines}")
    if not 1 <= lo <= hi:
        raise ValueError(f"duration range must satisfy 1 <= lo <= hi, got [{lo}, {hi}]")

    rng = np.random.default_rng(seed)
    times = rng.integers(lo, hi + 1, size=(num_jobs, num_machines), dtype=np.int64)
    routes = [rng.permutation(num_machines) for _ in range(num_jobs)]
    return Instance(
        num_jobs=num_jobs,
        num_machines=num_machines,
        routes=tuple(tuple(int(m) for m in r) for r in routes),
        proc_times=tuple(tuple(int(p) for p in row) for row in times),
        release=tuple(0 for _ in range(num_jobs)),
        id=f"ta{num_jobs}x{num_machines}-{lo}-{hi}-s{seed}",
    )


# Park-Miller minimal standard generator in Schrage's form, as used to
# publish the Taillard benchmark instances.
_LCG_M = 2_147_483_647
_LCG_A = 16_807
_LCG_B = 127_773
_LCG_C = 2_836


class TaillardStream:
    """The integer stream behind the published Taillard instances."""

    def __init__(self, seed: int) -> None:
        if not 0 < seed < _LCG_M:
            raise ValueError(f"seed must lie in (0, {_LCG_M}), got {seed}")
        self.seed = seed

    def unif(self, low: int, high: int) -> int:
        """Next integer uniform on ``[low, high]``."""
        k = self.seed // _LCG_B
        self.seed = _LCG_A * (self.seed % _LCG_B) - k * _LCG_C
        if self.seed < 0:
            self.seed += _LCG_M
        return low + int(self.seed / _LCG_M * (high - low + 1))


def generate_taillard_published(
    num_jobs: int,
    num_machines: int,
    time_seed: int,
    machine_seed: int,
    instance_id: str | None = None,
) -> Instance:
    """Rebuild a published Taillard instance from its two seeds.

    Durations are drawn job by job on ``[1, 99]`` from the time stream. Each
    route starts as ``0..m-1`` and position ``j`` is swapped with a position
    drawn on ``[j, m-1]`` from the machine stream.
    """
    if num_jobs < 1 or num_machines < 1:
        raise ValueError(f"dimensions must be >= 1, got {num_jobs}x{num_machines}")
    times = TaillardStream(time_seed)
    machines = TaillardStream(machine_seed)
    proc = [[times.unif(1, 99) for _ in range(num_machines)] for _ in range(num_jobs)]
    routes = []
    for _ in range(num_jobs):
        route = list(range(num_machines))
        for j in range(num_machines):
            k = machines.unif(j, num_machines - 1)
            route[j], route[k] = route[k], route[j]
        routes.append(tuple(route))
    return Instance(
        num_jobs=num_jobs,
        num_machines=num_machines,
        routes=tuple(routes),
        proc_times=tuple(tuple(row) for row in proc),
        release=tuple(0 for _ in range(num_jobs)),
        id=instance_id or f"ta{num_jobs}x{num_machines}-t{time_seed}-m{machine_seed}",
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def validate(inst: Instance) -> ValidationResult:
    """Return every invariant violation of *inst* (empty result when valid)."""
    result = ValidationResult()

    if len(inst.routes) != inst.num_jobs or len(inst.proc_times) != inst.num_jobs:
        result.error(
            f"dimension mismatch: {inst.num_jobs} jobs declared, "
            f"{len(inst.routes)} routes and {len(inst.proc_times)} duration lists given"
        )
    if len(inst.release) != inst.num_jobs:
        result.error(
            f"dimension mismatch: {len(inst.release)} release times for {inst.num_jobs} jobs"
        )

    for i, (route, times) in enumerate(zip(inst.routes, inst.proc_times, strict=False)):
        if len(route) != len(times):
            result.error(
                f"job {i}: dimension mismatch, route has {len(route)} ops "
                f"but {len(times)} durations"
            )
        if not route:
            result.error(f"job {i}: no operations")
        for j, machine in enumerate(route):
            if not 0 <= machine < inst.num_machines:
                result.error(f"job {i} op {j}: machine id {machine} out of range")
        for j, p in enumerate(times):
            if p < 1:
                result.error(f"job {i} op {j}: nonpositive duration {p}")

    for i, r in enumerate(inst.release):
        if r < 0:
            result.error(f"job {i}: negative release time {r}")

    if result.ok and not inst.is_permutation_shaped():
        result.warn("routes are not machine permutations (Taillard format unavailable)")

    return result


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def load_instance(
    path: Path,
    fmt: InstanceFormat = InstanceFormat.STANDARD,
    instance_id: str | None = None,
) -> Instance:
    """Read and parse an instance file; the id defaults to the file stem."""
    if not path.exists():
        raise FileNotFoundError(f"Instance file not found: {path}")
    text = path.read_text(encoding="utf-8")
    return parse_instance(text, fmt, instance_id if instance_id is not None else path.stem)


def save_instance(
    inst: Instance, path: Path, fmt: InstanceFormat = InstanceFormat.STANDARD
) -> None:
    """Write an instance file with atomic write."""
    _atomic_write(path, write_instance(inst, fmt))


def load_manifest(path: Path) -> Manifest:
    """Load and validate a dataset manifest."""
    if not path.exists():
        raise FileNotFoundError(f"Manifest not found: {path}")
    try:
        return Manifest.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ValueError(f"Malformed manifest {path}: {e}") from e


def save_manifest(manifest: Manifest, path: Path) -> None:
    """Save a manifest with atomic write."""
    _atomic_write(path, manifest.model_dump_json(indent=2) + "\n")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8", newline="\n")
    tmp.replace(path)
