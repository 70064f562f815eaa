"""Command-line entry point.

Subcommands::

    gen        generate random Taillard-style instances and a manifest
    solve      solve one instance with a rule or a policy checkpoint
    train      train a policy from a key=value config
    eval       evaluate methods over a manifest, writing a CSV report
    oracle     exact makespan of a tiny instance
    gantt      render a schedule JSON as an SVG Gantt chart
    calibrate  compare push and no-push placement on published rule results
    curve      render a training curve CSV as SVG

Exit codes: 0 success, 1 infeasible or failed verification, 2 usage, I/O,
config or checkpoint errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from src.bench import (
    GENERATED_AVERAGES_PATH,
    TAILLARD_RULES_PATH,
    averages,
    calibrate,
    calibrate_averages,
    evaluate_manifest,
    load_refs,
    load_average_table,
    load_rule_table,
    load_taillard_suite,
    parse_method,
    solve,
    write_reports,
)
from src.charts import curve_svg, gantt_svg, load_schedule, write_svg
from src.config import ConfigError, build_train_config, load_train_config, parse_config_text
from src.env import ScheduleCycleError, export_schedule, verify_schedule
from src.instance_io import (
    BENCHMARKS_DIR,
    generate_taillard,
    load_instance,
    load_manifest,
    save_instance,
    save_manifest,
)
from src.models import DEFAULT_SEMANTICS, InstanceFormat, Manifest, ManifestEntry, Semantics
from src.oracle import optimal_makespan
from src.ppo import TrainingDiverged, read_curve, train

__all__ = ["main", "build_parser", "DURATION_PRESETS"]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

DURATION_PRESETS: dict[str, tuple[int, int]] = {
    "taillard": (1, 99),
    "dmu": (1, 199),
}


class _Failed(Exception):
    """Infeasible result or failed verification (exit code 1)."""


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _duration_range(args: argparse.Namespace) -> tuple[int, int]:
    if args.preset:
        return DURATION_PRESETS[args.preset]
    return args.low, args.high


def cmd_gen(args: argparse.Namespace) -> int:
    low, high = _duration_range(args)
    if args.count < 0:
        raise ValueError(f"count must be non-negative, got {args.count}")
    out: Path = args.out_dir
    fmt = InstanceFormat(args.format)
    entries = []
    for k in range(args.count):
        inst = generate_taillard(args.jobs, args.machines, low, high, args.seed + k)
        name = f"{inst.id}.txt"
        save_instance(inst, out / name, fmt)
        entries.append(
            ManifestEntry(
                id=inst.id,
                path=name,
                format=fmt,
                num_jobs=args.jobs,
                num_machines=args.machines,
                seed=args.seed + k,
            )
        )
    manifest = Manifest(low=low, high=high, seed=args.seed, entries=entries)
    save_manifest(manifest, out / "manifest.json")
    logger.info("wrote %d instances and manifest.json to %s", len(entries), out)
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    inst = load_instance(args.instance, InstanceFormat(args.format))
    method = parse_method(args.method)
    if method.checkpoint is not None and not method.checkpoint.exists():
        raise FileNotFoundError(f"checkpoint not found: {method.checkpoint}")
    semantics = Semantics(args.semantics)
    report, state = solve(inst, method, semantics, args.ref)
    checked = verify_schedule(state)
    if not checked.ok:
        raise _Failed(f"{inst.id}: infeasible schedule: {checked.summary()}")
    schedule = export_schedule(state)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(schedule.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info("schedule written to %s", args.out)
    print(report.model_dump_json())
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    if args.overrides:
        raw = parse_config_text(args.config.read_text(encoding="utf-8"))
        raw.update(parse_config_text("\n".join(args.overrides)))
        cfg = build_train_config(raw)
    else:
        cfg = load_train_config(args.config)
    result = train(cfg, resume=args.resume)
    print(
        json.dumps(
            {
                "best_checkpoint": str(result.best_path),
                "last_checkpoint": str(result.last_path),
                "curve": str(result.curve_path),
                "best_validation": result.best_validation,
                "initial_validation": result.initial_validation,
            }
        )
    )
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    methods = [parse_method(m) for m in args.methods]
    refs = load_refs(args.refs) if args.refs else None
    reports = evaluate_manifest(
        manifest,
        args.manifest.parent,
        methods,
        refs,
        Semantics(args.semantics),
        args.workers,
    )
    avg_path = write_reports(reports, args.out)
    logger.info("wrote %d rows to %s and averages to %s", len(reports), args.out, avg_path)
    table = averages(reports)
    if not table.empty:
        print(table.to_string(index=False))
    return EXIT_OK


def cmd_oracle(args: argparse.Namespace) -> int:
    inst = load_instance(args.instance, InstanceFormat(args.format))
    if inst.num_ops > args.max_ops:
        raise ValueError(
            f"{inst.id} has {inst.num_ops} operations; the oracle accepts at most "
            f"{args.max_ops} (raise --max-ops to override)"
        )
    result = optimal_makespan(inst, args.node_limit)
    summary = result.model_dump(mode="json", exclude={"starts"})
    print(json.dumps({"instance_id": inst.id, **summary}))
    return EXIT_OK


def cmd_gantt(args: argparse.Namespace) -> int:
    schedule = load_schedule(args.schedule)
    write_svg(gantt_svg(schedule, width=args.width), args.out)
    logger.info("gantt chart written to %s", args.out)
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    if args.against == "averages":
        table = load_average_table(args.expected or GENERATED_AVERAGES_PATH)
        report = calibrate_averages(table, args.size, args.count, args.seed)
    else:
        expected = load_rule_table(args.expected or TAILLARD_RULES_PATH)
        instances = load_taillard_suite([str(i) for i in expected.index], args.bench_dir)
        if not instances:
            raise FileNotFoundError(
                f"no benchmark instances found in {args.bench_dir} or the seed table"
            )
        report = calibrate(instances, expected)
    text = report.model_dump_json(indent=2) + "\n"
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text, encoding="utf-8")
    print(json.dumps({"preferred": report.preferred, "total_deviation": report.total_deviation}))
    return EXIT_OK


def cmd_curve(args: argparse.Namespace) -> int:
    curve = read_curve(args.curve)
    write_svg(curve_svg(curve, title=args.curve.parent.name), args.out)
    logger.info("curve chart written to %s", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_format(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--format",
        choices=[f.value for f in InstanceFormat],
        default=InstanceFormat.STANDARD.value,
        help="instance file format (default: standard)",
    )


def _add_semantics(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--semantics",
        choices=[s.value for s in Semantics],
        default=DEFAULT_SEMANTICS.value,
        help=f"placement of a dispatched operation (default: {DEFAULT_SEMANTICS.value})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jobshop", description="Learned and classical dispatching for job-shop scheduling."
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity (default: INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate random instances and a manifest")
    p.add_argument("--jobs", type=int, required=True)
    p.add_argument("--machines", type=int, required=True)
    p.add_argument("--low", type=int, default=1, help="smallest duration (default: 1)")
    p.add_argument("--high", type=int, default=99, help="largest duration (default: 99)")
    p.add_argument("--preset", choices=sorted(DURATION_PRESETS), help="duration range preset")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)
    _add_format(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="solve one instance")
    p.add_argument("instance", type=Path)
    p.add_argument(
        "--method",
        default="spt",
        help="spt, mwkr, fdd-mwkr, mopnr, random[:seed] or a .json checkpoint",
    )
    p.add_argument("--out", type=Path, help="write the schedule JSON here")
    p.add_argument("--ref", type=float, help="reference makespan for the gap column")
    _add_format(p)
    _add_semantics(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train a policy with PPO")
    p.add_argument("config", type=Path, help="key=value training config")
    p.add_argument("--resume", action="store_true", help="continue from last.json in out_dir")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate methods over a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--methods", nargs="+", default=["spt", "mwkr", "fdd-mwkr", "mopnr"])
    p.add_argument("--refs", type=Path, help="'<id> <value>' reference file")
    p.add_argument("--out", type=Path, default=Path("results/eval.csv"))
    p.add_argument("--workers", type=int, default=1)
    _add_semantics(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="exact makespan of a tiny instance")
    p.add_argument("instance", type=Path)
    p.add_argument("--node-limit", type=int, default=1_000_000)
    p.add_argument("--max-ops", type=int, default=25)
    _add_format(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("gantt", help="render a schedule JSON as SVG")
    p.add_argument("schedule", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--width", type=int, default=960)
    p.set_defaults(func=cmd_gantt)

    p = sub.add_parser("calibrate", help="compare placement semantics on published results")
    p.add_argument("--bench-dir", type=Path, default=BENCHMARKS_DIR)
    p.add_argument(
        "--against",
        choices=["taillard", "averages"],
        default="taillard",
        help="per-instance Taillard makespans or generated-instance averages",
    )
    p.add_argument(
        "--expected", type=Path, help="published table (default: the bundled one for --against)"
    )
    p.add_argument("--size", default="6x6", help="instance size for --against averages")
    p.add_argument("--count", type=int, default=100, help="generated instances per size")
    p.add_argument("--seed", type=int, default=0, help="seed of the first generated instance")
    p.add_argument("--out", type=Path, help="write the full JSON report here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("curve", help="render a training curve CSV as SVG")
    p.add_argument("curve", type=Path)
    p.add_argument("out", type=Path)
    p.set_defaults(func=cmd_curve)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return int(args.func(args))
    except (_Failed, ScheduleCycleError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILED
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
