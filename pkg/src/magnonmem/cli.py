"""Command-line entry point.

    magnonmem run --config PATH
    magnonmem fiducials|theta-sweep|g2|concurrence|rate [--config PATH] [options]

Exit codes: 0 success, 2 configuration error, 3 insufficient statistics,
4 maximum-likelihood non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import experiments
from .plan import FORMATS, MODES, ConfigError, ExperimentPlan, default_plan, load_plan
from .tomography import InsufficientDataError

EXIT_OK, EXIT_CONFIG, EXIT_STATS, EXIT_CONVERGENCE = 0, 2, 3, 4


def format_cell(value) -> str:
    """CSV cell text: 6 significant digits for floats."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6g}"
    if hasattr(value, "item"):
        return format_cell(value.item())
    return str(value)


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


def write_outputs(result, plan: ExperimentPlan, name: str) -> list[Path]:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if plan.format in ("csv", "both"):
        path = out / f"{name}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(result.columns)
            for row in result.rows():
                writer.writerow([format_cell(v) for v in row])
        written.append(path)
    if plan.format in ("json", "both"):
        path = out / f"{name}.json"
        payload = _json_safe(result.to_dict())
        path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
        written.append(path)
    if plan.records:
        tables = result.tables() if hasattr(result, "tables") else {}
        if hasattr(result, "table"):
            tables = {"balanced": result.table}
        for label, table in tables.items():
            path = out / f"{name}_{label}.records.csv"
            table.write(path)
            written.append(path)
    return written


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magnonmem", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", *MODES):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=(name == "run"), help="TOML experiment config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--trials", type=int, help="trials per input state")
        p.add_argument("--format", choices=FORMATS)
        p.add_argument("--workers", type=int, help="threads used for trial chunks")
        p.add_argument("--records", action="store_true", help="also write per-trial record files")
    return parser


def build_plan(args) -> ExperimentPlan:
    if args.config is not None:
        plan = load_plan(args.config)
        if args.command != "run" and plan.mode != args.command:
            plan = default_plan(
                args.command, seed=plan.seed, trials=plan.trials, noise=plan.noise,
                timing=plan.timing, out_dir=plan.out_dir, format=plan.format,
                workers=plan.workers, herald=plan.herald, background_factor=plan.background_factor,
                g2_trials=plan.g2_trials, trials_per_second=plan.trials_per_second,
                emission=plan.emission, records=plan.records,
            )
    else:
        plan = default_plan(args.command, seed=args.seed)
    return plan.with_overrides(
        seed=args.seed, out_dir=args.out, trials=args.trials, format=args.format,
        workers=args.workers, records=True if args.records else None,
    ).validate()


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        plan = build_plan(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = experiments.run(plan)
    except InsufficientDataError as exc:
        print(f"insufficient statistics: {exc}", file=sys.stderr)
        return EXIT_STATS
    paths = write_outputs(result, plan, plan.mode)
    for path in paths:
        print(path)
    unconverged = [
        s.label for s in getattr(result, "states", []) if not s.result.mle.converged
    ]
    if unconverged:
        print(f"maximum likelihood did not converge for: {', '.join(unconverged)}", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
