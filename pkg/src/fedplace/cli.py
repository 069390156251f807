"""Command line entry point: ``fedplace <verb> [options]``.

Exit status is 0 on success, 1 on configuration or usage errors and
1 + (number of failed criteria) for ``accept``.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Sequence

from .dag import ConfigError
from .harness import (
    PHASES,
    SUMMARY_HEADER,
    ScenarioConfig,
    calibrate_knee,
    load_config,
    parse_seeds,
    run_cell,
    run_phase,
)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as a failed criterion
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _base_config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if getattr(args, "seeds", None):
        cfg = cfg.with_(seeds=parse_seeds(args.seeds))
    return cfg


def _add_common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", help="scenario file (INI)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seeds", help="seed list, e.g. 0,1,2 or 0-4")
    p.add_argument("--parallel", type=int, default=1, help="worker processes")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="fedplace", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("run-cell", help="run one (strategy, pipeline, lambda) cell over its seeds")
    _add_common(p)

    p = sub.add_parser("run-phase", help="run a campaign phase")
    p.add_argument("phase", choices=PHASES)
    p.add_argument("--knee", type=float, help="skip calibration and use this knee (pps)")
    _add_common(p)

    p = sub.add_parser("knee", help="calibrate the saturation knee")
    _add_common(p)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--filter", help="comma-separated criterion names")
    p.add_argument("--parallel", type=int, default=1)

    p = sub.add_parser("report", help="print summaries found under a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--filter", help="only files whose name contains this text")
    return ap


def _report(out: Path, flt: str | None) -> str:
    lines = []
    for path in sorted(out.rglob("*summary*.csv")):
        if flt and flt not in path.name:
            continue
        with open(path, newline="") as fh:
            if fh.readline().rstrip("\n") != SUMMARY_HEADER:
                raise ConfigError(f"{path}: not a summary file")
            for row in csv.DictReader(fh):
                mean = row["mean_latency_ms"] or "-"
                lines.append(f"{path.name}: {row['strategy']} {row['pipeline_kind']} lambda={row['lambda']} "
                             f"seed={row['seed']} CR={row['completion_rate']} mean={mean} p95={row['p95_ms'] or '-'}")
    return "\n".join(lines) if lines else f"no summaries under {out}"


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run-cell":
            cfg = _base_config(args)
            paths, summaries, _ = run_cell(cfg, args.out, args.force, args.parallel)
            for s in summaries:
                print(f"seed={s.seed} CR={s.completion_rate:.3f} mean={s.mean_latency_ms}")
            print(f"wrote {len(paths)} files")
            return 0
        if args.verb == "run-phase":
            cfg = _base_config(args)
            out = Path(args.out) / args.phase if args.out else None
            print(run_phase(args.phase, cfg, out, args.force, args.parallel, args.knee))
            return 0
        if args.verb == "knee":
            cfg = _base_config(args)
            fit, points = calibrate_knee(cfg, args.parallel, Path(args.out) if args.out else None, args.force)
            for lam, cr in points:
                print(f"lambda={lam:g} CR={cr:.3f}")
            if fit.degenerate:
                print("no knee found (flat curve)")
            else:
                print(f"knee={fit.breakpoint:.1f} pps CI=[{fit.ci[0]:.1f}, {fit.ci[1]:.1f}]")
            return 0
        if args.verb == "accept":
            from .acceptance import run_acceptance

            results = run_acceptance(args.filter, parallel=args.parallel)
            failed = sum(1 for r in results if not r.passed)
            return 0 if failed == 0 else min(1 + failed, 125)
        if args.verb == "report":
            print(_report(Path(args.out), args.filter))
            return 0
    except (ConfigError, FileExistsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
