"""Command line entry point: ``catebench {generate,run,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..metrics import aggregate
from .config import ConfigError, resolve_config
from .generate import generate_datasets
from .report import ReportSpec, format_table, report
from .runner import read_records, run_experiment


def _load(args):
    config = resolve_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.preset is not None:
        changes["preset"] = args.preset
    if changes:
        config = replace(config, **changes)
    path = Path(args.config)
    base_dir = path.parent if path.exists() else None
    return config, base_dir


def _out(args, config) -> Path:
    return Path(args.out if args.out is not None else config.output_dir)


def cmd_generate(args) -> int:
    config, base_dir = _load(args)
    path = generate_datasets(config, _out(args, config), base_dir)
    print(f"wrote {path}")
    return 0


def cmd_run(args) -> int:
    config, base_dir = _load(args)
    records = run_experiment(config, _out(args, config), workers=args.workers, base_dir=base_dir)
    print(f"wrote {records}")
    print(format_table(aggregate(read_records(records), "setting")))
    if not args.no_report:
        paths = report(records)
        print(f"report files in {paths['aggregate'].parent}")
    return 0


def cmd_report(args) -> int:
    records = Path(args.records)
    if records.is_dir():
        records = records / "records.csv"
    spec = ReportSpec(histogram_bins=args.bins)
    paths = report(records, spec, args.out)
    print(format_table(aggregate(read_records(records), "setting")))
    for kind, path in sorted(paths.items()):
        print(f"{kind:16s} {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catebench", description="CATE estimator benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_workers=False):
        p.add_argument("--config", required=True,
                       help="YAML config path or built-in name (ihdp, ihdp_additive, acic, acic_transformed)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--preset", choices=("desk", "paper"), default=None, help="learner size preset")
        if with_workers:
            p.add_argument("--workers", type=int, default=1, help="parallel worker processes")

    g = sub.add_parser("generate", help="write simulated datasets to files")
    common(g)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment")
    common(r, with_workers=True)
    r.add_argument("--no-report", action="store_true", help="skip writing report files")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="tables and plot data from a records file")
    rep.add_argument("records", help="records.csv or the run directory holding it")
    rep.add_argument("--out", default=None, help="report directory (default: <run>/report)")
    rep.add_argument("--bins", type=int, default=20, help="histogram bin count")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"catebench: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
