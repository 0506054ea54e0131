"""Command line: ``mmwproxy run <config>`` and ``mmwproxy compare <dir...>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import ConfigError, load_config
from .runner import (COMPARE_FIELDS, POLICY_FIELDS, RunError, compare, format_table,
                     load_summary, run_matrix, write_comparison)

log = logging.getLogger("mmwproxy")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mmwproxy",
                                 description="60 GHz cross-layer proxy simulator")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a (policy x seed) matrix from a scenario config")
    run.add_argument("config", help="scenario YAML file")
    run.add_argument("--out", help="output directory for per-run CSVs and summaries")
    run.add_argument("--policy", action="append",
                     help="restrict to this policy (repeatable)")
    run.add_argument("--seed", type=int, action="append", help="restrict to this seed (repeatable)")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key, e.g. topology.queue_capacity_packets=2000")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--log-events", action="store_true",
                     help="also write events.log with every dispatched event")

    cmp_ = sub.add_parser("compare", help="compare policies across run directories")
    cmp_.add_argument("dirs", nargs="+", help="run directories (or summary.csv files)")
    cmp_.add_argument("--reference", default="baseline", help="reference policy")
    cmp_.add_argument("--out", help="also write the table as CSV")
    return ap


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if args.jobs < 1:
        raise ConfigError("--jobs must be at least 1")
    log.info("running %s: policies=%s seeds=%s", cfg.name, args.policy or cfg.policies,
             args.seed or cfg.seeds)
    summary = run_matrix(cfg, out_dir=args.out, policies=args.policy, seeds=args.seed,
                         log_events=args.log_events, jobs=args.jobs)
    print(format_table(summary.by_policy(), POLICY_FIELDS))
    if not all(r["conservation"] for r in summary.rows):
        print("warning: packet conservation violated in some cell", file=sys.stderr)
        return 3
    return 0


def cmd_compare(args) -> int:
    rows = compare([load_summary(d) for d in args.dirs], reference=args.reference)
    print(format_table(rows, COMPARE_FIELDS))
    if args.out:
        write_comparison(Path(args.out), rows)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args)
        return cmd_compare(args)
    except (ConfigError, RunError, ValueError, OSError) as exc:
        print(f"mmwproxy: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
