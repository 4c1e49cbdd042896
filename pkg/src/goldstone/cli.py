"""Command-line entry points.

Subcommands: scan (all enabled groups), bounds / dispersion / qmode /
locality (single group), verify-cache, report.  Exit status 0 means every
enabled inequality check passed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import CHECK_GROUPS, ConfigError, parse_config
from .runner import CACHE_ENV_VAR, run_scan, verify_cache


def _add_run_flags(sub):
    sub.add_argument("--config", required=True, help="scan config (INI)")
    sub.add_argument("--out", default=None, help="output directory")
    sub.add_argument("--dense-cap", type=int, default=None,
                     help="override the dense-oracle dimension cap")
    sub.add_argument("--jobs", type=int, default=None,
                     help="worker threads for independent scan points")
    sub.add_argument("--fail-fast", action="store_true",
                     help="stop at the first failing check")
    sub.add_argument("--corrupt-check", default=None, metavar="NAME",
                     help=argparse.SUPPRESS)  # test hook: inflate one lhs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="goldstone",
        description="Finite-volume dispersion-bound scans for Heisenberg "
                    "antiferromagnets")
    subs = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("scan", "run every check group enabled in the config"),
            ("bounds", "inequality suite only"),
            ("dispersion", "wavepacket excitation energies only"),
            ("qmode", "staggered-mode pipeline only"),
            ("locality", "quasi-locality suite only")):
        sub = subs.add_parser(name, help=help_text)
        _add_run_flags(sub)

    sub = subs.add_parser("verify-cache",
                          help="recompute residuals for cached ground states")
    sub.add_argument("--cache", required=True, help="cache directory "
                     f"(the {CACHE_ENV_VAR} variable overrides configs, "
                     "not this flag)")

    sub = subs.add_parser("report", help="re-render a manifest summary")
    sub.add_argument("--out", required=True, help="scan output directory")
    return parser


def _run_group(args, group: str | None) -> int:
    try:
        config = parse_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if group is not None:
        if group not in CHECK_GROUPS:
            print(f"error: unknown group {group}", file=sys.stderr)
            return 2
        config = replace(config, checks=(group,))
    if args.dense_cap is not None:
        config = replace(config, dense_cap=args.dense_cap)
    result = run_scan(config, out_dir=args.out, jobs=args.jobs,
                      fail_fast=args.fail_fast, corrupt=args.corrupt_check)
    summary = result.manifest["summary"]
    print(f"bound entries: {summary['bound_entries']} "
          f"(failures: {summary['bound_failures']})")
    print(f"checks: {summary['check_entries']} "
          f"(failures: {summary['check_failures']})")
    print(f"artifacts: {result.out_dir}")
    print("PASS" if result.exit_code == 0 else "FAIL")
    return result.exit_code


def _report(args) -> int:
    path = Path(args.out) / "manifest.json"
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = manifest["summary"]
    print(f"config {manifest['config_hash']} generated {manifest['generated_at']}")
    for key in ("bound_entries", "bound_failures", "check_entries",
                "check_failures", "dispersion_records"):
        print(f"  {key}: {summary[key]}")
    for item in summary.get("skipped", []):
        print(f"  skipped: {item}")
    for c in manifest["checks"]:
        if not c["passed"]:
            print(f"  FAILED {c['group']}/{c['name']} lattice={c['lattice']} "
                  f"B={c['B']} value={c['value']}")
    print("PASS" if summary["all_passed"] else "FAIL")
    return 0 if summary["all_passed"] else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify-cache":
        reports = verify_cache(args.cache)
        for entry in reports:
            print(f"{entry['status']:10s} {entry['file']} {entry['detail']}")
        bad = [e for e in reports if e["status"] != "valid"]
        print(f"{len(reports) - len(bad)} valid, {len(bad)} evicted/unreadable")
        return 0
    if args.command == "report":
        return _report(args)
    group = None if args.command == "scan" else args.command
    return _run_group(args, group)


if __name__ == "__main__":
    sys.exit(main())
