"""Command line entry point.

Exit codes: 0 ok, 2 configuration error, 3 invariant breach,
4 calibration infeasible.
"""
from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

from .calibrate import calibrate, load_targets
from .errors import (
    BaselineRejected,
    CalibrationError,
    ConfigurationError,
    DataQualityError,
    InvariantViolation,
)
from .report import emit_bundle, rerender
from .valframe.scenario import bundled_scenarios, load_scenario, save_scenario
from .valframe.testbed import TESTS

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_CALIBRATION = 0, 2, 3, 4
TEST_ORDER = tuple(TESTS)


def test_seed(base: int, test_id: str) -> int:
    """Per-test noise seed; depends only on the base seed and the test id."""
    return zlib.crc32(f"{base}:{test_id}".encode())


def parse_tests(spec: str) -> list[str]:
    if spec == "all":
        return list(TEST_ORDER)
    names = [t.strip() for t in spec.split(",") if t.strip()]
    unknown = [t for t in names if t not in TESTS]
    if unknown or not names:
        raise ConfigurationError(f"unknown tests {unknown}; choose from {', '.join(TEST_ORDER)} or all")
    return [t for t in TEST_ORDER if t in names]


def cmd_run(args) -> int:
    config = load_scenario(args.scenario)
    tests = parse_tests(args.tests)
    base = config.noise.seed if args.seed is None else args.seed
    reports = []
    status = EXIT_OK
    for tid in tests:
        report = TESTS[tid](config.with_seed(test_seed(base, tid)))
        reports.append(report)
        verdicts = [
            v.passed
            for s in report.steps
            for e in (s.estimators[report.primary_estimator],)
            for v in (e.verdict_pkg, e.verdict_dram)
            if v is not None
        ]
        broken = [k for k, ok in report.invariants.items() if not ok]
        inv = "invariants ok" if not broken else "invariants BROKEN: " + ", ".join(broken)
        print(
            f"{tid}: {len(report.steps)} steps, {report.primary_estimator} "
            f"{sum(verdicts)}/{len(verdicts)} verdicts within ±{report.margin:.0%}, {inv}"
        )
        if broken:
            status = EXIT_INVARIANT
    out = Path(args.out)
    bundle = emit_bundle(reports, out, config.scenario_hash(), base)
    print(f"wrote {len(bundle.files) + 1} files to {out}")
    return status


def cmd_calibrate(args) -> int:
    targets = load_targets(args.targets)
    base = load_scenario(args.base) if args.base else None
    try:
        cfg = calibrate(targets, base)
    except CalibrationError as exc:
        print(f"calibration infeasible: {exc}", file=sys.stderr)
        for v in exc.violations:
            print(f"  violated: {v}", file=sys.stderr)
        return EXIT_CALIBRATION
    save_scenario(cfg, args.out)
    for name, row in cfg.calibration["bands"].items():
        print(f"{name}: {json.dumps(row['value'])} in {row['band']} -> {'ok' if row['satisfied'] else 'MISSED'}")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    bundle = rerender(args.dir)
    print(f"re-rendered {len(bundle.files)} files in {args.dir}")
    return EXIT_OK


def cmd_list(args) -> int:
    for name in bundled_scenarios():
        print(name)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="powerbench", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run validation tests against a scenario")
    r.add_argument("scenario", help="scenario JSON file or bundled scenario name")
    r.add_argument("--tests", default="all", help="comma list of t1,t2-pkg,t2-dram,t3,inactive or 'all'")
    r.add_argument("--seed", type=int, default=None, help="base seed (default: the scenario's)")
    r.add_argument("--out", default="powerbench-out", help="output directory")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="fit model constants to target bands")
    c.add_argument("targets", help="targets JSON file or bundled name")
    c.add_argument("--out", required=True, help="scenario file to write")
    c.add_argument("--base", default=None, help="scenario providing the uncalibrated settings")
    c.set_defaults(func=cmd_calibrate)

    rep = sub.add_parser("report", help="re-render CSV/SVG from a run directory's JSON")
    rep.add_argument("dir")
    rep.set_defaults(func=cmd_report)

    ls = sub.add_parser("list-scenarios", help="list bundled scenarios")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, BaselineRejected, DataQualityError) as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except CalibrationError as exc:
        print(f"calibration error: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION


if __name__ == "__main__":
    sys.exit(main())
