"""Command line: run scenarios, re-audit traces, validate configs.

Exit codes: 0 pass, 1 fail, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import default_config, load_config, validate_config
from .errors import ConfigError
from .scenarios import SCENARIOS, audit_trace, run_scenario
from .sim.trace import Location, Trace

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _capture_spec(text: str) -> tuple[str, str]:
    tap, sep, path = text.partition(":")
    if not sep or not path:
        raise argparse.ArgumentTypeError(f"expected <tap>:<path>, got {text!r}")
    try:
        Location(tap)
    except ValueError:
        taps = ", ".join(loc.value for loc in Location)
        raise argparse.ArgumentTypeError(f"unknown tap {tap!r}; taps are {taps}") from None
    return tap, path


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lanoverhttp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run a scenario and print its verdict")
    run.add_argument("scenario")
    run.add_argument("--config", type=Path, help="key = value config file (default built in)")
    run.add_argument("--seed", type=int)
    run.add_argument("--trace", type=Path, help="write the event trace here")
    run.add_argument("--pcap", type=_capture_spec, action="append", default=[],
                     metavar="TAP:PATH", help="write a capture of one tap point (repeatable)")
    run.add_argument("--report", type=Path, help="write the report as JSON")

    aud = sub.add_parser("audit", help="re-judge a saved trace")
    aud.add_argument("scenario")
    aud.add_argument("--trace", type=Path, required=True)
    aud.add_argument("--config", type=Path)
    aud.add_argument("--seed", type=int)

    val = sub.add_parser("validate", help="check a config file")
    val.add_argument("--config", type=Path, required=True)

    sub.add_parser("scenarios", help="list registered scenarios")
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _check_scenario(name: str) -> None:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; run 'scenarios' for the list")


def _print_report(report) -> int:
    print("\n".join(report.lines()))
    return EXIT_PASS if report.passed else EXIT_FAIL


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "scenarios":
            for name, s in SCENARIOS.items():
                print(f"{name:20s} {s.description}")
            return EXIT_PASS
        if args.command == "validate":
            violations = validate_config(load_config(args.config))
            for v in violations:
                print(v)
            if not violations:
                print("config ok")
            return EXIT_USAGE if violations else EXIT_PASS
        _check_scenario(args.scenario)
        cfg = _config(args)
        if args.command == "audit":
            return _print_report(audit_trace(args.scenario, Trace.load(args.trace), cfg))
        report = run_scenario(args.scenario, cfg, args.trace, dict(args.pcap))
        if args.report:
            args.report.write_text(report.to_json() + "\n")
        return _print_report(report)
    except ConfigError as exc:
        print("invalid config:", file=sys.stderr)
        for v in exc.violations:
            print(f"  {v}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
