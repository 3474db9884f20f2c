"""Run every registered scenario and print a one-line verdict for each."""

import argparse
import sys
import time
from pathlib import Path

from lanoverhttp.config import default_config, load_config, with_overrides
from lanoverhttp.scenarios import SCENARIOS, run_scenario


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, help="directory for traces and JSON reports")
    p.add_argument("--details", action="store_true", help="print every check")
    args = p.parse_args()

    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)

    failed = 0
    for name in SCENARIOS:
        start = time.perf_counter()
        trace = args.out / f"{name}.trace" if args.out else None
        report = run_scenario(name, cfg, trace_path=trace)
        elapsed = time.perf_counter() - start
        if args.out:
            (args.out / f"{name}.json").write_text(report.to_json() + "\n")
        if args.details:
            print("\n".join(report.lines()))
        else:
            print(f"{name:20s} {report.verdict.upper():4s} {elapsed:6.3f}s "
                  f"events={report.metrics['events']}")
        failed += not report.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
