"""Run scenarios over a range of seeds and count failures per scenario."""

import argparse
import sys
from collections import Counter

from lanoverhttp.config import default_config, with_overrides
from lanoverhttp.scenarios import SCENARIOS, run_scenario


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=50)
    p.add_argument("--first", type=int, default=0)
    p.add_argument("scenarios", nargs="*", default=list(SCENARIOS))
    args = p.parse_args()

    failures: Counter = Counter()
    for seed in range(args.first, args.first + args.seeds):
        cfg = with_overrides(default_config(), seed=seed)
        for name in args.scenarios:
            report = run_scenario(name, cfg)
            if not report.passed:
                failures[name] += 1
                bad = [c.name for c in report.checks if not c.ok]
                print(f"seed {seed} {name}: {', '.join(bad)}")
    for name in args.scenarios:
        print(f"{name:20s} {args.seeds - failures[name]}/{args.seeds} passed")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
