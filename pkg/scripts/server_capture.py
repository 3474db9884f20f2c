"""Export the server-side capture of a ping run and print its row pattern.

The capture opens in any pcap reader; the printed rows show each inner ARP or
ICMP event next to the port-80 envelope that carried it.
"""

import argparse
from pathlib import Path

from lanoverhttp import audit
from lanoverhttp.config import default_config, with_overrides
from lanoverhttp.scenarios import execute, export_capture
from lanoverhttp.sim.trace import Location


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("server_if.pcap"))
    p.add_argument("--seed", type=int)
    p.add_argument("--scenario", default="ping")
    args = p.parse_args()

    cfg = default_config()
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    trace = execute(args.scenario, cfg).trace
    export_capture(trace, Location.SERVER_IF, args.out)
    for kind, event, _ in audit.server_if_pattern(trace, cfg):
        print(f"{kind:5s} {event.line().split(' | ')[0]}")
    print(audit.envelope_adjacency(trace, cfg))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
