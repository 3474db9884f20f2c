"""Append-only event trace and its line format.

Each event renders as::

    <tick> <location> <verdict> <src_mac>-><dst_mac> <summary> | from=.. to=.. tag=.. inner=.. data=<hex>

The part after `` | `` carries what an auditor needs to re-derive a verdict
from a saved trace, so ``load`` is the exact inverse of ``write``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple

from .. import codec
from ..errors import CodecError
from ..frames import describe


class Location(str, enum.Enum):
    LAN_SEGMENT = "lan_segment"
    FIREWALL_OUT = "firewall_out"
    FIREWALL_IN = "firewall_in"
    INTERNET = "internet"
    SERVER_IF = "server_if"


class FrameTag(NamedTuple):
    """Simulator-side identity of a frame; ``inner`` names the frame an envelope carries."""

    id: int
    inner: int | None = None


@dataclass(frozen=True)
class SimEvent:
    time: int
    location: Location
    frame: bytes
    src_node: str
    node: str
    tag: int
    inner_tag: int | None = None
    reason: str | None = None   # None means delivered

    @property
    def delivered(self) -> bool:
        return self.reason is None

    @property
    def verdict(self) -> str:
        return "delivered" if self.reason is None else f"dropped({self.reason})"

    def macs(self) -> tuple[str, str]:
        try:
            eth = codec.parse_ethernet(self.frame)
        except CodecError:
            return "?", "?"
        return str(eth.src_mac), str(eth.dst_mac)

    def line(self) -> str:
        src, dst = self.macs()
        inner = "-" if self.inner_tag is None else str(self.inner_tag)
        return (f"{self.time} {self.location.value} {self.verdict} {src}->{dst} "
                f"{describe(self.frame)} | from={self.src_node} to={self.node} "
                f"tag={self.tag} inner={inner} data={self.frame.hex()}")

    @classmethod
    def from_line(cls, line: str) -> SimEvent:
        head, _, tail = line.rstrip("\n").rpartition(" | ")
        time, location, verdict = head.split(" ", 3)[:3]
        fields = dict(kv.split("=", 1) for kv in tail.split(" "))
        reason = None
        if verdict != "delivered":
            if not (verdict.startswith("dropped(") and verdict.endswith(")")):
                raise ValueError(f"bad verdict {verdict!r}")
            reason = verdict[len("dropped("):-1]
        inner = None if fields["inner"] == "-" else int(fields["inner"])
        return cls(int(time), Location(location), bytes.fromhex(fields["data"]),
                   fields["from"], fields["to"], int(fields["tag"]), inner, reason)


class Trace:
    def __init__(self, events: list[SimEvent] | None = None):
        self._events: list[SimEvent] = list(events or [])

    def append(self, event: SimEvent) -> None:
        if self._events and event.time < self._events[-1].time:
            raise ValueError("trace events must be appended in time order")
        self._events.append(event)

    def __iter__(self) -> Iterator[SimEvent]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def __getitem__(self, i):
        return self._events[i]

    def at(self, location: Location, delivered_only: bool = True) -> list[SimEvent]:
        return [e for e in self._events
                if e.location == location and (e.delivered or not delivered_only)]

    def text(self) -> str:
        return "".join(e.line() + "\n" for e in self._events)

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.write_text(self.text())
        except OSError as exc:
            raise OSError(f"cannot write trace to {path}: {exc}") from exc
        return path

    @classmethod
    def load(cls, path) -> Trace:
        lines = Path(path).read_text().splitlines()
        return cls([SimEvent.from_line(ln) for ln in lines if ln.strip()])
