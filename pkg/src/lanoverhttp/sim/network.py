"""Simulator core: clock, trace, the switched LAN segment and the internet cloud.

Every hop (node to switch, switch to node, node to cloud, cloud to node)
takes ``latency`` ticks. Nodes are plain objects with a ``name`` and one or
both of ``on_lan_frame(data, tag)`` / ``on_internet_frame(data, tag)``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from ipaddress import IPv4Address

from .. import codec
from ..codec import ETHERTYPE_IPV4, EthernetFrame, MacAddress
from ..errors import CodecError
from .clock import SimClock
from .switch import VirtualSwitch
from .trace import FrameTag, Location, SimEvent, Trace

log = logging.getLogger(__name__)

INTERNET_MAC = MacAddress.parse("02:00:00:ff:ff:01")


class Simulator:
    def __init__(self, latency: int = 1):
        if latency < 1:
            raise ValueError("latency must be at least one tick")
        self.latency = latency
        self.clock = SimClock()
        self.trace = Trace()
        self._tags = itertools.count(1)

    @property
    def now(self) -> int:
        return self.clock.current_time

    def new_tag(self, inner: int | None = None) -> FrameTag:
        return FrameTag(next(self._tags), inner)

    def schedule(self, delay: int, fn, *args) -> None:
        self.clock.schedule(delay, fn, *args)

    def at(self, time: int, fn, *args) -> None:
        self.clock.at(time, fn, *args)

    def record(self, location: Location, frame: bytes, src_node: str, node: str,
               tag: FrameTag, reason: str | None = None) -> SimEvent:
        event = SimEvent(self.now, location, frame, src_node, node, tag.id, tag.inner, reason)
        self.trace.append(event)
        return event

    def run(self, until: int | None = None) -> None:
        self.clock.run(until)


class LanSegment:
    """A single switched broadcast domain."""

    def __init__(self, sim: Simulator, switch: VirtualSwitch | None = None):
        self.sim = sim
        self.switch = switch or VirtualSwitch()
        self.nodes: dict[int, object] = {}
        self._ports: dict[str, int] = {}

    def attach(self, node) -> int:
        port = self.switch.add_port()
        self.nodes[port] = node
        self._ports[node.name] = port
        node.lan = self
        return port

    def port_of(self, name: str) -> int:
        return self._ports[name]

    def send(self, node, data: bytes, tag: FrameTag) -> None:
        self.sim.schedule(self.sim.latency, self._switch, self._ports[node.name], data, tag,
                          node.name)

    def _switch(self, ingress: int, data: bytes, tag: FrameTag, sender: str) -> None:
        try:
            frame = codec.parse_ethernet(data)
        except CodecError:
            log.warning("switch discarded an unparseable frame from %s", sender)
            return
        for port in self.switch.switch_forward(frame, ingress):
            self.sim.schedule(self.sim.latency, self._deliver, port, data, tag, sender)

    def _deliver(self, port: int, data: bytes, tag: FrameTag, sender: str) -> None:
        node = self.nodes[port]
        self.sim.record(Location.LAN_SEGMENT, data, sender, node.name, tag)
        node.on_lan_frame(data, tag)


@dataclass
class _Route:
    node: object
    mac: MacAddress          # the attached node's interface MAC
    upstream_mac: MacAddress  # MAC the cloud presents toward that node


class Internet:
    """Routes IPv4 packets between attached public addresses, re-framing per hop."""

    def __init__(self, sim: Simulator):
        self.sim = sim
        self.routes: dict[IPv4Address, _Route] = {}

    def attach(self, ip: IPv4Address, node, mac: MacAddress,
               upstream_mac: MacAddress = INTERNET_MAC) -> None:
        self.routes[ip] = _Route(node, mac, upstream_mac)
        node.internet = self

    def send(self, node, data: bytes, tag: FrameTag) -> None:
        self.sim.schedule(self.sim.latency, self._route, data, tag, node.name)

    def _route(self, data: bytes, tag: FrameTag, sender: str) -> None:
        try:
            eth = codec.parse_ethernet(data)
            if eth.ethertype != ETHERTYPE_IPV4:
                raise CodecError("not IPv4")
            dst = codec.parse_ipv4(eth.payload).header.dst
        except CodecError:
            self.sim.record(Location.INTERNET, data, sender, "-", tag, reason="malformed")
            return
        route = self.routes.get(dst)
        if route is None:
            self.sim.record(Location.INTERNET, data, sender, "-", tag, reason="no_route")
            return
        self.sim.record(Location.INTERNET, data, sender, route.node.name, tag)
        reframed = codec.serialize_ethernet(
            EthernetFrame(route.mac, route.upstream_mac, ETHERTYPE_IPV4, eth.payload))
        self.sim.schedule(self.sim.latency, route.node.on_internet_frame, reframed, tag)


class InternetHost:
    """An unrelated internet machine: sends whatever it is told to and absorbs replies."""

    def __init__(self, sim: Simulator, name: str, ip: IPv4Address, mac: MacAddress):
        self.sim = sim
        self.name = name
        self.ip = ip
        self.mac = mac
        self.internet = None
        self.received: list[bytes] = []

    def send_ip(self, header: codec.Ipv4Header, payload: bytes) -> FrameTag:
        sealed = codec.seal_ipv4(header, payload)
        data = codec.serialize_ethernet(EthernetFrame(
            INTERNET_MAC, self.mac, ETHERTYPE_IPV4, codec.serialize_ipv4(sealed, payload)))
        tag = self.sim.new_tag()
        self.internet.send(self, data, tag)
        return tag

    def on_internet_frame(self, data: bytes, tag: FrameTag) -> None:
        self.received.append(data)
