"""Minimal host protocol stacks: ARP, ICMP echo and browser announcements."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network
from typing import Callable

from .. import codec, frames
from ..codec import (
    BROADCAST_MAC,
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    ArpOp,
    ArpPacket,
    BrowserAnnouncement,
    IcmpEcho,
    MacAddress,
)
from ..errors import CodecError
from .trace import FrameTag

log = logging.getLogger(__name__)


@dataclass
class HostStack:
    mac: MacAddress
    ip: IPv4Address
    network: IPv4Network
    host_name: str = ""
    shares: tuple[str, ...] = ()
    announce_period: int = 0
    arp_cache: dict[IPv4Address, MacAddress] = field(default_factory=dict)
    # host name -> (shares, tick last heard)
    browse_list: dict[str, tuple[tuple[str, ...], int]] = field(default_factory=dict)
    # (tick, source ip, echo) for every echo reply addressed to us
    echo_replies: list[tuple[int, IPv4Address, IcmpEcho]] = field(default_factory=list)
    ident: int = 0

    def next_ident(self) -> int:
        self.ident = (self.ident + 1) & 0xFFFF
        return self.ident

    def announcement(self) -> bytes:
        ann = BrowserAnnouncement(self.host_name, self.shares)
        return frames.announcement_frame(self.mac, self.ip, self.network.broadcast_address,
                                         ann, self.next_ident())

    def arp_request(self, target: IPv4Address) -> bytes:
        return frames.arp_frame(ArpPacket.request(self.mac, self.ip, target))

    def echo_request(self, target: IPv4Address, dst_mac: MacAddress, ident: int, seqno: int,
                     payload: bytes) -> bytes:
        echo = IcmpEcho(codec.ICMP_ECHO_REQUEST, ident, seqno, payload)
        return frames.icmp_frame(self.mac, dst_mac, self.ip, target, echo, self.next_ident())


def _is_broadcast_ip(ip: IPv4Address, net: IPv4Network) -> bool:
    return ip == net.broadcast_address or ip == IPv4Address("255.255.255.255")


def host_handle_frame(stack: HostStack, data: bytes, now: int = 0) -> list[bytes]:
    """Process one frame delivered to the host; return the frames it sends in response."""
    try:
        eth = codec.parse_ethernet(data)
    except CodecError:
        return []
    if eth.dst_mac != stack.mac and not eth.dst_mac.is_broadcast:
        return []
    try:
        if eth.ethertype == ETHERTYPE_ARP:
            arp = codec.parse_arp(eth.payload)
            if arp.target_ip != stack.ip:
                return []
            stack.arp_cache[arp.sender_ip] = arp.sender_mac
            if arp.op == ArpOp.REQUEST:
                return [frames.arp_frame(arp.reply_from(stack.mac))]
            return []
        if eth.ethertype != ETHERTYPE_IPV4:
            return []
        ip = codec.parse_ipv4(eth.payload)
        if not ip.checksum_ok:
            return []
        h = ip.header
        if h.protocol == codec.PROTO_ICMP and h.dst == stack.ip:
            echo = codec.parse_icmp(ip.payload)
            if echo.kind == codec.ICMP_ECHO_REQUEST:
                dst_mac = stack.arp_cache.get(h.src, eth.src_mac)
                return [frames.icmp_frame(stack.mac, dst_mac, stack.ip, h.src, echo.reply(),
                                          stack.next_ident())]
            stack.echo_replies.append((now, h.src, echo))
            return []
        if h.protocol == codec.PROTO_UDP and _is_broadcast_ip(h.dst, stack.network):
            udp, body = codec.parse_udp(ip.payload)
            if udp.dst_port == codec.BROWSER_PORT:
                ann = codec.parse_browser(body)
                if ann.host_name != stack.host_name:
                    stack.browse_list[ann.host_name] = (ann.shares, now)
    except CodecError as exc:
        log.debug("%s ignored a malformed frame: %s", stack.host_name or stack.ip, exc)
    return []


def ping_payload(size: int) -> bytes:
    # the familiar a..w filler
    return bytes(0x61 + i % 23 for i in range(size))


@dataclass
class EchoRecord:
    seqno: int
    sent_at: int
    replied_at: int | None = None
    payload_ok: bool | None = None


class Pinger:
    """Resolve the target with ARP, then send ``count`` echo requests ``interval`` ticks apart.

    Transport-agnostic: frames go out through ``send`` and timers through
    ``schedule(delay, fn)``. The owner calls ``notify(now)`` after each
    frame the stack processes.
    """

    def __init__(self, stack: HostStack, target: IPv4Address,
                 send: Callable[[bytes], None], schedule: Callable,
                 count: int = 4, payload_size: int = 32, interval: int = 100,
                 timeout: int = 100, arp_timeout: int = 100, ident: int = 1):
        if target not in stack.network:
            raise ValueError(f"{target} is not on {stack.network}; off-link ping is not modelled")
        self.stack = stack
        self.target = target
        self.send = send
        self.schedule = schedule
        self.count = count
        self.payload = ping_payload(payload_size)
        self.interval = interval
        self.timeout = timeout
        self.arp_timeout = arp_timeout
        self.ident = ident
        self.status = "idle"
        self.failure: str | None = None
        self.records: list[EchoRecord] = []
        self._seen_replies = 0

    @property
    def answered(self) -> int:
        return sum(1 for r in self.records
                   if r.replied_at is not None and r.replied_at - r.sent_at <= self.timeout
                   and r.payload_ok)

    def start(self, now: int) -> None:
        if self.target in self.stack.arp_cache:
            self._begin(now)
            return
        self.status = "resolving"
        self.send(self.stack.arp_request(self.target))
        self.schedule(self.arp_timeout, self._arp_expired)

    def _arp_expired(self, now: int) -> None:
        if self.status == "resolving":
            self.status = "failed"
            self.failure = "arp_timeout"

    def _begin(self, now: int) -> None:
        self.status = "pinging"
        for i in range(self.count):
            self.schedule(i * self.interval, self._send_echo, i + 1)
        self.schedule((self.count - 1) * self.interval + self.timeout, self._finish)

    def _send_echo(self, now: int, seqno: int) -> None:
        dst_mac = self.stack.arp_cache[self.target]
        self.records.append(EchoRecord(seqno, now))
        self.send(self.stack.echo_request(self.target, dst_mac, self.ident, seqno, self.payload))

    def _finish(self, now: int) -> None:
        self.status = "done"

    def notify(self, now: int) -> None:
        if self.status == "resolving" and self.target in self.stack.arp_cache:
            self._begin(now)
        replies = self.stack.echo_replies
        while self._seen_replies < len(replies):
            when, src, echo = replies[self._seen_replies]
            self._seen_replies += 1
            if src != self.target or echo.ident != self.ident:
                continue
            for rec in self.records:
                if rec.seqno == echo.seqno and rec.replied_at is None:
                    rec.replied_at = when
                    rec.payload_ok = echo.payload == self.payload
                    break


def node_name(text: str) -> str:
    return "_".join(text.split()) or "host"


class HostNode:
    """A LAN computer wrapping a ``HostStack``."""

    def __init__(self, sim, stack: HostStack, name: str | None = None):
        self.sim = sim
        self.stack = stack
        self.name = node_name(name or stack.host_name or str(stack.ip))
        self.lan = None
        self.pingers: list[Pinger] = []

    def transmit(self, data: bytes) -> FrameTag:
        tag = self.sim.new_tag()
        self.lan.send(self, data, tag)
        return tag

    def on_lan_frame(self, data: bytes, tag: FrameTag) -> None:
        for out in host_handle_frame(self.stack, data, self.sim.now):
            self.transmit(out)
        for p in self.pingers:
            p.notify(self.sim.now)

    def start_announcing(self, first_at: int, until: int | None = None) -> None:
        period = self.stack.announce_period
        if period <= 0:
            raise ValueError("announce_period must be positive to announce")

        def announce():
            if until is not None and self.sim.now >= until:
                return
            self.transmit(self.stack.announcement())
            self.sim.schedule(period, announce)

        self.sim.at(first_at, announce)

    def ping(self, target: IPv4Address, at: int = 0, **kwargs) -> Pinger:
        """Schedule a ping run starting at tick ``at``."""
        pinger = Pinger(self.stack, target, self.transmit,
                        lambda delay, fn, *a: self.sim.schedule(delay, lambda: fn(self.sim.now, *a)),
                        **kwargs)
        self.pingers.append(pinger)
        self.sim.at(at, lambda: pinger.start(self.sim.now))
        return pinger
