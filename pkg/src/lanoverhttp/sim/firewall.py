"""Stateful NAT firewall sitting between the LAN and the internet.

Outbound TCP connections to allowed ports are tracked from their SYN;
inbound packets pass only if they match a tracked connection's translated
5-tuple and carry a sequence number near the one expected. IP checksums are
verified, TCP checksums are not.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from ipaddress import IPv4Address, IPv4Network

from .. import codec
from ..codec import ETHERTYPE_IPV4, EthernetFrame, MacAddress
from ..errors import CodecError
from .trace import FrameTag, Location

log = logging.getLogger(__name__)

SEQ_MOD = 2**32
DEFAULT_SEQ_WINDOW = 65535
EPHEMERAL_START = 1024

# drop reasons
POLICY = "policy"
NO_STATE = "no_state"
NOT_ESTABLISHED = "not_established"
SEQ_MISMATCH = "seq_mismatch"
UNSOLICITED = "unsolicited"
BAD_CHECKSUM = "bad_checksum"
MALFORMED = "malformed"


def seq_plausible(seq: int, expected: int, window: int = DEFAULT_SEQ_WINDOW) -> bool:
    """True if ``seq`` lies within ``window`` of ``expected`` on the 32-bit circle."""
    ahead = (seq - expected) % SEQ_MOD
    return ahead <= window or SEQ_MOD - ahead <= window


def _seq_after(a: int, b: int) -> bool:
    return 0 < (a - b) % SEQ_MOD < SEQ_MOD // 2


@dataclass
class NatEntry:
    lan_ip: IPv4Address
    lan_port: int
    public_ip: IPv4Address
    public_port: int
    peer_ip: IPv4Address
    peer_port: int
    lan_mac: MacAddress
    state: str = "syn_seen"
    out_next: int = 0
    in_next: int | None = None


@dataclass(frozen=True)
class Verdict:
    frame: bytes | None
    reason: str | None = None
    entry: NatEntry | None = None

    @property
    def passed(self) -> bool:
        return self.reason is None


def _segment_len(tcp: codec.TcpHeader, payload: bytes) -> int:
    return len(payload) + (1 if tcp.has(codec.TCP_SYN) else 0) + (1 if tcp.has(codec.TCP_FIN) else 0)


class StatefulFirewall:
    def __init__(self, lan_mac: MacAddress, wan_mac: MacAddress, upstream_mac: MacAddress,
                 public_ip: IPv4Address, lan_network: IPv4Network, allowed_ports,
                 seq_window: int = DEFAULT_SEQ_WINDOW):
        self.lan_mac = lan_mac
        self.wan_mac = wan_mac
        self.upstream_mac = upstream_mac
        self.public_ip = public_ip
        self.lan_network = lan_network
        self.allowed_ports = frozenset(allowed_ports)
        self.seq_window = seq_window
        self._by_lan: dict[tuple, NatEntry] = {}
        self._by_public: dict[tuple, NatEntry] = {}

    @property
    def entries(self) -> list[NatEntry]:
        return list(self._by_lan.values())

    def _public_port_free(self, port: int) -> bool:
        return all(e.public_port != port for e in self._by_lan.values())

    def _allocate_port(self, lan_port: int) -> int:
        if self._public_port_free(lan_port):
            return lan_port
        port = lan_port + 1
        while True:
            if port > 65535:
                port = EPHEMERAL_START
            if self._public_port_free(port):
                return port
            port += 1

    def _forget(self, entry: NatEntry) -> None:
        self._by_lan.pop((entry.lan_ip, entry.lan_port, entry.peer_ip, entry.peer_port), None)
        self._by_public.pop((entry.public_port, entry.peer_ip, entry.peer_port), None)

    @staticmethod
    def _parse(data: bytes):
        eth = codec.parse_ethernet(data)
        if eth.ethertype != ETHERTYPE_IPV4:
            raise CodecError("not IPv4")
        return eth, codec.parse_ipv4(eth.payload)

    def _rewrite(self, ip: codec.Ipv4Datagram, src_mac, dst_mac, src_ip, dst_ip,
                 tcp: codec.TcpHeader, payload: bytes) -> bytes:
        # the TCP checksum is left as the sender stamped it
        segment = codec.serialize_tcp(tcp, payload)
        header = codec.seal_ipv4(replace(ip.header, src=src_ip, dst=dst_ip), segment)
        return codec.serialize_ethernet(EthernetFrame(
            dst_mac, src_mac, ETHERTYPE_IPV4, codec.serialize_ipv4(header, segment)))

    def firewall_outbound(self, data: bytes) -> Verdict:
        try:
            eth, ip = self._parse(data)
        except CodecError:
            return Verdict(None, MALFORMED)
        if not ip.checksum_ok:
            return Verdict(None, BAD_CHECKSUM)
        if ip.header.protocol != codec.PROTO_TCP:
            return Verdict(None, POLICY)
        try:
            tcp, payload = codec.parse_tcp(ip.payload)
        except CodecError:
            return Verdict(None, MALFORMED)
        key = (ip.header.src, tcp.src_port, ip.header.dst, tcp.dst_port)
        entry = self._by_lan.get(key)
        is_syn = tcp.has(codec.TCP_SYN) and not tcp.has(codec.TCP_ACK)
        if is_syn:
            if tcp.dst_port not in self.allowed_ports:
                return Verdict(None, POLICY)
            if entry is not None and not (entry.state == "syn_seen" and entry.out_next == (tcp.seq + 1) % SEQ_MOD):
                self._forget(entry)   # fresh handshake replaces the old session
                entry = None
            if entry is None:
                entry = NatEntry(ip.header.src, tcp.src_port, self.public_ip,
                                 self._allocate_port(tcp.src_port), ip.header.dst,
                                 tcp.dst_port, eth.src_mac)
                self._by_lan[key] = entry
                self._by_public[(entry.public_port, entry.peer_ip, entry.peer_port)] = entry
            entry.out_next = (tcp.seq + 1) % SEQ_MOD
        else:
            if entry is None:
                return Verdict(None, NO_STATE)
            if entry.state != "established":
                return Verdict(None, NOT_ESTABLISHED, entry)
            if not seq_plausible(tcp.seq, entry.out_next, self.seq_window):
                return Verdict(None, SEQ_MISMATCH, entry)
            end = (tcp.seq + _segment_len(tcp, payload)) % SEQ_MOD
            if _seq_after(end, entry.out_next):
                entry.out_next = end
        out_tcp = replace(tcp, src_port=entry.public_port)
        frame = self._rewrite(ip, self.wan_mac, self.upstream_mac, entry.public_ip,
                              ip.header.dst, out_tcp, payload)
        return Verdict(frame, None, entry)

    def firewall_inbound(self, data: bytes) -> Verdict:
        try:
            _, ip = self._parse(data)
        except CodecError:
            return Verdict(None, MALFORMED)
        if not ip.checksum_ok:
            return Verdict(None, BAD_CHECKSUM)
        if ip.header.dst != self.public_ip or ip.header.protocol != codec.PROTO_TCP:
            return Verdict(None, UNSOLICITED)
        try:
            tcp, payload = codec.parse_tcp(ip.payload)
        except CodecError:
            return Verdict(None, MALFORMED)
        entry = self._by_public.get((tcp.dst_port, ip.header.src, tcp.src_port))
        if entry is None:
            return Verdict(None, UNSOLICITED)
        if entry.state == "syn_seen":
            synack = tcp.has(codec.TCP_SYN) and tcp.has(codec.TCP_ACK)
            if not (synack and tcp.ack == entry.out_next):
                return Verdict(None, UNSOLICITED, entry)
            entry.state = "established"
            entry.in_next = (tcp.seq + 1) % SEQ_MOD
        else:
            if not seq_plausible(tcp.seq, entry.in_next, self.seq_window):
                return Verdict(None, SEQ_MISMATCH, entry)
            end = (tcp.seq + _segment_len(tcp, payload)) % SEQ_MOD
            if _seq_after(end, entry.in_next):
                entry.in_next = end
        in_tcp = replace(tcp, dst_port=entry.lan_port)
        frame = self._rewrite(ip, self.lan_mac, entry.lan_mac, ip.header.src, entry.lan_ip,
                              in_tcp, payload)
        return Verdict(frame, None, entry)


class GatewayNode:
    """Attaches a firewall to the LAN segment and the internet."""

    name = "gateway"

    def __init__(self, sim, firewall: StatefulFirewall):
        self.sim = sim
        self.firewall = firewall
        self.lan = None
        self.internet = None

    def on_lan_frame(self, data: bytes, tag: FrameTag) -> None:
        try:
            eth = codec.parse_ethernet(data)
        except CodecError:
            return
        if eth.dst_mac != self.firewall.lan_mac or eth.ethertype != ETHERTYPE_IPV4:
            return
        verdict = self.firewall.firewall_outbound(data)
        self.sim.record(Location.FIREWALL_OUT, verdict.frame or data, self.name, "internet",
                        tag, reason=verdict.reason)
        if verdict.passed:
            self.internet.send(self, verdict.frame, tag)

    def on_internet_frame(self, data: bytes, tag: FrameTag) -> None:
        verdict = self.firewall.firewall_inbound(data)
        self.sim.record(Location.FIREWALL_IN, data, "internet", self.name, tag,
                        reason=verdict.reason)
        if verdict.passed:
            self.lan.send(self, verdict.frame, tag)
