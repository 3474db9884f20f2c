"""The insider client and the attacker server.

``ClientAgent`` and ``ServerAgent`` are event-driven state machines that
take frames and return frames. ``ClientNode`` and ``ServerNode`` attach them
to the simulator and record what crosses the server's interface.

Connection setup is a two-phase affair. A stand-in for the operating
system's own TCP stack performs the three-way handshake on a dynamically
chosen port, and a sniffer reads the port and both initial sequence numbers
off the handshake frames. Data then flows on crafted segments whose
numbering continues from those captured values, which is what keeps the
stateful firewall satisfied.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field
from ipaddress import IPv4Address, IPv4Network

from . import codec
from .codec import ETHERTYPE_IPV4, EthernetFrame, Ipv4Header, MacAddress, TcpHeader
from .errors import CodecError, TunnelError
from .sim.host import HostStack, Pinger, host_handle_frame
from .sim.trace import FrameTag, Location
from .tunnel import (
    IP_FLAGS_DONT_FRAGMENT,
    IP_TTL,
    MAX_FRAGMENT,
    SEQ_MOD,
    TCP_CHECKSUM_CONSTANT,
    TUNNEL_PORT,
    ForwardingConfig,
    FragmentBuffer,
    HeaderProfile,
    TunnelConnection,
    decapsulate,
    encapsulate,
    should_forward_lan_to_tunnel,
    should_forward_server_to_tunnel,
)

log = logging.getLogger(__name__)

NATIVE_WINDOW = 64240
DYNAMIC_PORTS = (49152, 65535)


@dataclass(frozen=True)
class HandshakeCapture:
    client_dynamic_port: int
    client_isn: int
    server_isn: int


def _tcp_of(frame: EthernetFrame):
    """(ip header, tcp header, payload) or None for anything that is not TCP/IPv4."""
    if frame.ethertype != ETHERTYPE_IPV4:
        return None
    try:
        ip = codec.parse_ipv4(frame.payload)
        if ip.header.protocol != codec.PROTO_TCP:
            return None
        tcp, payload = codec.parse_tcp(ip.payload)
    except CodecError:
        return None
    return ip.header, tcp, payload


def sniff_handshake(syn: EthernetFrame, synack: EthernetFrame) -> HandshakeCapture:
    """Read the dynamic port and both ISNs off a captured SYN / SYN-ACK pair."""
    _, syn_tcp, _ = _tcp_of(syn)
    _, synack_tcp, _ = _tcp_of(synack)
    return HandshakeCapture(syn_tcp.src_port, syn_tcp.seq, synack_tcp.seq)


def native_segment(src_mac, dst_mac, src_ip, dst_ip, src_port, dst_port, seq, ack, flags,
                    ident) -> EthernetFrame:
    tcp = TcpHeader(src_port, dst_port, seq, ack, codec.tcp_flags_field(flags), NATIVE_WINDOW,
                    TCP_CHECKSUM_CONSTANT, 0)
    segment = codec.serialize_tcp(tcp)
    ip = codec.seal_ipv4(Ipv4Header(src_ip, dst_ip, codec.PROTO_TCP, ident=ident, ttl=IP_TTL,
                                    flags_offset=IP_FLAGS_DONT_FRAGMENT), segment)
    return EthernetFrame(dst_mac, src_mac, ETHERTYPE_IPV4, codec.serialize_ipv4(ip, segment))


def draw_isn(rng: random.Random, bits: int = 32) -> int:
    return rng.getrandbits(bits)


class ClientAgent:
    def __init__(self, ip: IPv4Address, mac: MacAddress, gateway_mac: MacAddress,
                 server_public_ip: IPv4Address, forwarding: ForwardingConfig,
                 rng: random.Random, isn_bits: int = 32, max_fragment: int = MAX_FRAGMENT,
                 local_port: int | None = None):
        self.ip = ip
        self.mac = mac
        self.gateway_mac = gateway_mac
        self.server_public_ip = server_public_ip
        self.forwarding = forwarding
        self.rng = rng
        self.isn_bits = isn_bits
        self.max_fragment = max_fragment
        self.local_port = local_port
        self.phase = "idle"
        self.connection: TunnelConnection | None = None
        self.capture: HandshakeCapture | None = None
        self.frag_buffer = FragmentBuffer()
        self._syn: EthernetFrame | None = None

    # connection establishment

    def client_connect(self) -> list[EthernetFrame]:
        if self.phase != "idle":
            raise RuntimeError(f"cannot connect while {self.phase}")
        port = self.local_port or self.rng.randint(*DYNAMIC_PORTS)
        isn = draw_isn(self.rng, self.isn_bits)
        self._syn = native_segment(self.mac, self.gateway_mac, self.ip, self.server_public_ip,
                                    port, TUNNEL_PORT, isn, 0, codec.TCP_SYN,
                                    self.rng.getrandbits(16))
        self.phase = "connecting"
        return [self._syn]

    def connect_failed(self) -> None:
        self.phase = "idle"
        self._syn = None

    def is_handshake_reply(self, frame: EthernetFrame) -> bool:
        if self.phase != "connecting" or self._syn is None:
            return False
        got = _tcp_of(frame)
        if got is None:
            return False
        ip, tcp, _ = got
        _, syn_tcp, _ = _tcp_of(self._syn)
        return (ip.src == self.server_public_ip and ip.dst == self.ip
                and tcp.src_port == TUNNEL_PORT and tcp.dst_port == syn_tcp.src_port
                and tcp.has(codec.TCP_SYN) and tcp.has(codec.TCP_ACK)
                and tcp.ack == (syn_tcp.seq + 1) % SEQ_MOD)

    def on_handshake_frame(self, frame: EthernetFrame) -> list[EthernetFrame]:
        """Consume the SYN-ACK, answer with the final ACK and switch to relaying."""
        if not self.is_handshake_reply(frame):
            return []
        self.capture = sniff_handshake(self._syn, frame)
        c = self.capture
        profile = HeaderProfile.client_to_server(self.mac, self.gateway_mac, self.ip,
                                                 self.server_public_ip, c.client_dynamic_port)
        seq = (c.client_isn + 1) % SEQ_MOD
        peer_seq = (c.server_isn + 1) % SEQ_MOD
        self.connection = TunnelConnection(profile, seq, peer_seq, peer_seq, 0)
        self.forwarding.envelope = profile
        self.frag_buffer = FragmentBuffer()
        self.phase = "relaying"
        ack = native_segment(self.mac, self.gateway_mac, self.ip, self.server_public_ip,
                              c.client_dynamic_port, TUNNEL_PORT, seq, peer_seq, codec.TCP_ACK,
                              self.rng.getrandbits(16))
        return [ack]

    # relaying

    def is_tunnel_frame(self, frame: EthernetFrame) -> bool:
        if self.connection is None:
            return False
        got = _tcp_of(frame)
        return got is not None and self.connection.matches_inbound(got[0], got[1])

    def client_on_lan_frame(self, frame: EthernetFrame) -> list[EthernetFrame]:
        if self.phase != "relaying" or not should_forward_lan_to_tunnel(frame, self.forwarding):
            return []
        return encapsulate(codec.serialize_ethernet(frame), self.connection, self.rng,
                           self.max_fragment)

    def client_on_tunnel_frame(self, frame: EthernetFrame) -> bytes | None:
        if self.phase != "relaying":
            return None
        try:
            return decapsulate(frame, self.connection, self.frag_buffer)
        except (TunnelError, CodecError) as exc:
            log.info("client ignored a tunnel frame: %s", exc)
            return None


@dataclass
class NeighborhoodEntry:
    shares: tuple[str, ...]
    last_seen: int


@dataclass
class NeighborhoodListing:
    entries: dict[str, NeighborhoodEntry] = field(default_factory=dict)

    def merge(self, ann: codec.BrowserAnnouncement, now: int) -> None:
        self.entries[ann.host_name] = NeighborhoodEntry(ann.shares, now)

    def hosts(self) -> dict[str, tuple[str, ...]]:
        return {name: e.shares for name, e in self.entries.items()}


def announcement_of(data: bytes) -> codec.BrowserAnnouncement | None:
    try:
        eth = codec.parse_ethernet(data)
        if eth.ethertype != ETHERTYPE_IPV4:
            return None
        ip = codec.parse_ipv4(eth.payload)
        if ip.header.protocol != codec.PROTO_UDP:
            return None
        udp, body = codec.parse_udp(ip.payload)
        if udp.dst_port != codec.BROWSER_PORT:
            return None
        return codec.parse_browser(body)
    except CodecError:
        return None


class ServerAgent:
    def __init__(self, public_ip: IPv4Address, mac: MacAddress, gateway_mac: MacAddress,
                 second_ip: IPv4Address, lan_network: IPv4Network, rng: random.Random,
                 max_fragment: int = MAX_FRAGMENT, listening: bool = True):
        if second_ip not in lan_network:
            raise ValueError(f"second IP {second_ip} is outside {lan_network}")
        self.public_ip = public_ip
        self.mac = mac
        self.gateway_mac = gateway_mac
        self.second_ip = second_ip
        self.rng = rng
        self.max_fragment = max_fragment
        self.listening = listening
        self.phase = "listening"
        self.connection: TunnelConnection | None = None
        self.frag_buffer = FragmentBuffer()
        # the phantom host shares the server's MAC
        self.second_ip_stack = HostStack(mac, second_ip, lan_network)
        self.neighborhood = NeighborhoodListing()
        self.forwarding = ForwardingConfig(second_ip, mac, codec.ZERO_MAC, lan_network)
        self.refused = 0
        self._peer: tuple[IPv4Address, int] | None = None
        self._isn = 0
        self._peer_isn = 0

    def server_accept(self, syn: EthernetFrame) -> list[EthernetFrame]:
        """Answer a SYN on port 80 and record the peer's translated address and port."""
        got = _tcp_of(syn)
        if not self.listening or got is None:
            return []
        ip, tcp, _ = got
        if tcp.dst_port != TUNNEL_PORT or not tcp.has(codec.TCP_SYN) or tcp.has(codec.TCP_ACK):
            return []
        if self.phase != "listening" and ip.src != (self._peer or (None,))[0]:
            self.refused += 1
            log.info("refused a second session from %s:%d", ip.src, tcp.src_port)
            return []
        if not (self.phase == "syn_received" and self._peer == (ip.src, tcp.src_port)
                and self._peer_isn == tcp.seq):
            self._isn = draw_isn(self.rng)
        self._peer = (ip.src, tcp.src_port)
        self._peer_isn = tcp.seq
        profile = HeaderProfile.server_to_client(self.mac, self.gateway_mac, self.public_ip,
                                                 ip.src, tcp.src_port)
        seq = (self._isn + 1) % SEQ_MOD
        peer_seq = (tcp.seq + 1) % SEQ_MOD
        self.connection = TunnelConnection(profile, seq, peer_seq, peer_seq, 0)
        self.forwarding.envelope = profile
        self.frag_buffer = FragmentBuffer()
        self.phase = "syn_received"
        return [native_segment(self.mac, self.gateway_mac, self.public_ip, ip.src, TUNNEL_PORT,
                                tcp.src_port, self._isn, peer_seq,
                                codec.TCP_SYN | codec.TCP_ACK, self.rng.getrandbits(16))]

    def on_segment(self, frame: EthernetFrame) -> str:
        """Classify a non-SYN port-80 segment: "handshake", "data", or a drop reason."""
        got = _tcp_of(frame)
        if got is None:
            return "not_tunnel"
        ip, tcp, payload = got
        if self.phase == "listening" or self.connection is None:
            return "not_established"
        if not self.connection.matches_inbound(ip, tcp):
            return "not_tunnel"
        if self.phase == "syn_received":
            if not (tcp.has(codec.TCP_ACK) and tcp.ack == (self._isn + 1) % SEQ_MOD):
                return "not_established"
            self.phase = "relaying"
            if not payload:
                return "handshake"
        return "data"

    def accept_envelope(self, frame: EthernetFrame) -> bytes | None:
        if self.phase != "relaying":
            return None
        try:
            return decapsulate(frame, self.connection, self.frag_buffer)
        except (TunnelError, CodecError) as exc:
            log.info("server ignored a tunnel frame: %s", exc)
            return None

    def deliver_inner(self, inner: bytes, now: int = 0) -> list[bytes]:
        """Hand a decapsulated frame to the second-IP stack as if it came off the wire."""
        try:
            codec.parse_ethernet(inner)
        except CodecError as exc:
            log.warning("dropping malformed inner frame: %s", exc)
            return []
        ann = announcement_of(inner)
        if ann is not None:
            self.neighborhood.merge(ann, now)
        return host_handle_frame(self.second_ip_stack, inner, now)

    def server_on_tunnel_frame(self, frame: EthernetFrame, now: int = 0) -> list[bytes]:
        inner = self.accept_envelope(frame)
        return [] if inner is None else self.deliver_inner(inner, now)

    def server_send_to_lan(self, inner: bytes) -> list[EthernetFrame]:
        if self.phase != "relaying":
            return []
        try:
            frame = codec.parse_ethernet(inner)
        except CodecError:
            return []
        if not should_forward_server_to_tunnel(frame, self.forwarding):
            return []
        return encapsulate(inner, self.connection, self.rng, self.max_fragment)


# --- simulator adapters -----------------------------------------------------

MAX_LOOPBACK_DEPTH = 4


class ClientNode:
    """The insider's machine on the LAN, running the client in promiscuous mode.

    Like a capture driver, the sniffer also sees every frame this machine
    transmits; those frames go back through the forwarding predicate, so
    loop prevention is exercised for real.
    """

    name = "client"

    def __init__(self, sim, agent: ClientAgent, connect_timeout: int = 200):
        self.sim = sim
        self.agent = agent
        self.connect_timeout = connect_timeout
        self.lan = None
        self.connect_failures = 0
        self.loopback_suppressed = 0

    def start(self, at: int = 0) -> None:
        self.sim.at(at, self._connect)

    def _connect(self) -> None:
        for frame in self.agent.client_connect():
            self._emit(frame, self.sim.new_tag())
        self.sim.schedule(self.connect_timeout, self._check_connected)

    def _check_connected(self) -> None:
        if self.agent.phase == "connecting":
            self.agent.connect_failed()
            self.connect_failures += 1

    def _emit(self, frame, tag: FrameTag, depth: int = 0) -> None:
        data = codec.serialize_ethernet(frame) if isinstance(frame, EthernetFrame) else frame
        self.lan.send(self, data, tag)
        if depth >= MAX_LOOPBACK_DEPTH:
            log.error("client loopback depth exceeded; forwarding guard is broken")
            return
        envelopes = self.agent.client_on_lan_frame(codec.parse_ethernet(data))
        if not envelopes:
            self.loopback_suppressed += 1
        for env in envelopes:
            self._emit(env, self.sim.new_tag(inner=tag.id), depth + 1)

    def on_lan_frame(self, data: bytes, tag: FrameTag) -> None:
        try:
            frame = codec.parse_ethernet(data)
        except CodecError:
            return
        if self.agent.phase == "connecting" and self.agent.is_handshake_reply(frame):
            for out in self.agent.on_handshake_frame(frame):
                self._emit(out, self.sim.new_tag())
            return
        if self.agent.is_tunnel_frame(frame):
            inner = self.agent.client_on_tunnel_frame(frame)
            if inner is not None:
                inner_tag = FrameTag(tag.inner) if tag.inner is not None else self.sim.new_tag()
                self._emit(inner, inner_tag)
            return
        for env in self.agent.client_on_lan_frame(frame):
            self._emit(env, self.sim.new_tag(inner=tag.id))


class ServerNode:
    """The attacker's internet-facing machine; its interface is the ``server_if`` tap."""

    name = "server"

    def __init__(self, sim, agent: ServerAgent):
        self.sim = sim
        self.agent = agent
        self.internet = None
        self.pingers: list[Pinger] = []

    def _record(self, data: bytes, src: str, dst: str, tag: FrameTag, reason=None) -> None:
        self.sim.record(Location.SERVER_IF, data, src, dst, tag, reason=reason)

    def _transmit(self, frame: EthernetFrame, tag: FrameTag) -> None:
        data = codec.serialize_ethernet(frame)
        self._record(data, self.name, "internet", tag)
        self.internet.send(self, data, tag)

    def on_internet_frame(self, data: bytes, tag: FrameTag) -> None:
        try:
            frame = codec.parse_ethernet(data)
        except CodecError:
            return
        got = _tcp_of(frame)
        if got is None or got[1].dst_port != TUNNEL_PORT:
            self._record(data, "internet", self.name, tag)
            return
        tcp = got[1]
        if tcp.has(codec.TCP_SYN) and not tcp.has(codec.TCP_ACK):
            self._record(data, "internet", self.name, tag)
            for out in self.agent.server_accept(frame):
                self._transmit(out, self.sim.new_tag())
            return
        status = self.agent.on_segment(frame)
        if status not in ("handshake", "data"):
            self._record(data, "internet", self.name, tag, reason=status)
            return
        self._record(data, "internet", self.name, tag)
        if status == "handshake":
            return
        inner = self.agent.accept_envelope(frame)
        if inner is None:
            return
        inner_tag = FrameTag(tag.inner) if tag.inner is not None else self.sim.new_tag()
        self._record(inner, "tunnel", self.name, inner_tag)
        # the sniffer sees the injected frame too; the predicate keeps it out of the tunnel
        self._send_to_lan(inner, inner_tag)
        for resp in self.agent.deliver_inner(inner, self.sim.now):
            self.stack_send(resp)
        for p in self.pingers:
            p.notify(self.sim.now)

    def stack_send(self, data: bytes) -> FrameTag:
        """A frame generated by the second-IP stack, seen leaving the interface."""
        tag = self.sim.new_tag()
        self._record(data, "stack", self.name, tag)
        self._send_to_lan(data, tag)
        return tag

    def _send_to_lan(self, inner: bytes, inner_tag: FrameTag) -> None:
        for env in self.agent.server_send_to_lan(inner):
            self._transmit(env, self.sim.new_tag(inner=inner_tag.id))

    def ping(self, target: IPv4Address, at: int = 0, **kwargs) -> Pinger:
        """Ping a LAN host from the phantom address."""
        pinger = Pinger(self.agent.second_ip_stack, target, self.stack_send,
                        lambda delay, fn, *a: self.sim.schedule(delay, lambda: fn(self.sim.now, *a)),
                        **kwargs)
        self.pingers.append(pinger)
        self.sim.at(at, lambda: pinger.start(self.sim.now))
        return pinger
