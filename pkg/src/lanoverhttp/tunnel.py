"""The tunnel protocol engine shared by both agents.

An inner LAN frame is carried as the payload of a crafted TCP segment on the
HTTP port. The TCP window field is repurposed as a more-fragments flag: a
frame too large for one segment is split in two, the first piece carrying
window 1 and the last (or only) piece carrying window 0.

Connection objects are single-owner and mutated in place.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass
from ipaddress import IPv4Address, IPv4Network

from . import codec
from .codec import (
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    EthernetFrame,
    Ipv4Header,
    MacAddress,
    TcpHeader,
)
from .errors import CodecError, FragmentError, SizeError, TupleMismatch

log = logging.getLogger(__name__)

TUNNEL_PORT = 80
DATA_FLAGS = 0x5018            # data offset 5, PSH+ACK
TCP_CHECKSUM_CONSTANT = 0x06D8  # stamped, never verified
IP_FLAGS_DONT_FRAGMENT = 0x4000
IP_TTL = 0x80
ENVELOPE_OVERHEAD = 40          # IPv4 + TCP headers, no options
MAX_FRAGMENT = codec.ETH_MTU - ENVELOPE_OVERHEAD   # 1460
MAX_INNER = codec.MAX_FRAME_LEN                    # 1514
SEQ_MOD = 2**32


@dataclass(frozen=True)
class HeaderProfile:
    """Fixed header values one side stamps on every envelope it emits."""

    src_mac: MacAddress
    dst_mac: MacAddress
    src_ip: IPv4Address
    dst_ip: IPv4Address
    src_port: int
    dst_port: int

    @classmethod
    def client_to_server(cls, client_mac, gateway_mac, client_ip, server_public_ip,
                         dynamic_port) -> HeaderProfile:
        return cls(client_mac, gateway_mac, client_ip, server_public_ip,
                   dynamic_port, TUNNEL_PORT)

    @classmethod
    def server_to_client(cls, server_mac, server_gateway_mac, server_public_ip,
                         lan_public_ip, peer_port) -> HeaderProfile:
        return cls(server_mac, server_gateway_mac, server_public_ip, lan_public_ip,
                   TUNNEL_PORT, peer_port)


@dataclass
class TunnelConnection:
    profile: HeaderProfile
    seq_local: int
    ack_local: int
    last_peer_seq: int = 0
    last_peer_payload_len: int = 0

    def matches_inbound(self, ip: Ipv4Header, tcp: TcpHeader) -> bool:
        """True if the packet travels the reverse of our profile's 5-tuple."""
        p = self.profile
        return (ip.protocol == codec.PROTO_TCP and ip.src == p.dst_ip and ip.dst == p.src_ip
                and tcp.src_port == p.dst_port and tcp.dst_port == p.src_port)


@dataclass
class FragmentBuffer:
    pending: bytes | None = None


@dataclass
class ForwardingConfig:
    server_second_ip: IPv4Address
    server_mac: MacAddress
    client_mac: MacAddress
    lan_network: IPv4Network
    # profile of envelopes the local side emits; set once the handshake completes
    envelope: HeaderProfile | None = None


def advance_sequence(conn: TunnelConnection, emitted_payload_len: int) -> TunnelConnection:
    if emitted_payload_len < 0:
        raise ValueError("payload length cannot be negative")
    conn.seq_local = (conn.seq_local + emitted_payload_len) % SEQ_MOD
    return conn


def fragment_count(inner_len: int, max_fragment: int = MAX_FRAGMENT) -> int:
    return 1 if inner_len <= max_fragment else 2


def encapsulate(inner: bytes, conn: TunnelConnection, rng: random.Random,
                max_fragment: int = MAX_FRAGMENT) -> list[EthernetFrame]:
    """Wrap a LAN frame in one or two envelopes using ``conn``'s profile."""
    if not inner:
        raise SizeError("cannot encapsulate an empty frame")
    if len(inner) > min(MAX_INNER, 2 * max_fragment):
        raise SizeError(f"inner frame of {len(inner)} bytes is too large to tunnel")
    if len(inner) <= max_fragment:
        pieces = [inner]
    else:
        pieces = [inner[:max_fragment], inner[max_fragment:]]
    p = conn.profile
    frames = []
    for i, piece in enumerate(pieces):
        more = i < len(pieces) - 1
        tcp = TcpHeader(p.src_port, p.dst_port, conn.seq_local, conn.ack_local,
                        DATA_FLAGS, 1 if more else 0, TCP_CHECKSUM_CONSTANT, 0)
        segment = codec.serialize_tcp(tcp, piece)
        ip = codec.seal_ipv4(Ipv4Header(p.src_ip, p.dst_ip, codec.PROTO_TCP,
                                        ident=rng.getrandbits(16), ttl=IP_TTL,
                                        flags_offset=IP_FLAGS_DONT_FRAGMENT), segment)
        frames.append(EthernetFrame(p.dst_mac, p.src_mac, ETHERTYPE_IPV4,
                                    codec.serialize_ipv4(ip, segment)))
        advance_sequence(conn, len(piece))
    return frames


def record_peer_segment(conn: TunnelConnection, seq: int, payload_len: int) -> None:
    conn.last_peer_seq = seq
    conn.last_peer_payload_len = payload_len
    conn.ack_local = (seq + payload_len) % SEQ_MOD


def decapsulate(outer: EthernetFrame, conn: TunnelConnection,
                buf: FragmentBuffer) -> bytes | None:
    """Strip the envelope headers; return the inner frame once it is complete."""
    ip = codec.parse_ipv4(outer.payload)
    if not ip.checksum_ok:
        log.warning("tunnel packet from %s has a bad IP checksum; accepting", ip.header.src)
    tcp, data = codec.parse_tcp(ip.payload)
    if not conn.matches_inbound(ip.header, tcp):
        raise TupleMismatch(
            f"{ip.header.src}:{tcp.src_port} > {ip.header.dst}:{tcp.dst_port} "
            f"is not this tunnel")
    if tcp.window not in (0, 1):
        raise FragmentError(f"window flag must be 0 or 1, got {tcp.window}")
    if tcp.window == 1 and buf.pending is not None:
        raise FragmentError("a second first-fragment arrived before reassembly finished")
    record_peer_segment(conn, tcp.seq, len(data))
    if tcp.window == 1:
        buf.pending = data
        return None
    if buf.pending is not None:
        data, buf.pending = buf.pending + data, None
    return data or None


def frame_ips(frame: EthernetFrame) -> tuple[IPv4Address, IPv4Address] | None:
    """(source, destination) protocol addresses of an IPv4 or ARP frame."""
    try:
        if frame.ethertype == ETHERTYPE_IPV4:
            h = codec.parse_ipv4(frame.payload).header
            return h.src, h.dst
        if frame.ethertype == ETHERTYPE_ARP:
            arp = codec.parse_arp(frame.payload)
            return arp.sender_ip, arp.target_ip
    except CodecError:
        pass
    return None


def is_tunnel_envelope(frame: EthernetFrame, profile: HeaderProfile | None) -> bool:
    """True if ``frame`` was emitted with ``profile`` (our own envelope seen again)."""
    if profile is None or frame.ethertype != ETHERTYPE_IPV4 or frame.src_mac != profile.src_mac:
        return False
    try:
        ip = codec.parse_ipv4(frame.payload)
        tcp, _ = codec.parse_tcp(ip.payload)
    except CodecError:
        return False
    h = ip.header
    return (h.protocol == codec.PROTO_TCP and h.src == profile.src_ip
            and h.dst == profile.dst_ip and tcp.src_port == profile.src_port
            and tcp.dst_port == profile.dst_port)


def should_forward_lan_to_tunnel(frame: EthernetFrame, cfg: ForwardingConfig) -> bool:
    if frame.src_mac == cfg.server_mac:
        return False   # came out of the tunnel; sending it back would loop
    if is_tunnel_envelope(frame, cfg.envelope):
        return False
    if frame.dst_mac.is_broadcast or frame.dst_mac == cfg.server_mac:
        return True
    ips = frame_ips(frame)
    return ips is not None and frame.ethertype == ETHERTYPE_IPV4 and ips[1] == cfg.server_second_ip


def _is_lan_broadcast(ip: IPv4Address, net: IPv4Network) -> bool:
    return ip == IPv4Address("255.255.255.255") or ip == net.broadcast_address


def should_forward_server_to_tunnel(frame: EthernetFrame, cfg: ForwardingConfig) -> bool:
    # frames the server injected from the tunnel carry a LAN host's source MAC
    if frame.src_mac != cfg.server_mac:
        return False
    ips = frame_ips(frame)
    if ips is None:
        return frame.dst_mac.is_broadcast
    src, dst = ips
    if src != cfg.server_second_ip:
        return False
    return (frame.dst_mac.is_broadcast or dst in cfg.lan_network
            or _is_lan_broadcast(dst, cfg.lan_network))
