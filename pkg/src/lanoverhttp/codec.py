"""Wire formats: Ethernet II, IPv4, TCP, UDP, ARP, ICMP echo and the
browser-announcement datagram.

All multi-byte integers are big-endian on the wire. Serializers write the
fields they are given; ``seal_ipv4`` is the one place that fills in a
header's derived fields (total length and checksum).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field, replace
from ipaddress import IPv4Address
from typing import NamedTuple

from .checksum import internet_checksum
from .errors import MalformedError, SizeError, TruncatedError

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETH_HEADER_LEN = 14
ETH_MTU = 1500
MAX_FRAME_LEN = ETH_HEADER_LEN + ETH_MTU

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10

BROWSER_PORT = 138
MAX_HOST_NAME = 15


@dataclass(frozen=True, order=True)
class MacAddress:
    octets: bytes

    def __post_init__(self):
        if len(self.octets) != 6:
            raise SizeError(f"MAC address needs 6 octets, got {len(self.octets)}")

    @classmethod
    def parse(cls, text: str) -> MacAddress:
        parts = text.replace("-", ":").split(":")
        if len(parts) != 6:
            raise MalformedError(f"bad MAC address {text!r}")
        try:
            return cls(bytes(int(p, 16) for p in parts))
        except ValueError as exc:
            raise MalformedError(f"bad MAC address {text!r}") from exc

    @property
    def is_broadcast(self) -> bool:
        return self.octets == b"\xff" * 6

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)


BROADCAST_MAC = MacAddress(b"\xff" * 6)
ZERO_MAC = MacAddress(bytes(6))


def mac(text: str) -> MacAddress:
    return MacAddress.parse(text)


# --- Ethernet -------------------------------------------------------------


@dataclass(frozen=True)
class EthernetFrame:
    dst_mac: MacAddress
    src_mac: MacAddress
    ethertype: int
    payload: bytes = b""


def serialize_ethernet(frame: EthernetFrame) -> bytes:
    if len(frame.payload) > ETH_MTU:
        raise SizeError(f"Ethernet payload of {len(frame.payload)} bytes exceeds {ETH_MTU}")
    return (frame.dst_mac.octets + frame.src_mac.octets
            + struct.pack("!H", frame.ethertype) + frame.payload)


def parse_ethernet(data: bytes) -> EthernetFrame:
    if len(data) < ETH_HEADER_LEN:
        raise TruncatedError(f"Ethernet frame needs {ETH_HEADER_LEN} bytes, got {len(data)}")
    if len(data) > MAX_FRAME_LEN:
        raise SizeError(f"Ethernet frame of {len(data)} bytes exceeds {MAX_FRAME_LEN}")
    (ethertype,) = struct.unpack_from("!H", data, 12)
    return EthernetFrame(MacAddress(bytes(data[0:6])), MacAddress(bytes(data[6:12])),
                         ethertype, bytes(data[14:]))


# --- IPv4 -----------------------------------------------------------------

_IPV4 = struct.Struct("!BBHHHBBH4s4s")


@dataclass(frozen=True)
class Ipv4Header:
    src: IPv4Address
    dst: IPv4Address
    protocol: int
    ident: int = 0
    ttl: int = 0x80
    tos: int = 0
    flags_offset: int = 0x4000
    total_length: int = 20
    checksum: int = 0
    version_ihl: int = 0x45

    def pack(self) -> bytes:
        return _IPV4.pack(self.version_ihl, self.tos, self.total_length, self.ident,
                          self.flags_offset, self.ttl, self.protocol, self.checksum,
                          self.src.packed, self.dst.packed)


class Ipv4Datagram(NamedTuple):
    header: Ipv4Header
    payload: bytes
    checksum_ok: bool


def seal_ipv4(header: Ipv4Header, payload: bytes) -> Ipv4Header:
    """Return ``header`` with total length and checksum set for ``payload``."""
    sized = replace(header, total_length=20 + len(payload), checksum=0)
    return replace(sized, checksum=internet_checksum(sized.pack()))


def serialize_ipv4(header: Ipv4Header, payload: bytes) -> bytes:
    if header.version_ihl != 0x45:
        raise MalformedError("IP options are not supported (version_ihl must be 0x45)")
    if header.total_length != 20 + len(payload):
        raise SizeError(
            f"total_length {header.total_length} does not match 20 + {len(payload)}")
    return header.pack() + payload


def parse_ipv4(data: bytes) -> Ipv4Datagram:
    if len(data) < 20:
        raise TruncatedError(f"IPv4 header needs 20 bytes, got {len(data)}")
    (version_ihl, tos, total_length, ident, flags_offset, ttl, protocol, checksum,
     src, dst) = _IPV4.unpack_from(data)
    if version_ihl != 0x45:
        raise MalformedError(f"unsupported version/IHL 0x{version_ihl:02x}")
    if total_length < 20 or total_length > len(data):
        raise TruncatedError(f"total_length {total_length} with {len(data)} bytes available")
    header = Ipv4Header(IPv4Address(src), IPv4Address(dst), protocol, ident, ttl, tos,
                        flags_offset, total_length, checksum, version_ihl)
    ok = internet_checksum(bytes(data[:20])) == 0
    return Ipv4Datagram(header, bytes(data[20:total_length]), ok)


# --- TCP ------------------------------------------------------------------

_TCP = struct.Struct("!HHIIHHHH")


@dataclass(frozen=True)
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    offset_resv_flags: int = 0x5018
    window: int = 0
    checksum: int = 0
    urgent: int = 0

    @property
    def flags(self) -> int:
        return self.offset_resv_flags & 0x3F

    @property
    def data_offset(self) -> int:
        return self.offset_resv_flags >> 12

    def has(self, flag: int) -> bool:
        return bool(self.flags & flag)


def tcp_flags_field(flags: int) -> int:
    """Data offset of five words plus the given flag bits."""
    return 0x5000 | flags


def serialize_tcp(header: TcpHeader, payload: bytes = b"") -> bytes:
    return _TCP.pack(header.src_port, header.dst_port, header.seq, header.ack,
                     header.offset_resv_flags, header.window, header.checksum,
                     header.urgent) + payload


def parse_tcp(data: bytes) -> tuple[TcpHeader, bytes]:
    if len(data) < 20:
        raise TruncatedError(f"TCP header needs 20 bytes, got {len(data)}")
    header = TcpHeader(*_TCP.unpack_from(data))
    if header.data_offset != 5:
        raise MalformedError("TCP options are not supported")
    return header, bytes(data[20:])


# --- UDP (only what the browser datagram needs) -----------------------------

_UDP = struct.Struct("!HHHH")


@dataclass(frozen=True)
class UdpHeader:
    src_port: int
    dst_port: int
    length: int = 8
    checksum: int = 0   # zero means "not computed", legal over IPv4


def serialize_udp(src_port: int, dst_port: int, payload: bytes) -> bytes:
    return _UDP.pack(src_port, dst_port, 8 + len(payload), 0) + payload


def parse_udp(data: bytes) -> tuple[UdpHeader, bytes]:
    if len(data) < 8:
        raise TruncatedError(f"UDP header needs 8 bytes, got {len(data)}")
    header = UdpHeader(*_UDP.unpack_from(data))
    if header.length < 8 or header.length > len(data):
        raise TruncatedError(f"UDP length {header.length} with {len(data)} bytes available")
    return header, bytes(data[8:header.length])


# --- ARP ------------------------------------------------------------------

_ARP = struct.Struct("!HHBBH6s4s6s4s")


class ArpOp(enum.IntEnum):
    REQUEST = 1
    REPLY = 2


@dataclass(frozen=True)
class ArpPacket:
    op: ArpOp
    sender_mac: MacAddress
    sender_ip: IPv4Address
    target_mac: MacAddress
    target_ip: IPv4Address

    @classmethod
    def request(cls, sender_mac: MacAddress, sender_ip: IPv4Address,
                target_ip: IPv4Address) -> ArpPacket:
        return cls(ArpOp.REQUEST, sender_mac, sender_ip, ZERO_MAC, target_ip)

    def reply_from(self, responder_mac: MacAddress) -> ArpPacket:
        """The reply a host owning ``target_ip`` sends back to the requester."""
        return ArpPacket(ArpOp.REPLY, responder_mac, self.target_ip,
                         self.sender_mac, self.sender_ip)


def serialize_arp(packet: ArpPacket) -> bytes:
    if packet.op not in (ArpOp.REQUEST, ArpOp.REPLY):
        raise MalformedError(f"unknown ARP op {packet.op}")
    if packet.op == ArpOp.REQUEST and packet.target_mac != ZERO_MAC:
        raise MalformedError("ARP request must carry a zero target MAC")
    return _ARP.pack(1, ETHERTYPE_IPV4, 6, 4, packet.op,
                     packet.sender_mac.octets, packet.sender_ip.packed,
                     packet.target_mac.octets, packet.target_ip.packed)


def parse_arp(data: bytes) -> ArpPacket:
    if len(data) < _ARP.size:
        raise TruncatedError(f"ARP body needs {_ARP.size} bytes, got {len(data)}")
    htype, ptype, hlen, plen, op, sha, spa, tha, tpa = _ARP.unpack_from(data)
    if (htype, ptype, hlen, plen) != (1, ETHERTYPE_IPV4, 6, 4):
        raise MalformedError("only Ethernet/IPv4 ARP is supported")
    try:
        op = ArpOp(op)
    except ValueError as exc:
        raise MalformedError(f"unknown ARP op {op}") from exc
    return ArpPacket(op, MacAddress(sha), IPv4Address(spa), MacAddress(tha), IPv4Address(tpa))


# --- ICMP echo ------------------------------------------------------------

ICMP_ECHO_REPLY = 0
ICMP_ECHO_REQUEST = 8


@dataclass(frozen=True)
class IcmpEcho:
    kind: int
    ident: int
    seqno: int
    payload: bytes = b""

    def reply(self) -> IcmpEcho:
        return IcmpEcho(ICMP_ECHO_REPLY, self.ident, self.seqno, self.payload)


def serialize_icmp(echo: IcmpEcho) -> bytes:
    if echo.kind not in (ICMP_ECHO_REQUEST, ICMP_ECHO_REPLY):
        raise MalformedError(f"not an echo type: {echo.kind}")
    body = struct.pack("!BBHHH", echo.kind, 0, 0, echo.ident, echo.seqno) + echo.payload
    return body[:2] + struct.pack("!H", internet_checksum(body)) + body[4:]


def parse_icmp(data: bytes) -> IcmpEcho:
    if len(data) < 8:
        raise TruncatedError(f"ICMP echo needs 8 bytes, got {len(data)}")
    kind, code, _, ident, seqno = struct.unpack_from("!BBHHH", data)
    if kind not in (ICMP_ECHO_REQUEST, ICMP_ECHO_REPLY) or code != 0:
        raise MalformedError(f"not an ICMP echo (type {kind}, code {code})")
    if internet_checksum(data) != 0:
        raise MalformedError("bad ICMP checksum")
    return IcmpEcho(kind, ident, seqno, bytes(data[8:]))


# --- Browser announcement -------------------------------------------------


@dataclass(frozen=True)
class BrowserAnnouncement:
    host_name: str
    shares: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "shares", tuple(self.shares))


def _put_string(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 255:
        raise SizeError(f"string {text!r} longer than 255 bytes")
    return bytes([len(raw)]) + raw


def serialize_browser(ann: BrowserAnnouncement) -> bytes:
    if not ann.host_name or len(ann.host_name) > MAX_HOST_NAME:
        raise SizeError(f"host name must be 1..{MAX_HOST_NAME} characters: {ann.host_name!r}")
    if len(ann.shares) > 255:
        raise SizeError("at most 255 shares per announcement")
    return (_put_string(ann.host_name) + bytes([len(ann.shares)])
            + b"".join(_put_string(s) for s in ann.shares))


def parse_browser(data: bytes) -> BrowserAnnouncement:
    pos = 0

    def take_string() -> str:
        nonlocal pos
        if pos >= len(data):
            raise TruncatedError("announcement ends inside a length prefix")
        n = data[pos]
        if pos + 1 + n > len(data):
            raise TruncatedError("announcement string runs past the end")
        raw = bytes(data[pos + 1:pos + 1 + n])
        pos += 1 + n
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedError("announcement string is not UTF-8") from exc

    name = take_string()
    if pos >= len(data):
        raise TruncatedError("announcement is missing its share count")
    count = data[pos]
    pos += 1
    shares = tuple(take_string() for _ in range(count))
    if pos != len(data):
        raise MalformedError(f"{len(data) - pos} trailing bytes after announcement")
    if not name or len(name) > MAX_HOST_NAME:
        raise MalformedError(f"bad host name {name!r}")
    return BrowserAnnouncement(name, shares)
