"""Whole-frame builders and a one-line summarizer for traces."""

from __future__ import annotations

from ipaddress import IPv4Address

from . import codec
from .codec import (
    BROADCAST_MAC,
    ETHERTYPE_ARP,
    ETHERTYPE_IPV4,
    ArpOp,
    ArpPacket,
    BrowserAnnouncement,
    EthernetFrame,
    IcmpEcho,
    Ipv4Header,
    MacAddress,
)
from .errors import CodecError


def ipv4_frame(src_mac: MacAddress, dst_mac: MacAddress, header: Ipv4Header,
               payload: bytes) -> bytes:
    sealed = codec.seal_ipv4(header, payload)
    return codec.serialize_ethernet(EthernetFrame(
        dst_mac, src_mac, ETHERTYPE_IPV4, codec.serialize_ipv4(sealed, payload)))


def arp_frame(packet: ArpPacket) -> bytes:
    dst = BROADCAST_MAC if packet.op == ArpOp.REQUEST else packet.target_mac
    return codec.serialize_ethernet(EthernetFrame(
        dst, packet.sender_mac, ETHERTYPE_ARP, codec.serialize_arp(packet)))


def icmp_frame(src_mac: MacAddress, dst_mac: MacAddress, src_ip: IPv4Address,
               dst_ip: IPv4Address, echo: IcmpEcho, ident: int = 0, ttl: int = 0x80) -> bytes:
    header = Ipv4Header(src_ip, dst_ip, codec.PROTO_ICMP, ident=ident, ttl=ttl, flags_offset=0)
    return ipv4_frame(src_mac, dst_mac, header, codec.serialize_icmp(echo))


def announcement_frame(src_mac: MacAddress, src_ip: IPv4Address, broadcast_ip: IPv4Address,
                       ann: BrowserAnnouncement, ident: int = 0) -> bytes:
    udp = codec.serialize_udp(codec.BROWSER_PORT, codec.BROWSER_PORT,
                              codec.serialize_browser(ann))
    header = Ipv4Header(src_ip, broadcast_ip, codec.PROTO_UDP, ident=ident, flags_offset=0)
    return ipv4_frame(src_mac, BROADCAST_MAC, header, udp)


def tcp_flag_names(flags: int) -> str:
    names = [n for bit, n in ((codec.TCP_SYN, "SYN"), (codec.TCP_FIN, "FIN"),
                              (codec.TCP_RST, "RST"), (codec.TCP_PSH, "PSH"),
                              (codec.TCP_ACK, "ACK")) if flags & bit]
    return ",".join(names) or "-"


def describe(data: bytes) -> str:
    """A short protocol summary in the spirit of a capture tool's info column."""
    try:
        eth = codec.parse_ethernet(data)
    except CodecError:
        return f"malformed len={len(data)}"
    try:
        if eth.ethertype == ETHERTYPE_ARP:
            arp = codec.parse_arp(eth.payload)
            if arp.op == ArpOp.REQUEST:
                return f"ARP who-has {arp.target_ip} tell {arp.sender_ip}"
            return f"ARP {arp.sender_ip} is-at {arp.sender_mac}"
        if eth.ethertype != ETHERTYPE_IPV4:
            return f"ethertype=0x{eth.ethertype:04x} len={len(data)}"
        ip = codec.parse_ipv4(eth.payload)
        h = ip.header
        bad = "" if ip.checksum_ok else " [bad ip checksum]"
        if h.protocol == codec.PROTO_TCP:
            tcp, body = codec.parse_tcp(ip.payload)
            return (f"TCP {h.src}:{tcp.src_port} > {h.dst}:{tcp.dst_port} "
                    f"[{tcp_flag_names(tcp.flags)}] seq={tcp.seq} ack={tcp.ack} "
                    f"win={tcp.window} len={len(body)}{bad}")
        if h.protocol == codec.PROTO_ICMP:
            echo = codec.parse_icmp(ip.payload)
            kind = "request" if echo.kind == codec.ICMP_ECHO_REQUEST else "reply"
            return (f"ICMP echo {kind} {h.src} > {h.dst} id={echo.ident} "
                    f"seq={echo.seqno} len={len(echo.payload)}{bad}")
        if h.protocol == codec.PROTO_UDP:
            udp, body = codec.parse_udp(ip.payload)
            if udp.dst_port == codec.BROWSER_PORT:
                ann = codec.parse_browser(body)
                return f"BROWSER {h.src} > {h.dst} host={ann.host_name} shares={len(ann.shares)}"
            return f"UDP {h.src}:{udp.src_port} > {h.dst}:{udp.dst_port} len={len(body)}"
        return f"IP {h.src} > {h.dst} proto={h.protocol} len={h.total_length}{bad}"
    except CodecError as exc:
        return f"malformed ({exc})"
