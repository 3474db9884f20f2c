from ipaddress import IPv4Address

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanoverhttp import codec
from lanoverhttp.codec import (BROADCAST_MAC, ArpOp, ArpPacket, BrowserAnnouncement,
                               EthernetFrame, IcmpEcho, Ipv4Header, MacAddress, TcpHeader)
from lanoverhttp.errors import CodecError, MalformedError, SizeError, TruncatedError

from .strategies import (announcements, arp_packets, ethernet_frames, icmp_echoes, ipv4_datagrams,
                         macs, payloads, tcp_headers)


class TestMac:
    def test_broadcast_constant(self):
        assert str(BROADCAST_MAC) == "ff:ff:ff:ff:ff:ff"
        assert BROADCAST_MAC.is_broadcast

    @given(macs)
    def test_text_round_trip(self, m):
        assert MacAddress.parse(str(m)) == m

    @pytest.mark.parametrize("text", ["", "00:11", "zz:00:00:00:00:00", "00:00:00:00:00:00:00"])
    def test_bad_text(self, text):
        with pytest.raises((CodecError, ValueError)):
            MacAddress.parse(text)


class TestEthernet:
    def test_arp_layout(self):
        frame = EthernetFrame(BROADCAST_MAC, codec.mac("00:00:00:00:00:01"),
                              codec.ETHERTYPE_ARP, bytes(28))
        data = codec.serialize_ethernet(frame)
        assert len(data) == 42
        assert data[:14] == bytes.fromhex("FFFFFFFFFFFF0000000000010806")

    def test_oversize_payload(self):
        with pytest.raises(SizeError):
            codec.serialize_ethernet(EthernetFrame(BROADCAST_MAC, BROADCAST_MAC, 0x0800,
                                                   bytes(1501)))

    def test_largest_payload(self):
        data = codec.serialize_ethernet(EthernetFrame(BROADCAST_MAC, BROADCAST_MAC, 0x0800,
                                                      bytes(1500)))
        assert len(data) == codec.MAX_FRAME_LEN == 1514

    def test_truncated(self):
        with pytest.raises(TruncatedError):
            codec.parse_ethernet(bytes(13))

    def test_oversize_wire_frame(self):
        with pytest.raises(SizeError):
            codec.parse_ethernet(bytes(1515))

    @given(ethernet_frames)
    def test_round_trip(self, frame):
        data = codec.serialize_ethernet(frame)
        assert len(data) == 14 + len(frame.payload)
        assert codec.parse_ethernet(data) == frame


class TestIpv4:
    def test_total_length_for_inner_arp(self):
        # the IP layer alone: 20 + 62 (TCP header + a 42-byte frame)
        header = codec.seal_ipv4(Ipv4Header(IPv4Address("1.2.3.4"), IPv4Address("5.6.7.8"), 6),
                                 bytes(62))
        assert header.total_length == 82

    @given(ipv4_datagrams())
    def test_round_trip(self, datagram):
        header, payload = datagram
        parsed = codec.parse_ipv4(codec.serialize_ipv4(header, payload))
        assert parsed == (header, payload, True)

    @given(ipv4_datagrams(), st.integers(0, 19), st.integers(1, 255))
    def test_corruption_flags_checksum(self, datagram, pos, flip):
        header, payload = datagram
        data = bytearray(codec.serialize_ipv4(header, payload))
        data[pos] ^= flip
        try:
            parsed = codec.parse_ipv4(bytes(data))
        except CodecError:
            return   # version or length byte broken: rejected outright
        assert not parsed.checksum_ok

    def test_truncated(self):
        with pytest.raises(TruncatedError):
            codec.parse_ipv4(bytes(19))

    def test_total_length_beyond_data(self):
        header = codec.seal_ipv4(Ipv4Header(IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), 6),
                                 bytes(10))
        data = codec.serialize_ipv4(header, bytes(10))
        with pytest.raises(TruncatedError):
            codec.parse_ipv4(data[:-1])

    def test_options_rejected(self):
        header = Ipv4Header(IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), 6, version_ihl=0x46,
                            total_length=20)
        with pytest.raises(MalformedError):
            codec.serialize_ipv4(header, b"")

    def test_inconsistent_total_length(self):
        header = Ipv4Header(IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), 6, total_length=30)
        with pytest.raises(SizeError):
            codec.serialize_ipv4(header, b"")

    def test_trailing_bytes_ignored(self):
        header = codec.seal_ipv4(Ipv4Header(IPv4Address("1.1.1.1"), IPv4Address("2.2.2.2"), 17),
                                 b"abc")
        parsed = codec.parse_ipv4(codec.serialize_ipv4(header, b"abc") + b"\0" * 6)
        assert parsed.payload == b"abc"


class TestTcp:
    def test_data_flags_bytes(self):
        raw = codec.serialize_tcp(TcpHeader(1, 80, 0, 0, 0x5018, 0, 0x06D8, 0))
        assert raw[12:14] == b"\x50\x18"
        assert raw[16:18] == b"\x06\xd8"

    def test_flag_helpers(self):
        h = TcpHeader(1, 2, 3, 4, codec.tcp_flags_field(codec.TCP_SYN | codec.TCP_ACK))
        assert h.offset_resv_flags == 0x5012
        assert h.has(codec.TCP_SYN) and h.has(codec.TCP_ACK) and not h.has(codec.TCP_PSH)
        assert h.data_offset == 5

    @given(tcp_headers, payloads(1460))
    def test_round_trip(self, header, payload):
        assert codec.parse_tcp(codec.serialize_tcp(header, payload)) == (header, payload)

    def test_truncated(self):
        with pytest.raises(TruncatedError):
            codec.parse_tcp(bytes(19))

    def test_options_rejected(self):
        raw = codec.serialize_tcp(TcpHeader(1, 2, 3, 4, 0x6018)) + bytes(4)
        with pytest.raises(MalformedError):
            codec.parse_tcp(raw)


class TestArp:
    def test_request_for_phantom(self):
        req = ArpPacket.request(codec.mac("02:00:00:00:00:0a"), IPv4Address("192.168.0.10"),
                                IPv4Address("192.168.0.14"))
        body = codec.serialize_arp(req)
        assert len(body) == 28
        assert body[18:24] == bytes(6)
        assert body[24:28] == IPv4Address("192.168.0.14").packed

    def test_reply_fills_responder(self):
        req = ArpPacket.request(codec.mac("02:00:00:00:00:0a"), IPv4Address("192.168.0.10"),
                                IPv4Address("192.168.0.14"))
        rep = req.reply_from(codec.mac("02:00:00:c3:d4:c9"))
        assert rep.op == ArpOp.REPLY
        assert (rep.sender_mac, rep.sender_ip) == (codec.mac("02:00:00:c3:d4:c9"), req.target_ip)
        assert (rep.target_mac, rep.target_ip) == (req.sender_mac, req.sender_ip)

    def test_request_with_target_mac_rejected(self):
        bad = ArpPacket(ArpOp.REQUEST, BROADCAST_MAC, IPv4Address("1.1.1.1"), BROADCAST_MAC,
                        IPv4Address("1.1.1.2"))
        with pytest.raises(MalformedError):
            codec.serialize_arp(bad)

    def test_unknown_op(self):
        body = bytearray(codec.serialize_arp(ArpPacket.request(
            BROADCAST_MAC, IPv4Address("1.1.1.1"), IPv4Address("1.1.1.2"))))
        body[7] = 9
        with pytest.raises(MalformedError):
            codec.parse_arp(bytes(body))

    def test_truncated(self):
        with pytest.raises(TruncatedError):
            codec.parse_arp(bytes(27))

    @given(arp_packets)
    def test_round_trip(self, packet):
        assert codec.parse_arp(codec.serialize_arp(packet)) == packet


class TestIcmp:
    def test_reply_mirrors_request(self):
        req = IcmpEcho(codec.ICMP_ECHO_REQUEST, 7, 1, b"abc")
        rep = req.reply()
        assert (rep.kind, rep.ident, rep.seqno, rep.payload) == (codec.ICMP_ECHO_REPLY, 7, 1, b"abc")

    @given(icmp_echoes)
    def test_round_trip(self, echo):
        assert codec.parse_icmp(codec.serialize_icmp(echo)) == echo

    def test_bad_checksum(self):
        raw = bytearray(codec.serialize_icmp(IcmpEcho(8, 1, 1, b"xyz")))
        raw[-1] ^= 1
        with pytest.raises(MalformedError):
            codec.parse_icmp(bytes(raw))

    def test_non_echo_type(self):
        with pytest.raises(MalformedError):
            codec.serialize_icmp(IcmpEcho(3, 0, 0))


class TestBrowser:
    def test_accounting_round_trip(self):
        ann = BrowserAnnouncement("PC-ACCOUNTING", ("docs", "printer"))
        assert codec.parse_browser(codec.serialize_browser(ann)) == ann

    @given(announcements)
    def test_round_trip(self, ann):
        assert codec.parse_browser(codec.serialize_browser(ann)) == ann

    @pytest.mark.parametrize("name", ["", "X" * 16])
    def test_name_bounds(self, name):
        with pytest.raises(SizeError):
            codec.serialize_browser(BrowserAnnouncement(name))

    @given(announcements, st.data())
    def test_truncation_detected(self, ann, data):
        raw = codec.serialize_browser(ann)
        cut = data.draw(st.integers(0, len(raw) - 1))
        with pytest.raises(CodecError):
            codec.parse_browser(raw[:cut])


def test_udp_round_trip():
    raw = codec.serialize_udp(138, 138, b"hello")
    header, body = codec.parse_udp(raw)
    assert (header.src_port, header.dst_port, header.length, body) == (138, 138, 13, b"hello")

