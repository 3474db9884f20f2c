import random
from ipaddress import IPv4Address, IPv4Network

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanoverhttp import codec, frames
from lanoverhttp.codec import BROADCAST_MAC, ArpPacket, EthernetFrame, IcmpEcho
from lanoverhttp.errors import FragmentError, SizeError, TupleMismatch
from lanoverhttp.tunnel import (ForwardingConfig, FragmentBuffer, HeaderProfile,
                                TunnelConnection, advance_sequence, decapsulate, encapsulate,
                                fragment_count, should_forward_lan_to_tunnel,
                                should_forward_server_to_tunnel)

from .oracles import reassemble
from .strategies import inner_frames, macs, u32

CLIENT_MAC = codec.mac("02:00:00:00:01:08")
LAN_GW_MAC = codec.mac("02:00:00:00:00:01")
SERVER_MAC = codec.mac("02:00:00:c3:d4:c9")
SERVER_GW_MAC = codec.mac("02:00:00:c3:d4:01")
CLIENT_IP = IPv4Address("192.168.0.108")
LAN_PUBLIC = IPv4Address("195.174.145.217")
SERVER_IP = IPv4Address("195.212.102.201")
SECOND_IP = IPv4Address("192.168.0.14")
LAN = IPv4Network("192.168.0.0/24")
PORT = 49321


def client_conn(seq=1000, ack=5000):
    return TunnelConnection(HeaderProfile.client_to_server(CLIENT_MAC, LAN_GW_MAC, CLIENT_IP,
                                                           SERVER_IP, PORT), seq, ack)


def server_conn(seq=5000, ack=1000):
    return TunnelConnection(HeaderProfile.server_to_client(SERVER_MAC, SERVER_GW_MAC, SERVER_IP,
                                                           LAN_PUBLIC, PORT), seq, ack)


def receiver_for_client():
    """The server's view of client envelopes (addresses as seen before NAT)."""
    return TunnelConnection(HeaderProfile(SERVER_MAC, SERVER_GW_MAC, SERVER_IP, CLIENT_IP, 80,
                                          PORT), 0, 0)


def receiver_for_server():
    return TunnelConnection(HeaderProfile(CLIENT_MAC, LAN_GW_MAC, LAN_PUBLIC, SERVER_IP, PORT,
                                          80), 0, 0)


def arp_request():
    return frames.arp_frame(ArpPacket.request(codec.mac("02:00:00:00:00:0a"),
                                              IPv4Address("192.168.0.10"), SECOND_IP))


def unwrap(outer: EthernetFrame):
    ip = codec.parse_ipv4(outer.payload)
    tcp, data = codec.parse_tcp(ip.payload)
    return ip, tcp, data


class TestClientProfile:
    def test_arp_request_envelope(self):
        inner = arp_request()
        conn = client_conn()
        [outer] = encapsulate(inner, conn, random.Random(1))
        ip, tcp, data = unwrap(outer)
        assert len(codec.serialize_ethernet(outer)) == 96
        assert (outer.dst_mac, outer.src_mac, outer.ethertype) == (LAN_GW_MAC, CLIENT_MAC, 0x0800)
        h = ip.header
        assert (h.version_ihl, h.tos, h.total_length, h.flags_offset, h.ttl, h.protocol) == \
            (0x45, 0, 82, 0x4000, 0x80, 6)
        assert ip.checksum_ok
        assert (h.src, h.dst) == (CLIENT_IP, SERVER_IP)
        assert (tcp.src_port, tcp.dst_port) == (PORT, 80)
        assert (tcp.seq, tcp.ack) == (1000, 5000)
        assert (tcp.offset_resv_flags, tcp.window, tcp.checksum, tcp.urgent) == \
            (0x5018, 0, 0x06D8, 0)
        assert data == inner
        assert conn.seq_local == 1042

    def test_ident_comes_from_rng(self):
        a = encapsulate(arp_request(), client_conn(), random.Random(7))
        b = encapsulate(arp_request(), client_conn(), random.Random(7))
        assert a == b
        expected = random.Random(7).getrandbits(16)
        assert unwrap(a[0])[0].header.ident == expected


class TestServerProfile:
    def test_addresses(self):
        req = ArpPacket.request(codec.mac("02:00:00:00:00:0a"), IPv4Address("192.168.0.10"),
                                SECOND_IP)
        reply = frames.arp_frame(req.reply_from(SERVER_MAC))
        [outer] = encapsulate(reply, server_conn(), random.Random(1))
        ip, tcp, _ = unwrap(outer)
        assert (outer.dst_mac, outer.src_mac) == (SERVER_GW_MAC, SERVER_MAC)
        assert (ip.header.src, ip.header.dst) == (SERVER_IP, LAN_PUBLIC)
        assert (tcp.src_port, tcp.dst_port) == (80, PORT)
        assert tcp.checksum == 0x06D8


class TestFragmentation:
    @pytest.mark.parametrize("n,count", [(1, 1), (1459, 1), (1460, 1), (1461, 2), (1500, 2),
                                         (1514, 2)])
    def test_counts(self, n, count):
        out = encapsulate(bytes(n), client_conn(), random.Random(0))
        assert len(out) == fragment_count(n) == count

    def test_1514_split(self):
        conn = client_conn(seq=0)
        first, second = encapsulate(bytes(range(256)) * 5 + bytes(234), conn, random.Random(0))
        (_, t1, d1), (_, t2, d2) = unwrap(first), unwrap(second)
        assert (len(d1), t1.window, len(d2), t2.window) == (1460, 1, 54, 0)
        assert t2.seq == t1.seq + 1460
        assert conn.seq_local == 1514

    def test_oversize(self):
        with pytest.raises(SizeError):
            encapsulate(bytes(1515), client_conn(), random.Random(0))

    def test_empty(self):
        with pytest.raises(SizeError):
            encapsulate(b"", client_conn(), random.Random(0))

    def test_reassembly_states(self):
        inner = bytes(1514)
        rx, buf = receiver_for_client(), FragmentBuffer()
        first, second = encapsulate(inner, client_conn(), random.Random(0))
        assert decapsulate(first, rx, buf) is None
        assert buf.pending is not None
        assert decapsulate(second, rx, buf) == inner
        assert buf.pending is None

    def test_window_out_of_range(self):
        [outer] = encapsulate(b"x" * 10, client_conn(), random.Random(0))
        ip, tcp, data = unwrap(outer)
        bad = codec.serialize_tcp(codec.TcpHeader(tcp.src_port, tcp.dst_port, tcp.seq, tcp.ack,
                                                  tcp.offset_resv_flags, 2, tcp.checksum), data)
        ipb = codec.serialize_ipv4(codec.seal_ipv4(ip.header, bad), bad)
        with pytest.raises(FragmentError):
            decapsulate(EthernetFrame(outer.dst_mac, outer.src_mac, 0x0800, ipb),
                        receiver_for_client(), FragmentBuffer())

    def test_second_first_fragment(self):
        rx, buf = receiver_for_client(), FragmentBuffer()
        conn = client_conn()
        first, _ = encapsulate(bytes(1500), conn, random.Random(0))
        decapsulate(first, rx, buf)
        with pytest.raises(FragmentError):
            decapsulate(first, rx, buf)


class TestRoundTrip:
    @given(inner_frames, u32, u32)
    def test_client_to_server(self, inner, seq, ack):
        out = encapsulate(inner, client_conn(seq, ack), random.Random(0))
        assert all(len(codec.serialize_ethernet(f)) <= 1514 for f in out)
        rx, buf = receiver_for_client(), FragmentBuffer()
        results = [decapsulate(f, rx, buf) for f in out]
        assert results[-1] == inner and all(r is None for r in results[:-1])

    @given(inner_frames, u32, u32)
    def test_server_to_client(self, inner, seq, ack):
        out = encapsulate(inner, server_conn(seq, ack), random.Random(0))
        rx, buf = receiver_for_server(), FragmentBuffer()
        assert [decapsulate(f, rx, buf) for f in out][-1] == inner

    @given(st.lists(inner_frames, min_size=1, max_size=6))
    def test_stream_matches_reassembly_oracle(self, inners):
        conn = client_conn(seq=2**32 - 700)
        outers = [f for x in inners for f in encapsulate(x, conn, random.Random(0))]
        pieces = [(unwrap(f)[2], unwrap(f)[1].window == 1) for f in outers]
        assert reassemble(pieces) == inners

    @given(st.lists(inner_frames, min_size=1, max_size=6), u32)
    def test_seq_continuity(self, inners, start):
        conn = client_conn(seq=start)
        outers = [f for x in inners for f in encapsulate(x, conn, random.Random(0))]
        expected = start
        for f in outers:
            _, tcp, data = unwrap(f)
            assert tcp.seq == expected
            expected = (expected + len(data)) % 2**32
        assert conn.seq_local == expected

    @given(inner_frames)
    def test_ack_tracks_peer(self, inner):
        tx = client_conn(seq=123)
        rx, buf = receiver_for_client(), FragmentBuffer()
        out = encapsulate(inner, tx, random.Random(0))
        for f in out:
            decapsulate(f, rx, buf)
        _, last, data = unwrap(out[-1])
        assert rx.last_peer_seq == last.seq
        assert rx.last_peer_payload_len == len(data)
        assert rx.ack_local == (last.seq + len(data)) % 2**32 == tx.seq_local


def test_tuple_mismatch():
    [outer] = encapsulate(b"x" * 42, client_conn(), random.Random(0))
    wrong = TunnelConnection(HeaderProfile(SERVER_MAC, SERVER_GW_MAC, SERVER_IP, CLIENT_IP, 80,
                                           PORT + 1), 0, 0)
    with pytest.raises(TupleMismatch):
        decapsulate(outer, wrong, FragmentBuffer())


class TestAdvance:
    def test_plain(self):
        assert advance_sequence(client_conn(seq=1000), 82).seq_local == 1082

    def test_zero(self):
        assert advance_sequence(client_conn(seq=1000), 0).seq_local == 1000

    def test_wraps(self):
        assert advance_sequence(client_conn(seq=2**32 - 1), 2).seq_local == 1

    def test_negative(self):
        with pytest.raises(ValueError):
            advance_sequence(client_conn(), -1)


def fwd(envelope=None):
    return ForwardingConfig(SECOND_IP, SERVER_MAC, CLIENT_MAC, LAN, envelope)


class TestForwarding:
    def test_lan_broadcast_forwarded(self):
        assert should_forward_lan_to_tunnel(codec.parse_ethernet(arp_request()), fwd())

    def test_server_sourced_broadcast_not_returned(self):
        frame = codec.parse_ethernet(frames.arp_frame(ArpPacket.request(
            SERVER_MAC, SECOND_IP, IPv4Address("192.168.0.10"))))
        assert not should_forward_lan_to_tunnel(frame, fwd())

    def test_unicast_between_hosts(self):
        frame = codec.parse_ethernet(frames.icmp_frame(
            codec.mac("02:00:00:00:00:0a"), codec.mac("02:00:00:00:00:14"),
            IPv4Address("192.168.0.10"), IPv4Address("192.168.0.20"), IcmpEcho(8, 1, 1)))
        assert not should_forward_lan_to_tunnel(frame, fwd())

    def test_unicast_to_server_mac(self):
        frame = codec.parse_ethernet(frames.icmp_frame(
            codec.mac("02:00:00:00:00:0a"), SERVER_MAC, IPv4Address("192.168.0.10"), SECOND_IP,
            IcmpEcho(8, 1, 1)))
        assert should_forward_lan_to_tunnel(frame, fwd())

    def test_own_envelope_not_reforwarded(self):
        conn = client_conn()
        [outer] = encapsulate(arp_request(), conn, random.Random(0))
        assert not should_forward_lan_to_tunnel(outer, fwd(conn.profile))

    def test_server_arp_reply_forwarded(self):
        req = ArpPacket.request(codec.mac("02:00:00:00:00:0a"), IPv4Address("192.168.0.10"),
                                SECOND_IP)
        reply = codec.parse_ethernet(frames.arp_frame(req.reply_from(SERVER_MAC)))
        assert should_forward_server_to_tunnel(reply, fwd())

    def test_tunnelled_broadcast_not_returned(self):
        frame = codec.parse_ethernet(arp_request())
        assert not should_forward_server_to_tunnel(frame, fwd())

    def test_server_internet_traffic_not_tunnelled(self):
        frame = codec.parse_ethernet(frames.icmp_frame(
            SERVER_MAC, SERVER_GW_MAC, SERVER_IP, IPv4Address("8.8.8.8"), IcmpEcho(8, 1, 1)))
        assert not should_forward_server_to_tunnel(frame, fwd())

    @given(macs, st.sampled_from([SERVER_MAC, CLIENT_MAC, BROADCAST_MAC]), st.binary(max_size=80),
           st.sampled_from([0x0800, 0x0806]))
    def test_predicates_exclusive(self, src, dst, payload, ethertype):
        for s in (src, SERVER_MAC):
            frame = EthernetFrame(dst, s, ethertype, payload)
            assert not (should_forward_lan_to_tunnel(frame, fwd())
                        and should_forward_server_to_tunnel(frame, fwd()))
