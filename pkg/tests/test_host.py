from ipaddress import IPv4Address, IPv4Network

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanoverhttp import codec, frames
from lanoverhttp.codec import ArpOp, ArpPacket, BrowserAnnouncement, IcmpEcho
from lanoverhttp.sim import HostNode, HostStack, Simulator, host_handle_frame
from lanoverhttp.sim.host import Pinger, ping_payload
from lanoverhttp.sim.network import LanSegment

NET = IPv4Network("192.168.0.0/24")
ME = IPv4Address("192.168.0.10")
PEER = IPv4Address("192.168.0.20")
ME_MAC = codec.mac("02:00:00:00:00:0a")
PEER_MAC = codec.mac("02:00:00:00:00:14")


def stack(**kw):
    return HostStack(ME_MAC, ME, NET, "PC-ACCOUNTING", ("docs", "printer"), 1000, **kw)


def parse(data):
    return codec.parse_ethernet(data)


class TestHandleFrame:
    def test_arp_request_for_me(self):
        s = stack()
        req = frames.arp_frame(ArpPacket.request(PEER_MAC, PEER, ME))
        [out] = host_handle_frame(s, req)
        arp = codec.parse_arp(parse(out).payload)
        assert (arp.op, arp.sender_mac, arp.sender_ip, arp.target_mac) == \
            (ArpOp.REPLY, ME_MAC, ME, PEER_MAC)
        assert parse(out).dst_mac == PEER_MAC
        assert s.arp_cache[PEER] == PEER_MAC

    def test_arp_for_someone_else(self):
        req = frames.arp_frame(ArpPacket.request(PEER_MAC, PEER, IPv4Address("192.168.0.99")))
        assert host_handle_frame(stack(), req) == []

    def test_echo_mirrored(self):
        req = frames.icmp_frame(PEER_MAC, ME_MAC, PEER, ME, IcmpEcho(8, 7, 1, b"abc"))
        [out] = host_handle_frame(stack(), req)
        ip = codec.parse_ipv4(parse(out).payload)
        echo = codec.parse_icmp(ip.payload)
        assert (echo.kind, echo.ident, echo.seqno, echo.payload) == (0, 7, 1, b"abc")
        assert (ip.header.src, ip.header.dst) == (ME, PEER)

    def test_echo_reply_recorded(self):
        s = stack()
        rep = frames.icmp_frame(PEER_MAC, ME_MAC, PEER, ME, IcmpEcho(0, 1, 2, b""))
        assert host_handle_frame(s, rep, now=9) == []
        assert s.echo_replies[0][:2] == (9, PEER)

    def test_announcement_absorbed(self):
        s = stack()
        ann = frames.announcement_frame(PEER_MAC, PEER, NET.broadcast_address,
                                        BrowserAnnouncement("PC-HR", ("payroll",)))
        host_handle_frame(s, ann, now=4)
        assert s.browse_list == {"PC-HR": (("payroll",), 4)}

    def test_frame_for_other_mac_ignored(self):
        req = frames.icmp_frame(PEER_MAC, codec.mac("02:00:00:00:00:99"), PEER, ME,
                                IcmpEcho(8, 7, 1))
        assert host_handle_frame(stack(), req) == []

    @given(st.binary(max_size=120))
    def test_garbage_never_raises(self, data):
        out = host_handle_frame(stack(), data)
        assert all(isinstance(f, bytes) for f in out)


def test_ping_payload_filler():
    assert ping_payload(32) == b"abcdefghijklmnopqrstuvwabcdefghi"


def lan_with(*stacks):
    sim = Simulator()
    lan = LanSegment(sim)
    nodes = [HostNode(sim, s) for s in stacks]
    for n in nodes:
        lan.attach(n)
    return sim, nodes


class TestPinger:
    def test_ping_existing_host(self):
        peer = HostStack(PEER_MAC, PEER, NET, "PC-HR")
        sim, (me, _) = lan_with(stack(), peer)
        p = me.ping(PEER, at=0, count=4)
        sim.run()
        assert p.status == "done" and p.answered == 4
        assert me.stack.arp_cache[PEER] == PEER_MAC

    def test_arp_timeout(self):
        sim, (me,) = lan_with(stack())
        p = me.ping(IPv4Address("192.168.0.14"), at=0, arp_timeout=50)
        sim.run()
        assert (p.status, p.failure, p.records) == ("failed", "arp_timeout", [])

    def test_off_link_rejected(self):
        with pytest.raises(ValueError):
            Pinger(stack(), IPv4Address("8.8.8.8"), lambda d: None, lambda *a: None)

    def test_announcements_reach_peer(self):
        peer = HostStack(PEER_MAC, PEER, NET, "PC-HR", announce_period=100)
        me_stack = stack()
        me_stack.announce_period = 100
        sim, (me, other) = lan_with(me_stack, peer)
        me.start_announcing(0, until=350)
        sim.run(until=1000)
        assert other.stack.browse_list["PC-ACCOUNTING"][0] == ("docs", "printer")
        sent = [e for e in sim.trace if e.src_node == me.name]
        assert len(sent) == 4
