import struct
from ipaddress import IPv4Address

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanoverhttp import codec
from lanoverhttp.sim import FrameTag, Location, SimClock, SimEvent, Simulator, Trace
from lanoverhttp.sim.network import INTERNET_MAC, Internet, InternetHost, LanSegment
from lanoverhttp.sim.pcap import pcap_bytes, read_pcap, tick_timestamp, write_pcap


class TestClock:
    def test_time_then_insertion_order(self):
        clock, seen = SimClock(), []
        clock.schedule(5, seen.append, "b")
        clock.schedule(1, seen.append, "a")
        clock.schedule(5, seen.append, "c")
        clock.run()
        assert seen == ["a", "b", "c"]
        assert clock.current_time == 5

    def test_until_stops_and_keeps_later_events(self):
        clock, seen = SimClock(), []
        clock.schedule(3, seen.append, 3)
        clock.schedule(10, seen.append, 10)
        clock.run(until=5)
        assert seen == [3] and clock.pending() == 1 and clock.current_time == 5

    def test_no_past(self):
        with pytest.raises(ValueError):
            SimClock().schedule(-1, print)

    @given(st.lists(st.integers(0, 50), max_size=30))
    def test_dispatch_is_sorted_and_stable(self, delays):
        clock, seen = SimClock(), []
        for i, d in enumerate(delays):
            clock.schedule(d, lambda i=i, d=d: seen.append((d, i)))
        clock.run()
        assert seen == sorted(seen)


def event(time=3, reason=None, inner=None):
    frame = codec.serialize_ethernet(codec.EthernetFrame(
        codec.BROADCAST_MAC, codec.mac("02:00:00:00:00:0a"), 0x0806,
        codec.serialize_arp(codec.ArpPacket.request(codec.mac("02:00:00:00:00:0a"),
                                                    IPv4Address("192.168.0.10"),
                                                    IPv4Address("192.168.0.14")))))
    return SimEvent(time, Location.LAN_SEGMENT, frame, "PC-ACCOUNTING", "client", 7, inner,
                    reason)


class TestTrace:
    def test_line_format(self):
        line = event().line()
        assert line.startswith("3 lan_segment delivered 02:00:00:00:00:0a->ff:ff:ff:ff:ff:ff ARP")
        assert "who-has 192.168.0.14 tell 192.168.0.10" in line

    @pytest.mark.parametrize("reason,inner", [(None, None), ("seq_mismatch", 4)])
    def test_line_round_trip(self, reason, inner):
        e = event(reason=reason, inner=inner)
        assert SimEvent.from_line(e.line()) == e

    def test_append_only_in_order(self):
        t = Trace([event(5)])
        with pytest.raises(ValueError):
            t.append(event(4))

    def test_write_load(self, tmp_path):
        t = Trace([event(1), event(2, "policy")])
        assert Trace.load(t.write(tmp_path / "t.trace")).text() == t.text()

    def test_at_filters(self):
        t = Trace([event(1), event(2, "policy")])
        assert len(t.at(Location.LAN_SEGMENT)) == 1
        assert len(t.at(Location.LAN_SEGMENT, delivered_only=False)) == 2


class TestPcap:
    def test_empty_capture(self, tmp_path):
        path = write_pcap(tmp_path / "e.pcap", [])
        data = path.read_bytes()
        assert len(data) == 24
        assert struct.unpack("<IHHiIII", data) == (0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
        assert read_pcap(path) == []

    def test_records(self, tmp_path):
        recs = [(0, b"a" * 14), (1500, b"b" * 60)]
        got = read_pcap(write_pcap(tmp_path / "r.pcap", recs))
        assert got == [(0.0, b"a" * 14), (1.5, b"b" * 60)]

    def test_tick_is_a_millisecond(self):
        assert tick_timestamp(1234) == (1, 234000)

    def test_big_endian_accepted(self, tmp_path):
        hdr = struct.pack(">IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 1)
        rec = struct.pack(">IIII", 2, 5, 3, 3) + b"xyz"
        (tmp_path / "be.pcap").write_bytes(hdr + rec)
        assert read_pcap(tmp_path / "be.pcap") == [(2.000005, b"xyz")]

    def test_not_pcap(self, tmp_path):
        (tmp_path / "x").write_bytes(b"\0" * 30)
        with pytest.raises(ValueError):
            read_pcap(tmp_path / "x")

    @given(st.lists(st.tuples(st.integers(0, 10**6), st.binary(max_size=100)), max_size=10))
    def test_bytes_deterministic(self, recs):
        assert pcap_bytes(recs) == pcap_bytes(list(recs))


class Sink:
    def __init__(self, name):
        self.name = name
        self.got = []
        self.lan = self.internet = None

    def on_lan_frame(self, data, tag):
        self.got.append((data, tag))

    def on_internet_frame(self, data, tag):
        self.got.append((data, tag))


class TestSegment:
    def test_broadcast_reaches_every_other_port_with_two_hop_latency(self):
        sim = Simulator()
        lan = LanSegment(sim)
        nodes = [Sink(f"n{i}") for i in range(3)]
        for n in nodes:
            lan.attach(n)
        frame = codec.serialize_ethernet(codec.EthernetFrame(codec.BROADCAST_MAC,
                                                             codec.mac("02:00:00:00:00:09"),
                                                             0x0806, bytes(28)))
        lan.send(nodes[0], frame, FrameTag(1))
        sim.run()
        assert [len(n.got) for n in nodes] == [0, 1, 1]
        assert {e.time for e in sim.trace} == {2}
        assert {e.node for e in sim.trace} == {"n1", "n2"}

    def test_latency_validation(self):
        with pytest.raises(ValueError):
            Simulator(latency=0)


class TestInternet:
    def test_routes_and_reframes(self):
        sim = Simulator()
        net = Internet(sim)
        a = InternetHost(sim, "a", IPv4Address("1.1.1.1"), codec.mac("02:00:00:00:aa:01"))
        b = Sink("b")
        net.attach(a.ip, a, a.mac)
        net.attach(IPv4Address("2.2.2.2"), b, codec.mac("02:00:00:00:bb:01"))
        a.send_ip(codec.Ipv4Header(a.ip, IPv4Address("2.2.2.2"), 17), b"hi")
        sim.run()
        [(data, _)] = b.got
        eth = codec.parse_ethernet(data)
        assert (eth.dst_mac, eth.src_mac) == (codec.mac("02:00:00:00:bb:01"), INTERNET_MAC)
        assert [e.verdict for e in sim.trace] == ["delivered"]

    def test_no_route(self):
        sim = Simulator()
        net = Internet(sim)
        a = InternetHost(sim, "a", IPv4Address("1.1.1.1"), codec.mac("02:00:00:00:aa:01"))
        net.attach(a.ip, a, a.mac)
        a.send_ip(codec.Ipv4Header(a.ip, IPv4Address("9.9.9.9"), 17), b"")
        sim.run()
        assert [e.reason for e in sim.trace] == ["no_route"]
