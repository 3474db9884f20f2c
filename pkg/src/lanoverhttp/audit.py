"""Trace audits. Everything here is a pure function of (trace, config)."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from ipaddress import IPv4Address
from typing import Callable, Iterable, NamedTuple

from . import codec
from .codec import ArpOp, ArpPacket, BrowserAnnouncement, IcmpEcho, Ipv4Header, TcpHeader
from .config import ScenarioConfig
from .errors import CodecError
from .sim.host import node_name, ping_payload
from .sim.trace import Location, SimEvent, Trace
from .tunnel import DATA_FLAGS, TUNNEL_PORT

C2S = "client->server"
S2C = "server->client"


class Check(NamedTuple):
    name: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class FrameView:
    src_mac: str
    dst_mac: str
    arp: ArpPacket | None = None
    ip: Ipv4Header | None = None
    tcp: TcpHeader | None = None
    payload: bytes = b""
    icmp: IcmpEcho | None = None
    announcement: BrowserAnnouncement | None = None

    @property
    def kind(self) -> str:
        if self.arp:
            return "ARP"
        if self.icmp:
            return "ICMP"
        if self.tcp:
            return "TCP"
        if self.announcement:
            return "BROWSER"
        return "OTHER"


def inspect_frame(data: bytes) -> FrameView:
    try:
        eth = codec.parse_ethernet(data)
    except CodecError:
        return FrameView("?", "?")
    base = dict(src_mac=str(eth.src_mac), dst_mac=str(eth.dst_mac))
    try:
        if eth.ethertype == codec.ETHERTYPE_ARP:
            return FrameView(**base, arp=codec.parse_arp(eth.payload))
        if eth.ethertype != codec.ETHERTYPE_IPV4:
            return FrameView(**base)
        ip = codec.parse_ipv4(eth.payload)
        h = ip.header
        if h.protocol == codec.PROTO_TCP:
            tcp, body = codec.parse_tcp(ip.payload)
            return FrameView(**base, ip=h, tcp=tcp, payload=body)
        if h.protocol == codec.PROTO_ICMP:
            return FrameView(**base, ip=h, icmp=codec.parse_icmp(ip.payload))
        if h.protocol == codec.PROTO_UDP:
            udp, body = codec.parse_udp(ip.payload)
            if udp.dst_port == codec.BROWSER_PORT:
                return FrameView(**base, ip=h, announcement=codec.parse_browser(body))
        return FrameView(**base, ip=h)
    except CodecError:
        return FrameView(**base)


def _views(trace: Iterable[SimEvent]) -> list[tuple[SimEvent, FrameView]]:
    return [(e, inspect_frame(e.frame)) for e in trace]


# --- tunnel envelopes ---------------------------------------------------------


def envelope_direction(view: FrameView, cfg: ScenarioConfig) -> str | None:
    """Direction of a port-80 segment between the two tunnel endpoints, else None."""
    if view.tcp is None:
        return None
    lan_side = (cfg.gateway.public_ip, cfg.client.ip)
    if view.ip.dst == cfg.server.public_ip and view.tcp.dst_port == TUNNEL_PORT \
            and view.ip.src in lan_side:
        return C2S
    if view.ip.src == cfg.server.public_ip and view.tcp.src_port == TUNNEL_PORT \
            and view.ip.dst in lan_side:
        return S2C
    return None


def is_data_envelope(view: FrameView) -> bool:
    return view.tcp is not None and view.tcp.offset_resv_flags == DATA_FLAGS and bool(view.payload)


class Crossing(NamedTuple):
    index: int
    direction: str
    inner: int | None
    fragments: int


def tunnel_crossings(trace: Trace, cfg: ScenarioConfig) -> list[Crossing]:
    """One entry per inner frame carried across the internet (final fragment seen)."""
    out, pieces = [], Counter()
    for i, (e, v) in enumerate(_views(trace)):
        if e.location != Location.INTERNET or not e.delivered or not is_data_envelope(v):
            continue
        d = envelope_direction(v, cfg)
        if d is None:
            continue
        pieces[(d, e.inner_tag)] += 1
        if v.tcp.window == 0:
            out.append(Crossing(i, d, e.inner_tag, pieces.pop((d, e.inner_tag))))
    return out


def loop_violations(trace: Trace, cfg: ScenarioConfig) -> dict[tuple[str, int], int]:
    counts = Counter((c.direction, c.inner) for c in tunnel_crossings(trace, cfg))
    return {k: n for k, n in counts.items() if n > 1}


def drops(trace: Trace) -> Counter:
    return Counter((e.location.value, e.reason) for e in trace if not e.delivered)


def firewall_drops(trace: Trace) -> Counter:
    return Counter(e.reason for e in trace if not e.delivered
                   and e.location in (Location.FIREWALL_OUT, Location.FIREWALL_IN))


def internet_to_lan_deliveries(trace: Trace) -> int:
    return len(trace.at(Location.FIREWALL_IN))


def switch_safety(trace: Trace) -> list[SimEvent]:
    """LAN deliveries that went back to their sender."""
    return [e for e in trace.at(Location.LAN_SEGMENT) if e.node == e.src_node]


# --- ping ---------------------------------------------------------------------


def _pinger_name(cfg: ScenarioConfig, source: IPv4Address) -> str:
    host = cfg.host_by_ip(source)
    return node_name(host.name if host else str(source))


def _is_arp(v: FrameView, op: ArpOp, sender: IPv4Address, target: IPv4Address) -> bool:
    return (v.arp is not None and v.arp.op == op and v.arp.sender_ip == sender
            and v.arp.target_ip == target)


def _is_echo(v: FrameView, kind: int, src: IPv4Address, dst: IPv4Address,
             seqno: int | None = None) -> bool:
    return (v.icmp is not None and v.icmp.kind == kind and v.ip.src == src and v.ip.dst == dst
            and (seqno is None or v.icmp.seqno == seqno))


def pings_answered(trace: Trace, cfg: ScenarioConfig, source: IPv4Address | None = None,
                   target: IPv4Address | None = None, payload_size: int | None = None) -> int:
    """Distinct echo sequence numbers answered to ``source`` with an intact payload.

    A reply counts only if it reaches the pinger within ``cfg.ping_timeout``
    ticks of its request first appearing on the segment.
    """
    source = source or cfg.ping_source
    target = target or cfg.target
    expected = ping_payload(cfg.ping_payload if payload_size is None else payload_size)
    pinger = _pinger_name(cfg, source)
    sent: dict[int, int] = {}
    answered = set()
    for e, v in _views(trace.at(Location.LAN_SEGMENT)):
        if e.src_node == pinger and _is_echo(v, codec.ICMP_ECHO_REQUEST, source, target):
            sent.setdefault(v.icmp.seqno, e.time)
        elif e.node == pinger and _is_echo(v, codec.ICMP_ECHO_REPLY, target, source) \
                and v.icmp.payload == expected and v.icmp.seqno in sent \
                and e.time - sent[v.icmp.seqno] <= cfg.ping_timeout:
            answered.add(v.icmp.seqno)
    return len(answered)


def phantom_pings_answered(trace: Trace, cfg: ScenarioConfig) -> int:
    """Echo replies from ``cfg.ping_source`` that reached the phantom host through the tunnel."""
    expected = ping_payload(cfg.ping_payload)
    seqs = {v.icmp.seqno for e, v in _views(trace.at(Location.SERVER_IF))
            if e.src_node == "tunnel"
            and _is_echo(v, codec.ICMP_ECHO_REPLY, cfg.ping_source, cfg.server.second_ip)
            and v.icmp.payload == expected}
    return len(seqs)


def pinger_view(trace: Trace, cfg: ScenarioConfig) -> list[tuple[str, bytes]]:
    """What the pinging host sends and receives, in order, without timing.

    Tunnel segments the pinger happens to see flooded are left out, and each
    transmitted frame appears once even though the switch may flood it.
    """
    pinger = _pinger_name(cfg, cfg.ping_source)
    out, sent = [], set()
    for e, v in _views(trace.at(Location.LAN_SEGMENT)):
        if envelope_direction(v, cfg) is not None:
            continue
        if e.src_node == pinger and e.tag not in sent:
            sent.add(e.tag)
            out.append(("tx", e.frame))
        elif e.node == pinger:
            out.append(("rx", e.frame))
    return out


def tunnel_ports(trace: Trace, cfg: ScenarioConfig) -> tuple[int | None, int | None]:
    """(client's own port, port the firewall presented publicly) for the tunnel SYN."""
    lan_port = public_port = None
    for e, v in _views(trace):
        if v.tcp is None or not (v.tcp.has(codec.TCP_SYN) and not v.tcp.has(codec.TCP_ACK)):
            continue
        if v.tcp.dst_port != TUNNEL_PORT or v.ip.dst != cfg.server.public_ip:
            continue
        if e.location == Location.LAN_SEGMENT and e.node == "gateway" and v.ip.src == cfg.client.ip:
            lan_port = v.tcp.src_port
        elif e.location == Location.FIREWALL_OUT and e.delivered and lan_port is not None:
            public_port = v.tcp.src_port
    return lan_port, public_port


def arp_timed_out(trace: Trace, cfg: ScenarioConfig) -> Check:
    """The pinger asked for the target's MAC, never heard back, and sent no echo."""
    source, target = cfg.ping_source, cfg.target
    pinger = _pinger_name(cfg, source)
    lan = _views(trace.at(Location.LAN_SEGMENT))
    asked = any(e.src_node == pinger and _is_arp(v, ArpOp.REQUEST, source, target)
                for e, v in lan)
    answered = any(e.node == pinger and _is_arp(v, ArpOp.REPLY, target, source) for e, v in lan)
    echoed = any(e.src_node == pinger and v.icmp is not None for e, v in lan)
    ok = asked and not answered and not echoed
    return Check("ping fails with ARP timeout", ok,
                 f"arp asked={asked} answered={answered} echo sent={echoed}")


def ping_causal_chain(trace: Trace, cfg: ScenarioConfig, count: int | None = None) -> Check:
    """ARP request -> tunnel -> ARP reply -> tunnel -> (echo request -> tunnel ->
    echo reply -> tunnel) x count, each step strictly after the previous one."""
    count = cfg.ping_count if count is None else count
    source, target = cfg.ping_source, cfg.target
    pinger = _pinger_name(cfg, source)
    views = _views(trace)
    crossings = {(c.direction, c.inner): c.index for c in tunnel_crossings(trace, cfg)}
    pos = -1

    def find(pred: Callable[[SimEvent, FrameView], bool]) -> SimEvent | None:
        nonlocal pos
        for i in range(pos + 1, len(views)):
            if pred(*views[i]):
                pos = i
                return views[i][0]
        return None

    def cross(direction: str, tag: int) -> bool:
        nonlocal pos
        i = crossings.get((direction, tag))
        if i is None or i <= pos:
            return False
        pos = i
        return True

    def exchange(label, is_request, is_reply) -> str | None:
        req = find(lambda e, v: e.location == Location.LAN_SEGMENT and e.node == "client"
                   and e.delivered and is_request(v))
        if req is None:
            return f"{label}: request never reached the client"
        if not cross(C2S, req.tag):
            return f"{label}: request did not cross the tunnel"
        if find(lambda e, v: e.location == Location.SERVER_IF and e.src_node == "tunnel"
                and e.tag == req.tag) is None:
            return f"{label}: request not delivered to the server interface"
        rep = find(lambda e, v: e.location == Location.SERVER_IF and e.src_node == "stack"
                   and is_reply(v))
        if rep is None:
            return f"{label}: phantom host did not reply"
        if not cross(S2C, rep.tag):
            return f"{label}: reply did not cross the tunnel"
        if find(lambda e, v: e.location == Location.LAN_SEGMENT and e.node == pinger
                and e.tag == rep.tag) is None:
            return f"{label}: reply never reached {pinger}"
        return None

    problem = exchange("ARP",
                       lambda v: _is_arp(v, ArpOp.REQUEST, source, target),
                       lambda v: _is_arp(v, ArpOp.REPLY, target, source))
    for seq in range(1, count + 1):
        if problem:
            break
        problem = exchange(f"echo {seq}",
                           lambda v, s=seq: _is_echo(v, codec.ICMP_ECHO_REQUEST, source, target, s),
                           lambda v, s=seq: _is_echo(v, codec.ICMP_ECHO_REPLY, target, source, s))
    return Check("ping causal chain", problem is None, problem or f"ARP + {count} echoes")


# --- capture pattern at the server ------------------------------------------------


def server_if_pattern(trace: Trace, cfg: ScenarioConfig) -> list[tuple[str, SimEvent, FrameView]]:
    """Server-interface events labelled HTTP (tunnel data) or by inner protocol."""
    rows = []
    for e, v in _views(trace.at(Location.SERVER_IF)):
        if envelope_direction(v, cfg) is not None:
            if is_data_envelope(v):
                rows.append(("HTTP", e, v))
        elif e.src_node in ("tunnel", "stack"):
            rows.append((v.kind, e, v))
    return rows


def envelope_adjacency(trace: Trace, cfg: ScenarioConfig) -> Check:
    """Every inner ARP/ICMP event at the server sits next to the port-80 envelope carrying it."""
    rows = server_if_pattern(trace, cfg)
    problems = []
    inner_events = 0
    for i, (label, e, v) in enumerate(rows):
        if label not in ("ARP", "ICMP"):
            continue
        inner_events += 1
        if e.src_node == "tunnel":
            prev = rows[i - 1] if i else None
            if not (prev and prev[0] == "HTTP" and prev[2].tcp.window == 0
                    and prev[1].inner_tag == e.tag and prev[1].src_node == "internet"):
                problems.append(f"t={e.time} received {label} not preceded by its envelope")
        else:
            nxt = rows[i + 1] if i + 1 < len(rows) else None
            if not (nxt and nxt[0] == "HTTP" and nxt[1].inner_tag == e.tag
                    and nxt[1].src_node == "server"):
                problems.append(f"t={e.time} sent {label} not followed by its envelope")
    ok = inner_events > 0 and not problems
    detail = "; ".join(problems[:3]) or f"{inner_events} inner events, pattern " + \
        " ".join(r[0] for r in rows[:8]) + (" ..." if len(rows) > 8 else "")
    return Check("server capture pattern", ok, detail)


# --- firewall and session -------------------------------------------------------------


def nat_soundness(trace: Trace) -> Check:
    """Every inbound delivery matches exactly one earlier outbound SYN."""
    syns: list[tuple[int, tuple]] = []
    problems = 0
    for i, (e, v) in enumerate(_views(trace)):
        if v.tcp is None or not e.delivered:
            continue
        if e.location == Location.FIREWALL_OUT and v.tcp.has(codec.TCP_SYN) \
                and not v.tcp.has(codec.TCP_ACK):
            syns.append((i, (v.ip.src, v.tcp.src_port, v.ip.dst, v.tcp.dst_port)))
        elif e.location == Location.FIREWALL_IN:
            key = (v.ip.dst, v.tcp.dst_port, v.ip.src, v.tcp.src_port)
            matches = {k for j, k in syns if j < i and k == key}
            if len(matches) != 1:
                problems += 1
    return Check("NAT soundness", problems == 0, f"{problems} unmatched inbound deliveries")


def phase_discipline(trace: Trace, cfg: ScenarioConfig) -> Check:
    """No data envelope crosses the internet before the handshake's final ACK."""
    synack_seen = handshake_done = False
    early = 0
    for e, v in _views(trace.at(Location.INTERNET)):
        d = envelope_direction(v, cfg)
        if d is None:
            continue
        t = v.tcp
        if d == S2C and t.has(codec.TCP_SYN) and t.has(codec.TCP_ACK):
            synack_seen = True
        elif d == C2S and synack_seen and t.flags == codec.TCP_ACK and not v.payload:
            handshake_done = True
        elif is_data_envelope(v) and not handshake_done:
            early += 1
    return Check("phase discipline", handshake_done and early == 0,
                 f"handshake complete={handshake_done}, early data packets={early}")


def tunnel_five_tuples(trace: Trace, cfg: ScenarioConfig) -> set[tuple]:
    tuples = set()
    for e, v in _views(trace.at(Location.INTERNET)):
        d = envelope_direction(v, cfg)
        if d == C2S:
            tuples.add((v.ip.src, v.tcp.src_port, v.ip.dst, v.tcp.dst_port))
        elif d == S2C:
            tuples.add((v.ip.dst, v.tcp.dst_port, v.ip.src, v.tcp.src_port))
    return tuples


def single_session(trace: Trace, cfg: ScenarioConfig) -> Check:
    tuples = tunnel_five_tuples(trace, cfg)
    return Check("single TCP 5-tuple", len(tuples) == 1,
                 ", ".join(f"{a}:{b}>{c}:{d}" for a, b, c, d in sorted(tuples, key=str)))


# --- browsing -------------------------------------------------------------------


def neighborhood_from_trace(trace: Trace, until: int | None = None) -> dict[str, tuple[str, ...]]:
    """The attacker's listing as reconstructed from announcements reaching the server."""
    listing = {}
    for e, v in _views(trace.at(Location.SERVER_IF)):
        if until is not None and e.time > until:
            break
        if e.src_node == "tunnel" and v.announcement is not None:
            listing[v.announcement.host_name] = v.announcement.shares
    return listing


def announcement_liveness(trace: Trace, cfg: ScenarioConfig, start: int, period: int) -> Check:
    """Within the first period every host's announcement reaches every other LAN port."""
    ports = {node_name(h.name) for h in cfg.hosts} | {"client", "gateway"}
    reached: dict[str, set[str]] = {node_name(h.name): set() for h in cfg.hosts}
    for e, v in _views(trace.at(Location.LAN_SEGMENT)):
        if e.time > start + period:
            break
        if v.announcement is not None and e.src_node in reached:
            reached[e.src_node].add(e.node)
    missing = [f"{h}->{sorted(ports - {h} - got)}" for h, got in reached.items()
               if ports - {h} - got]
    return Check("announcement liveness", not missing, "; ".join(missing) or "all ports reached")


# --- summary ---------------------------------------------------------------------


def common_metrics(trace: Trace, cfg: ScenarioConfig) -> dict:
    crossings = tunnel_crossings(trace, cfg)
    return {
        "events": len(trace),
        "tunnel_crossings": len(crossings),
        "crossings_client_to_server": sum(c.direction == C2S for c in crossings),
        "crossings_server_to_client": sum(c.direction == S2C for c in crossings),
        "drops": {f"{loc}:{reason}": n for (loc, reason), n in sorted(drops(trace).items())},
        "internet_to_lan_deliveries": internet_to_lan_deliveries(trace),
        "pings_answered": pings_answered(trace, cfg),
        "hosts_discovered": len(neighborhood_from_trace(trace)),
    }
