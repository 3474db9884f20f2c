"""Topology construction and the registered scenarios.

A scenario has four parts: ``prepare`` adjusts the config, ``build`` wires the
topology and schedules its actions, ``duration`` bounds the run, and
``audit`` turns the finished trace into checks. Verdicts come only from
``audit``, so a saved trace can be re-judged later with ``audit_trace``.
"""

from __future__ import annotations

import copy
import json
import random
from dataclasses import dataclass, field
from ipaddress import IPv4Address
from pathlib import Path
from typing import Callable

from . import audit, codec
from .audit import Check
from .codec import MacAddress
from .config import ScenarioConfig, validate_config, with_overrides
from .endpoints import ClientAgent, ClientNode, ServerAgent, ServerNode, native_segment
from .errors import ConfigError
from .sim.firewall import GatewayNode, StatefulFirewall
from .sim.host import HostNode, HostStack, Pinger
from .sim.network import INTERNET_MAC, Internet, InternetHost, LanSegment, Simulator
from .sim.pcap import write_pcap
from .sim.trace import Location, Trace
from .tunnel import DATA_FLAGS, MAX_FRAGMENT, TUNNEL_PORT, ForwardingConfig, encapsulate

ROGUE_IP = IPv4Address("203.0.113.66")
ROGUE_MAC = MacAddress.parse("02:00:00:cb:00:42")
FORBIDDEN_PORT = 6667
FORGED_MARKER = b"FORGED-BY-A-THIRD-PARTY"


def child_rng(seed: int, name: str) -> random.Random:
    return random.Random(f"{seed}/{name}")


@dataclass
class Topology:
    cfg: ScenarioConfig
    sim: Simulator
    lan: LanSegment
    internet: Internet
    gateway: GatewayNode
    hosts: dict[IPv4Address, HostNode]
    client: ClientNode | None
    server: ServerNode | None
    rogue: InternetHost
    pingers: list[Pinger] = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    @property
    def trace(self) -> Trace:
        return self.sim.trace

    def host(self, ip: IPv4Address) -> HostNode:
        return self.hosts[ip]

    def tunnel_entry(self):
        """The firewall's NAT entry for the tunnel session, if any."""
        cfg = self.cfg
        return next((e for e in self.gateway.firewall.entries
                     if e.lan_ip == cfg.client.ip and e.peer_ip == cfg.server.public_ip
                     and e.peer_port == TUNNEL_PORT), None)


def build_topology(cfg: ScenarioConfig, *, client: bool = True, server: bool = True,
                   genuine_phantom: bool = False) -> Topology:
    """Wire the LAN, gateway, internet, server and rogue host described by ``cfg``.

    Port order on the switch: gateway, client, then hosts in config order.
    With ``genuine_phantom`` a real LAN host takes the server's second IP and MAC.
    """
    sim = Simulator(cfg.latency)
    lan = LanSegment(sim)
    internet = Internet(sim)
    max_fragment = min(MAX_FRAGMENT, cfg.mtu - 40)

    fw = StatefulFirewall(cfg.gateway.mac, cfg.gateway.wan_mac, INTERNET_MAC,
                          cfg.gateway.public_ip, cfg.lan_prefix, cfg.allowed_outbound_ports,
                          cfg.seq_window)
    gateway = GatewayNode(sim, fw)
    lan.attach(gateway)
    internet.attach(cfg.gateway.public_ip, gateway, cfg.gateway.wan_mac)

    client_node = None
    if client:
        forwarding = ForwardingConfig(cfg.server.second_ip, cfg.server.mac, cfg.client.mac,
                                      cfg.lan_prefix)
        agent = ClientAgent(cfg.client.ip, cfg.client.mac, cfg.gateway.mac, cfg.server.public_ip,
                            forwarding, child_rng(cfg.seed, "client"), cfg.isn_bits,
                            max_fragment, cfg.client.port)
        client_node = ClientNode(sim, agent, cfg.connect_timeout)
        lan.attach(client_node)

    hosts: dict[IPv4Address, HostNode] = {}
    for spec in cfg.hosts:
        stack = HostStack(spec.mac, spec.ip, cfg.lan_prefix, spec.name, spec.shares,
                          cfg.announce_period)
        hosts[spec.ip] = HostNode(sim, stack, spec.name)
        lan.attach(hosts[spec.ip])
    if genuine_phantom:
        stack = HostStack(cfg.server.mac, cfg.server.second_ip, cfg.lan_prefix)
        hosts[cfg.server.second_ip] = HostNode(sim, stack, "phantom-reference")
        lan.attach(hosts[cfg.server.second_ip])

    server_node = None
    if server:
        agent = ServerAgent(cfg.server.public_ip, cfg.server.mac, cfg.server.gateway_mac,
                            cfg.server.second_ip, cfg.lan_prefix, child_rng(cfg.seed, "server"),
                            max_fragment)
        server_node = ServerNode(sim, agent)
        internet.attach(cfg.server.public_ip, server_node, cfg.server.mac, cfg.server.gateway_mac)

    rogue = InternetHost(sim, "rogue", ROGUE_IP, ROGUE_MAC)
    internet.attach(ROGUE_IP, rogue, ROGUE_MAC)
    return Topology(cfg, sim, lan, internet, gateway, hosts, client_node, server_node, rogue)


def _schedule_ping(topo: Topology, at: int, target: IPv4Address | None = None) -> Pinger:
    cfg = topo.cfg
    pinger = topo.host(cfg.ping_source).ping(
        target or cfg.target, at=at, count=cfg.ping_count, payload_size=cfg.ping_payload,
        interval=cfg.ping_interval, timeout=cfg.ping_timeout, arp_timeout=cfg.arp_timeout)
    topo.pingers.append(pinger)
    return pinger


def _ping_span(cfg: ScenarioConfig) -> int:
    return cfg.arp_timeout + cfg.ping_count * cfg.ping_interval + cfg.ping_timeout + 100


def _ping_checks(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    answered = audit.pings_answered(trace, cfg)
    fw_drops = audit.firewall_drops(trace)
    crossings = len(audit.tunnel_crossings(trace, cfg))
    return [
        Check("echo replies", answered == cfg.ping_count, f"{answered}/{cfg.ping_count}"),
        audit.ping_causal_chain(trace, cfg),
        Check("tunnel crossings", crossings == 2 + 2 * cfg.ping_count,
              f"{crossings}, expected {2 + 2 * cfg.ping_count}"),
        Check("no firewall drops", not fw_drops, str(dict(fw_drops)) or "none"),
        audit.envelope_adjacency(trace, cfg),
        audit.phase_discipline(trace, cfg),
        audit.single_session(trace, cfg),
        audit.nat_soundness(trace),
    ]


def _loop_check(trace: Trace, cfg: ScenarioConfig) -> Check:
    loops = audit.loop_violations(trace, cfg)
    return Check("loop freedom", not loops, f"{len(loops)} inner frames crossed twice")


def _switch_check(trace: Trace) -> Check:
    bad = audit.switch_safety(trace)
    return Check("switch safety", not bad, f"{len(bad)} frames returned to ingress")


# --- ping -----------------------------------------------------------------------------


def _build_ping(topo: Topology) -> None:
    topo.client.start(0)
    _schedule_ping(topo, topo.cfg.ping_start)


def _audit_ping(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    return _ping_checks(trace, cfg) + [_loop_check(trace, cfg), _switch_check(trace)]


# --- frag -----------------------------------------------------------------------------


def _prepare_frag(cfg: ScenarioConfig) -> ScenarioConfig:
    # the largest echo that still fits one Ethernet frame: 1514 bytes on the wire
    return with_overrides(cfg, ping_payload=cfg.mtu - 28)


def _audit_frag(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    icmp_frame_len = 14 + 20 + 8 + cfg.ping_payload
    expected = 2 if icmp_frame_len > min(MAX_FRAGMENT, cfg.mtu - 40) else 1
    sizes = {}
    for e in trace.at(Location.LAN_SEGMENT):
        if len(e.frame) == icmp_frame_len:
            sizes[e.tag] = True
    split = [c.fragments for c in audit.tunnel_crossings(trace, cfg) if c.inner in sizes]
    ok = len(split) == 2 * cfg.ping_count and all(n == expected for n in split)
    return _ping_checks(trace, cfg) + [
        Check("echo frames fragmented", ok,
              f"{len(split)} echo crossings, fragments per crossing {sorted(set(split))}, "
              f"expected {expected}"),
        _loop_check(trace, cfg),
    ]


# --- browse ---------------------------------------------------------------------------


def _build_browse(topo: Topology) -> None:
    cfg = topo.cfg
    topo.client.start(0)
    n = len(topo.hosts)
    end = cfg.browse_start + cfg.browse_periods * cfg.announce_period
    for i, node in enumerate(topo.hosts.values()):
        node.start_announcing(cfg.browse_start + i * cfg.announce_period // (n + 1), until=end)
    snapshot_at = cfg.browse_start + cfg.announce_period
    topo.sim.at(snapshot_at, lambda: topo.extras.__setitem__(
        "listing_after_one_period", dict(topo.server.agent.neighborhood.hosts())))


def _audit_browse(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    period_end = cfg.browse_start + cfg.announce_period
    listing = audit.neighborhood_from_trace(trace, until=period_end)
    expected = {h.name: tuple(h.shares) for h in cfg.hosts}
    return [
        Check("neighborhood after one period", listing == expected,
              f"{len(listing)}/{len(expected)} hosts" + ("" if listing == expected
                                                         else f", got {sorted(listing)}")),
        audit.announcement_liveness(trace, cfg, cfg.browse_start, cfg.announce_period),
        _loop_check(trace, cfg),
        _switch_check(trace),
        audit.phase_discipline(trace, cfg),
        audit.single_session(trace, cfg),
        audit.nat_soundness(trace),
    ]


# --- firewall-negative ------------------------------------------------------------------


def _forged_segment(src_ip, dst_ip, src_port, dst_port, seq, ack, flags, payload=b""):
    tcp = codec.TcpHeader(src_port, dst_port, seq, ack, codec.tcp_flags_field(flags), 0,
                          0x06D8, 0)
    segment = codec.serialize_tcp(tcp, payload)
    return codec.Ipv4Header(src_ip, dst_ip, codec.PROTO_TCP), segment


def _build_firewall_negative(topo: Topology) -> None:
    cfg = topo.cfg
    sim, rogue = topo.sim, topo.rogue
    t0 = cfg.ping_start
    topo.client.start(0)

    def tunnel_port() -> int:
        entry = topo.tunnel_entry()
        return entry.public_port if entry else TUNNEL_PORT

    def unsolicited():
        # an unrelated host aims at the tunnel's public port and at port 80
        for dport, flags in ((tunnel_port(), codec.TCP_PSH | codec.TCP_ACK),
                             (TUNNEL_PORT, codec.TCP_SYN)):
            rogue.send_ip(*_forged_segment(ROGUE_IP, cfg.gateway.public_ip, TUNNEL_PORT, dport,
                                           1, 0, flags, FORGED_MARKER))

    def spoofed_inbound():
        # correct 5-tuple, SEQ half the sequence space away from what the firewall expects
        conn = topo.server.agent.connection
        rogue.send_ip(*_forged_segment(cfg.server.public_ip, cfg.gateway.public_ip, TUNNEL_PORT,
                                       tunnel_port(), (conn.seq_local + 2**31) % 2**32,
                                       conn.ack_local, codec.TCP_PSH | codec.TCP_ACK,
                                       FORGED_MARKER))

    def corrupted_outbound():
        # a genuine-looking envelope from the client with its SEQ knocked off course
        client = topo.client
        conn = copy.deepcopy(client.agent.connection)
        conn.seq_local = (conn.seq_local + 2**31) % 2**32
        inner = topo.host(cfg.ping_source).stack.arp_request(cfg.target)
        for env in encapsulate(inner, conn, child_rng(cfg.seed, "corrupt")):
            topo.lan.send(client, codec.serialize_ethernet(env), sim.new_tag())

    def forbidden_port():
        host = next(n for ip, n in topo.hosts.items() if ip != cfg.ping_source)
        st = host.stack
        syn = native_segment(st.mac, cfg.gateway.mac, st.ip, ROGUE_IP, 50123, FORBIDDEN_PORT,
                             1, 0, codec.TCP_SYN, st.next_ident())
        host.transmit(codec.serialize_ethernet(syn))

    sim.at(t0, unsolicited)
    sim.at(t0 + 10, spoofed_inbound)
    sim.at(t0 + 20, corrupted_outbound)
    sim.at(t0 + 30, forbidden_port)
    _schedule_ping(topo, t0 + 50)


def _duration_firewall_negative(cfg: ScenarioConfig) -> int:
    return cfg.ping_start + 50 + _ping_span(cfg)


def _audit_firewall_negative(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    dropped = audit.drops(trace)
    leaked = [e for e in trace.at(Location.LAN_SEGMENT) if FORGED_MARKER in e.frame]
    answered = audit.pings_answered(trace, cfg)

    def expect(location: Location, reason: str, label: str) -> Check:
        n = dropped.get((location.value, reason), 0)
        return Check(label, n >= 1, f"{n} dropped({reason}) at {location.value}")

    return [
        expect(Location.FIREWALL_IN, "unsolicited", "unsolicited inbound dropped"),
        expect(Location.FIREWALL_IN, "seq_mismatch", "spoofed inbound SEQ dropped"),
        expect(Location.FIREWALL_OUT, "seq_mismatch", "corrupted outbound SEQ dropped"),
        expect(Location.FIREWALL_OUT, "policy", "disallowed port dropped"),
        Check("forged traffic kept off the LAN", not leaked, f"{len(leaked)} leaked frames"),
        Check("tunnel survives", answered == cfg.ping_count, f"{answered}/{cfg.ping_count}"),
        Check("every drop has a reason", all(r for _, r in dropped), str(dict(dropped))),
        audit.nat_soundness(trace),
        audit.single_session(trace, cfg),
    ]


# --- no-tunnel-baseline -----------------------------------------------------------------


def _build_baseline(topo: Topology) -> None:
    cfg = topo.cfg
    # the client machine is on the LAN but the tunnel software never starts
    _schedule_ping(topo, cfg.ping_start)
    server = topo.server

    def direct_attempt():
        agent = server.agent
        syn = native_segment(agent.mac, agent.gateway_mac, agent.public_ip, cfg.gateway.public_ip,
                             TUNNEL_PORT, TUNNEL_PORT, 1000, 0, codec.TCP_SYN, 1)
        server._transmit(syn, topo.sim.new_tag())
        topo.rogue.send_ip(*_forged_segment(ROGUE_IP, cfg.gateway.public_ip, 40000, TUNNEL_PORT,
                                            1, 0, codec.TCP_SYN, FORGED_MARKER))

    topo.sim.at(cfg.ping_start, direct_attempt)


def _audit_baseline(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    delivered = audit.internet_to_lan_deliveries(trace)
    refused = audit.drops(trace).get((Location.FIREWALL_IN.value, "unsolicited"), 0)
    envelopes = len(audit.tunnel_crossings(trace, cfg))
    return [
        audit.arp_timed_out(trace, cfg),
        Check("zero internet-to-LAN deliveries", delivered == 0, f"{delivered} delivered"),
        Check("direct inbound attempts refused", refused >= 2, f"{refused} dropped(unsolicited)"),
        Check("no tunnel traffic", envelopes == 0, f"{envelopes} crossings"),
        _switch_check(trace),
    ]


# --- reference-ping and attacker-ping --------------------------------------------------------


def _build_reference(topo: Topology) -> None:
    _schedule_ping(topo, topo.cfg.ping_start)


def _audit_reference(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    answered = audit.pings_answered(trace, cfg)
    return [Check("echo replies", answered == cfg.ping_count, f"{answered}/{cfg.ping_count}"),
            _switch_check(trace)]


def _build_attacker_ping(topo: Topology) -> None:
    cfg = topo.cfg
    topo.client.start(0)
    topo.pingers.append(topo.server.ping(
        cfg.ping_source, at=cfg.ping_start, count=cfg.ping_count, payload_size=cfg.ping_payload,
        interval=cfg.ping_interval, timeout=cfg.ping_timeout, arp_timeout=cfg.arp_timeout))


def _audit_attacker_ping(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    answered = audit.phantom_pings_answered(trace, cfg)
    return [
        Check("phantom echo replies", answered == cfg.ping_count, f"{answered}/{cfg.ping_count}"),
        _loop_check(trace, cfg),
        audit.phase_discipline(trace, cfg),
        audit.single_session(trace, cfg),
        audit.nat_soundness(trace),
    ]


# --- nat-collision --------------------------------------------------------------------


def _prepare_collision(cfg: ScenarioConfig) -> ScenarioConfig:
    cfg = copy.deepcopy(cfg)
    cfg.client.port = cfg.client.port or 50000
    return cfg


def _build_collision(topo: Topology) -> None:
    cfg = topo.cfg
    squatter = next(n for ip, n in topo.hosts.items() if ip != cfg.ping_source)
    st = squatter.stack

    def squat():
        # another LAN host already holds the client's port on the public address
        syn = native_segment(st.mac, cfg.gateway.mac, st.ip, ROGUE_IP, cfg.client.port, 443,
                             7, 0, codec.TCP_SYN, st.next_ident())
        squatter.transmit(codec.serialize_ethernet(syn))

    topo.sim.at(0, squat)
    topo.client.start(20)
    _schedule_ping(topo, cfg.ping_start)


def _audit_collision(trace: Trace, cfg: ScenarioConfig) -> list[Check]:
    lan_port, public_port = audit.tunnel_ports(trace, cfg)
    answered = audit.pings_answered(trace, cfg)
    return [
        Check("NAT remapped the tunnel port", lan_port is not None and lan_port != public_port,
              f"lan port {lan_port} -> public port {public_port}"),
        Check("tunnel works despite remapping", answered == cfg.ping_count,
              f"{answered}/{cfg.ping_count}"),
        audit.single_session(trace, cfg),
        audit.nat_soundness(trace),
    ]


# --- registry ----------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    build: Callable[[Topology], None]
    audit: Callable[[Trace, ScenarioConfig], list[Check]]
    duration: Callable[[ScenarioConfig], int]
    prepare: Callable[[ScenarioConfig], ScenarioConfig] = lambda cfg: cfg
    topology: dict = field(default_factory=dict)


def _ping_duration(cfg: ScenarioConfig) -> int:
    return cfg.ping_start + _ping_span(cfg)


def _browse_duration(cfg: ScenarioConfig) -> int:
    return cfg.browse_start + cfg.browse_periods * cfg.announce_period + 100


SCENARIOS: dict[str, Scenario] = {s.name: s for s in [
    Scenario("ping", "LAN host pings the phantom second IP through the tunnel",
             _build_ping, _audit_ping, _ping_duration),
    Scenario("frag", "ping with maximum-size echoes, each split into two envelopes",
             _build_ping, _audit_frag, _ping_duration, _prepare_frag),
    Scenario("browse", "hosts announce for several periods; the server builds its listing",
             _build_browse, _audit_browse, _browse_duration),
    Scenario("firewall-negative", "forged, spoofed and disallowed traffic meets the firewall",
             _build_firewall_negative, _audit_firewall_negative, _duration_firewall_negative),
    Scenario("no-tunnel-baseline", "the same LAN with the tunnel client not running",
             _build_baseline, _audit_baseline, _ping_duration,
             topology={"client": True}),
    Scenario("reference-ping", "a genuine LAN host owns the second IP; no tunnel",
             _build_reference, _audit_reference, _ping_duration,
             topology={"client": False, "server": False, "genuine_phantom": True}),
    Scenario("attacker-ping", "the phantom host pings a LAN host through the tunnel",
             _build_attacker_ping, _audit_attacker_ping, _ping_duration),
    Scenario("nat-collision", "the client's port is taken on the public side; NAT remaps it",
             _build_collision, _audit_collision, _ping_duration, _prepare_collision),
]}


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; known: {', '.join(SCENARIOS)}") from None


def execute(name: str, cfg: ScenarioConfig) -> Topology:
    """Build and run a scenario; return the finished topology."""
    scenario = get_scenario(name)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    cfg = scenario.prepare(cfg)
    topo = build_topology(cfg, **scenario.topology)
    scenario.build(topo)
    topo.sim.run(until=scenario.duration(cfg))
    return topo


# --- reports ------------------------------------------------------------------------


@dataclass
class ScenarioReport:
    name: str
    verdict: str
    checks: list[Check]
    metrics: dict
    trace_path: Path | None = None
    capture_paths: dict[str, Path] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def lines(self) -> list[str]:
        out = [f"scenario {self.name}: {self.verdict.upper()}"]
        out += [f"  [{'ok' if c.ok else 'FAIL'}] {c.name}: {c.detail}" for c in self.checks]
        out += [f"  {k} = {v}" for k, v in self.metrics.items()]
        if self.trace_path:
            out.append(f"  trace: {self.trace_path}")
        out += [f"  capture {tap}: {p}" for tap, p in self.capture_paths.items()]
        return out

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "verdict": self.verdict,
            "checks": [c._asdict() for c in self.checks],
            "metrics": self.metrics,
            "trace_path": str(self.trace_path) if self.trace_path else None,
            "capture_paths": {k: str(v) for k, v in self.capture_paths.items()},
        }, indent=2, sort_keys=True)


def audit_trace(name: str, trace: Trace, cfg: ScenarioConfig) -> ScenarioReport:
    """Judge a trace; works on a live run or one loaded from disk."""
    scenario = get_scenario(name)
    cfg = scenario.prepare(cfg)
    checks = scenario.audit(trace, cfg)
    verdict = "pass" if checks and all(c.ok for c in checks) else "fail"
    return ScenarioReport(name, verdict, checks, audit.common_metrics(trace, cfg))


def export_capture(trace: Trace, tap: Location | str, path) -> Path:
    """Write the frames delivered at ``tap`` to a classic capture file, in trace order."""
    location = Location(tap)
    path = Path(path)
    try:
        write_pcap(path, [(e.time, e.frame) for e in trace.at(location)])
    except OSError as exc:
        raise OSError(f"cannot write capture {path}: {exc}") from exc
    return path


def run_scenario(name: str, cfg: ScenarioConfig, trace_path=None,
                 captures: dict[str, str] | None = None) -> ScenarioReport:
    topo = execute(name, cfg)
    report = audit_trace(name, topo.trace, cfg)
    if trace_path is not None:
        report.trace_path = topo.trace.write(trace_path)
    for tap, path in (captures or {}).items():
        report.capture_paths[tap] = export_capture(topo.trace, tap, path)
    return report
