"""Scenario configuration and its flat ``key = value`` file format.

Hosts are written as repeated stanzas; each ``host.name`` line opens a new
host and the ``host.*`` lines after it fill that host in::

    seed = 1
    lan_prefix = 192.168.0.0/24
    host.name = PC-ACCOUNTING
    host.ip = 192.168.0.10
    host.mac = 02:00:00:00:00:0a
    host.shares = docs,printer

Blank lines and ``#`` comments are ignored. Keys that are absent keep their
defaults; a file with no host stanzas keeps the default five hosts.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from ipaddress import IPv4Address, IPv4Network
from pathlib import Path
from typing import Callable

from .codec import MAX_HOST_NAME, MacAddress
from .errors import CodecError, ConfigError


@dataclass
class HostSpec:
    name: str
    ip: IPv4Address
    mac: MacAddress
    shares: tuple[str, ...] = ()


@dataclass
class ClientSpec:
    ip: IPv4Address = IPv4Address("192.168.0.108")
    mac: MacAddress = MacAddress.parse("02:00:00:00:01:08")
    port: int | None = None   # None lets the native stack pick a dynamic port


@dataclass
class GatewaySpec:
    lan_ip: IPv4Address = IPv4Address("192.168.0.1")
    public_ip: IPv4Address = IPv4Address("195.174.145.217")
    mac: MacAddress = MacAddress.parse("02:00:00:00:00:01")
    wan_mac: MacAddress = MacAddress.parse("02:00:00:c3:ae:91")


@dataclass
class ServerSpec:
    public_ip: IPv4Address = IPv4Address("195.212.102.201")
    mac: MacAddress = MacAddress.parse("02:00:00:c3:d4:c9")
    second_ip: IPv4Address = IPv4Address("192.168.0.14")
    gateway_mac: MacAddress = MacAddress.parse("02:00:00:c3:d4:01")


def default_hosts() -> list[HostSpec]:
    rows = [
        ("PC-ACCOUNTING", 10, ("docs", "printer")),
        ("PC-HR", 20, ("payroll",)),
        ("PC-SALES", 30, ("leads", "quotes")),
        ("FILESRV", 40, ("public", "backup", "projects")),
        ("PC-RECEPTION", 50, ()),
    ]
    return [HostSpec(name, IPv4Address(f"192.168.0.{n}"),
                     MacAddress(bytes([2, 0, 0, 0, 0, n])), shares)
            for name, n, shares in rows]


@dataclass
class ScenarioConfig:
    seed: int = 1
    lan_prefix: IPv4Network = IPv4Network("192.168.0.0/24")
    client: ClientSpec = field(default_factory=ClientSpec)
    gateway: GatewaySpec = field(default_factory=GatewaySpec)
    server: ServerSpec = field(default_factory=ServerSpec)
    hosts: list[HostSpec] = field(default_factory=default_hosts)
    allowed_outbound_ports: tuple[int, ...] = (80, 443)
    mtu: int = 1500
    announce_period: int = 1000
    latency: int = 1
    seq_window: int = 65535
    isn_bits: int = 32
    connect_timeout: int = 200
    # ping scenarios
    ping_count: int = 4
    ping_payload: int = 32
    ping_source: IPv4Address = IPv4Address("192.168.0.10")
    ping_target: IPv4Address | None = None   # None means the server's second IP
    ping_interval: int = 100
    ping_timeout: int = 100
    arp_timeout: int = 100
    ping_start: int = 50
    # browse scenario
    browse_start: int = 50
    browse_periods: int = 10

    @property
    def target(self) -> IPv4Address:
        return self.ping_target or self.server.second_ip

    def host_by_ip(self, ip: IPv4Address) -> HostSpec | None:
        return next((h for h in self.hosts if h.ip == ip), None)


def default_config() -> ScenarioConfig:
    return ScenarioConfig()


# --- text format ------------------------------------------------------------


def _ports(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.replace(" ", "").split(",") if p)


def _shares(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _optional_ip(text: str) -> IPv4Address | None:
    return IPv4Address(text) if text else None


def _optional_int(text: str) -> int | None:
    return int(text) if text else None


def _bare_int(text: str) -> int:
    return int(text, 0)


_SCALARS: dict[str, tuple[str, Callable]] = {
    "seed": ("seed", _bare_int),
    "lan_prefix": ("lan_prefix", IPv4Network),
    "client.ip": ("client.ip", IPv4Address),
    "client.mac": ("client.mac", MacAddress.parse),
    "client.port": ("client.port", _optional_int),
    "gateway.lan_ip": ("gateway.lan_ip", IPv4Address),
    "gateway.public_ip": ("gateway.public_ip", IPv4Address),
    "gateway.mac": ("gateway.mac", MacAddress.parse),
    "gateway.wan_mac": ("gateway.wan_mac", MacAddress.parse),
    "server.public_ip": ("server.public_ip", IPv4Address),
    "server.mac": ("server.mac", MacAddress.parse),
    "server.second_ip": ("server.second_ip", IPv4Address),
    "server.gateway_mac": ("server.gateway_mac", MacAddress.parse),
    "allowed_outbound_ports": ("allowed_outbound_ports", _ports),
    "mtu": ("mtu", int),
    "announce_period": ("announce_period", int),
    "latency": ("latency", int),
    "seq_window": ("seq_window", int),
    "isn_bits": ("isn_bits", int),
    "connect_timeout": ("connect_timeout", int),
    "ping.count": ("ping_count", int),
    "ping.payload": ("ping_payload", int),
    "ping.source": ("ping_source", IPv4Address),
    "ping.target": ("ping_target", _optional_ip),
    "ping.interval": ("ping_interval", int),
    "ping.timeout": ("ping_timeout", int),
    "ping.arp_timeout": ("arp_timeout", int),
    "ping.start": ("ping_start", int),
    "browse.start": ("browse_start", int),
    "browse.periods": ("browse_periods", int),
}

_HOST_KEYS: dict[str, Callable] = {
    "host.ip": IPv4Address,
    "host.mac": MacAddress.parse,
    "host.shares": _shares,
}


def _set_path(cfg: ScenarioConfig, path: str, value) -> None:
    target = cfg
    *parents, leaf = path.split(".")
    for name in parents:
        target = getattr(target, name)
    setattr(target, leaf, value)


def parse_config(text: str) -> ScenarioConfig:
    """Parse the flat format; raises ``ConfigError`` listing every bad line."""
    cfg = ScenarioConfig(hosts=[])
    errors: list[str] = []
    current: dict | None = None
    pending_hosts: list[dict] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            errors.append(f"line {lineno}: expected key = value")
            continue
        try:
            if key == "host.name":
                current = {"name": value, "line": lineno}
                pending_hosts.append(current)
            elif key in _HOST_KEYS:
                if current is None:
                    raise ValueError(f"{key} before any host.name")
                current[key[5:]] = _HOST_KEYS[key](value)
            elif key in _SCALARS:
                path, conv = _SCALARS[key]
                _set_path(cfg, path, conv(value))
            else:
                errors.append(f"line {lineno}: unknown key {key!r}")
        except (ValueError, CodecError) as exc:
            errors.append(f"line {lineno}: bad value for {key}: {exc}")
    for h in pending_hosts:
        missing = [k for k in ("ip", "mac") if k not in h]
        if missing:
            errors.append(f"line {h['line']}: host {h['name']!r} is missing {', '.join(missing)}")
            continue
        cfg.hosts.append(HostSpec(h["name"], h["ip"], h["mac"], h.get("shares", ())))
    if not pending_hosts:
        cfg.hosts = default_hosts()
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from exc
    return parse_config(text)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def dump_config(cfg: ScenarioConfig) -> str:
    lines = []
    for key, (path, _) in _SCALARS.items():
        value = cfg
        for name in path.split("."):
            value = getattr(value, name)
        lines.append(f"{key} = {_fmt(value)}")
    for h in cfg.hosts:
        lines += ["", f"host.name = {h.name}", f"host.ip = {h.ip}", f"host.mac = {h.mac}",
                  f"host.shares = {_fmt(h.shares)}"]
    return "\n".join(lines) + "\n"


# --- validation -------------------------------------------------------------


def validate_config(cfg: ScenarioConfig) -> list[str]:
    """Every invariant the configuration breaks, as human-readable strings."""
    v: list[str] = []
    net = cfg.lan_prefix
    lan_ips = [("client.ip", cfg.client.ip), ("gateway.lan_ip", cfg.gateway.lan_ip)]
    lan_ips += [(f"host {h.name}", h.ip) for h in cfg.hosts]

    seen: dict[IPv4Address, str] = {}
    for who, ip in lan_ips:
        if ip not in net:
            v.append(f"prefix mismatch: {who} {ip} is outside {net}")
        if ip in seen:
            v.append(f"address conflict: {who} {ip} duplicates {seen[ip]}")
        else:
            seen[ip] = who
    second = cfg.server.second_ip
    if second not in net:
        v.append(f"prefix mismatch: server.second_ip {second} is outside {net}")
    if second in seen:
        v.append(f"address conflict: server.second_ip {second} duplicates {seen[second]}")
    for who, ip in lan_ips + [("server.second_ip", second)]:
        if ip in (net.network_address, net.broadcast_address):
            v.append(f"address conflict: {who} {ip} is the network or broadcast address")

    for who, ip in (("gateway.public_ip", cfg.gateway.public_ip),
                    ("server.public_ip", cfg.server.public_ip)):
        if ip in net:
            v.append(f"prefix mismatch: {who} {ip} must be outside {net}")
    if cfg.gateway.public_ip == cfg.server.public_ip:
        v.append("address conflict: gateway.public_ip equals server.public_ip")

    macs: dict[MacAddress, str] = {}
    for who, m in ([("client.mac", cfg.client.mac), ("gateway.mac", cfg.gateway.mac),
                    ("server.mac", cfg.server.mac)]
                   + [(f"host {h.name}", h.mac) for h in cfg.hosts]):
        if m.is_broadcast or m.octets[0] & 1:
            v.append(f"bad mac: {who} {m} is a group address")
        if m in macs:
            v.append(f"mac conflict: {who} {m} duplicates {macs[m]}")
        else:
            macs[m] = who

    names = set()
    for h in cfg.hosts:
        if not h.name or len(h.name) > MAX_HOST_NAME or any(c.isspace() for c in h.name):
            v.append(f"bad host name: {h.name!r} must be 1..{MAX_HOST_NAME} characters "
                     f"without spaces")
        if h.name in names:
            v.append(f"duplicate host name: {h.name}")
        names.add(h.name)

    if not 0 <= cfg.seed < 2**64:
        v.append(f"seed {cfg.seed} is not a 64-bit unsigned integer")
    if not 576 <= cfg.mtu <= 1500:
        v.append(f"mtu {cfg.mtu} out of range 576..1500")
    if cfg.isn_bits not in (16, 32):
        v.append(f"isn_bits must be 16 or 32, got {cfg.isn_bits}")
    for port in cfg.allowed_outbound_ports:
        if not 1 <= port <= 65535:
            v.append(f"allowed_outbound_ports: {port} is not a TCP port")
    if cfg.client.port is not None and not 1 <= cfg.client.port <= 65535:
        v.append(f"client.port {cfg.client.port} is not a TCP port")
    for name in ("announce_period", "latency", "connect_timeout", "ping_interval",
                 "ping_timeout", "arp_timeout", "browse_periods"):
        if getattr(cfg, name) < 1:
            v.append(f"{name} must be positive")
    for name in ("ping_count", "ping_start", "browse_start", "seq_window"):
        if getattr(cfg, name) < 0:
            v.append(f"{name} must not be negative")
    max_payload = cfg.mtu - 28
    if not 0 <= cfg.ping_payload <= max_payload:
        v.append(f"ping.payload {cfg.ping_payload} out of range 0..{max_payload} for mtu {cfg.mtu}")
    if cfg.host_by_ip(cfg.ping_source) is None:
        v.append(f"unknown ping source: {cfg.ping_source} is not a configured host")
    if cfg.target not in net:
        v.append(f"prefix mismatch: ping target {cfg.target} is outside {net}")
    return v


def with_overrides(cfg: ScenarioConfig, **changes) -> ScenarioConfig:
    return replace(cfg, **changes)

