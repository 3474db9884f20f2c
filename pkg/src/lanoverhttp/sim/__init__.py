"""Deterministic discrete-event simulation of the attacked LAN and the internet."""

from .clock import SimClock
from .firewall import GatewayNode, NatEntry, StatefulFirewall, Verdict, seq_plausible
from .host import HostNode, HostStack, Pinger, host_handle_frame
from .network import INTERNET_MAC, Internet, InternetHost, LanSegment, Simulator
from .switch import VirtualSwitch
from .trace import FrameTag, Location, SimEvent, Trace

__all__ = [
    "FrameTag", "GatewayNode", "HostNode", "HostStack", "INTERNET_MAC", "Internet",
    "InternetHost", "LanSegment", "Location", "NatEntry", "Pinger", "SimClock", "SimEvent",
    "Simulator", "StatefulFirewall", "Trace", "Verdict", "VirtualSwitch", "host_handle_frame",
    "seq_plausible",
]
