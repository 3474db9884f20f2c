"""MAC-learning Ethernet switch."""

from __future__ import annotations

from ..codec import EthernetFrame, MacAddress


class VirtualSwitch:
    """Learns source MACs per ingress port; floods broadcast and unknown destinations.

    Several MACs may sit behind one port (the phantom host appears behind the
    client's port), but a MAC lives on one port at a time: seeing it on a new
    port moves it.
    """

    def __init__(self, ports: int = 0):
        self.ports: list[int] = list(range(ports))
        self.mac_table: dict[MacAddress, int] = {}

    def add_port(self) -> int:
        port = len(self.ports)
        self.ports.append(port)
        return port

    def switch_forward(self, frame: EthernetFrame, ingress_port: int) -> list[int]:
        if ingress_port not in self.ports:
            raise ValueError(f"no such port {ingress_port}")
        if not frame.src_mac.is_broadcast:
            self.mac_table[frame.src_mac] = ingress_port
        egress = self.mac_table.get(frame.dst_mac)
        if frame.dst_mac.is_broadcast or egress is None:
            return [p for p in self.ports if p != ingress_port]
        # a destination learned on the ingress port needs no forwarding
        return [] if egress == ingress_port else [egress]
