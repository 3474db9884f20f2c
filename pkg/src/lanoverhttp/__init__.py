"""LAN-over-HTTP tunnel: protocol library and deterministic network simulator."""

__version__ = "0.1.0"
