"""Internet checksum (16-bit one's-complement sum)."""

from __future__ import annotations

import struct

from .errors import SizeError


def ones_complement_sum(data: bytes) -> int:
    """Fold 16-bit big-endian words into a one's-complement sum.

    Odd-length input is padded with a trailing zero byte.
    """
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return total


def internet_checksum(data: bytes) -> int:
    return ~ones_complement_sum(data) & 0xFFFF


def compute_ip_checksum(header_bytes: bytes) -> int:
    """Checksum of a 20-byte IPv4 header whose checksum field is zeroed."""
    if len(header_bytes) != 20:
        raise SizeError(f"IPv4 header must be 20 bytes, got {len(header_bytes)}")
    return internet_checksum(header_bytes)
