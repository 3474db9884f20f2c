"""Classic libpcap capture files (magic 0xa1b2c3d4, v2.4, Ethernet link type)."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable

PCAP_MAGIC = 0xA1B2C3D4
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535
TICKS_PER_SECOND = 1000   # one tick is one millisecond of capture time

_GLOBAL = struct.Struct("<IHHiIII")
_RECORD = struct.Struct("<IIII")


def tick_timestamp(tick: int) -> tuple[int, int]:
    sec, rem = divmod(tick, TICKS_PER_SECOND)
    return sec, rem * (1_000_000 // TICKS_PER_SECOND)


def pcap_bytes(records: Iterable[tuple[int, bytes]]) -> bytes:
    out = [_GLOBAL.pack(PCAP_MAGIC, 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET)]
    for tick, frame in records:
        sec, usec = tick_timestamp(tick)
        out.append(_RECORD.pack(sec, usec, len(frame), len(frame)))
        out.append(frame)
    return b"".join(out)


def write_pcap(path, records: Iterable[tuple[int, bytes]]) -> Path:
    path = Path(path)
    try:
        path.write_bytes(pcap_bytes(records))
    except OSError as exc:
        raise OSError(f"cannot write capture file {path}: {exc}") from exc
    return path


def read_pcap(path) -> list[tuple[float, bytes]]:
    """(timestamp seconds, frame) records; accepts either byte order."""
    data = Path(path).read_bytes()
    if len(data) < _GLOBAL.size:
        raise ValueError(f"{path}: too short for a pcap header")
    (magic,) = struct.unpack_from("<I", data)
    endian = "<" if magic == PCAP_MAGIC else ">"
    if struct.unpack_from(endian + "I", data)[0] != PCAP_MAGIC:
        raise ValueError(f"{path}: not a classic pcap file")
    _, major, minor, _, _, _, linktype = struct.unpack_from(endian + "IHHiIII", data)
    if (major, minor, linktype) != (2, 4, LINKTYPE_ETHERNET):
        raise ValueError(f"{path}: unsupported pcap version or link type")
    pos, records = _GLOBAL.size, []
    rec = struct.Struct(endian + "IIII")
    while pos < len(data):
        sec, usec, incl, _ = rec.unpack_from(data, pos)
        pos += rec.size
        records.append((sec + usec / 1e6, data[pos:pos + incl]))
        pos += incl
    return records
