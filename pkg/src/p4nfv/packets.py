"""Frame construction for tests, traces and the ``frame`` subcommand."""

from __future__ import annotations

import struct

from .switch import ipv4_checksum


def build_frame(
    dst_mac: int,
    src_mac: int,
    vid: int | None = None,
    *,
    ipv4: tuple[int, int] | None = None,
    ttl: int = 64,
    proto: int | None = None,
    sport: int = 1024,
    dport: int = 80,
    pcp: int = 0,
    ihl: int = 5,
    pad_to: int = 64,
) -> bytes:
    """Ethernet/802.1Q frame, optionally with IPv4 and a TCP (6) or UDP (17) header."""
    inner_type = 0x0800 if ipv4 is not None else 0x88B5
    eth = dst_mac.to_bytes(6, "big") + src_mac.to_bytes(6, "big")
    if vid is not None:
        eth += struct.pack("!HHH", 0x8100, (pcp << 13) | vid, inner_type)
    else:
        eth += struct.pack("!H", inner_type)

    body = b""
    if ipv4 is not None:
        l4 = b""
        protocol = proto if proto is not None else 0xFD
        if protocol == 6:
            l4 = struct.pack("!HHIIHHHH", sport, dport, 0, 0, 0x5000, 0xFFFF, 0, 0)
        elif protocol == 17:
            l4 = struct.pack("!HHHH", sport, dport, 8, 0)
        total = 20 + len(l4)
        hdr = bytearray(
            struct.pack("!BBHHHBBHII", (4 << 4) | ihl, 0, total, 0, 0x4000, ttl, protocol, 0, ipv4[0], ipv4[1])
        )
        hdr[10:12] = ipv4_checksum(bytes(hdr)).to_bytes(2, "big")
        body = bytes(hdr) + l4
    frame = eth + body
    return frame + b"\x00" * max(0, pad_to - len(frame))
