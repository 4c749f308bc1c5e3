"""Packet capture ingestion: PCAP/PCAPNG reading, frame decoding, relevance filtering.

Readers yield frames in file order with timestamps normalized to integer
microseconds. Decoding is total: every frame becomes either a DecodedPacket
or an Undecodable verdict naming the layer that failed.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Union

PCAP_MAGIC_US_LE = b"\xd4\xc3\xb2\xa1"
PCAP_MAGIC_US_BE = b"\xa1\xb2\xc3\xd4"
PCAP_MAGIC_NS_LE = b"\x4d\x3c\xb2\xa1"
PCAP_MAGIC_NS_BE = b"\xa1\xb2\x3c\x4d"
PCAPNG_BLOCK_MAGIC = b"\x0a\x0d\x0d\x0a"

# Link-layer types from the tcpdump registry.
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW_IP = {12, 14, 101, 228, 229}

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_IPV6 = 0x86DD
ETHERTYPE_ARP = 0x0806
ETHERTYPE_VLAN = (0x8100, 0x88A8)

IPPROTO_ICMP = 1
IPPROTO_TCP = 6
IPPROTO_UDP = 17
IPPROTO_ICMPV6 = 58

PROTOCOL_NAMES = {IPPROTO_ICMP: "ICMP", IPPROTO_TCP: "TCP", IPPROTO_UDP: "UDP", IPPROTO_ICMPV6: "ICMPV6"}

TCP_FIN = 0x01
TCP_SYN = 0x02
TCP_RST = 0x04
TCP_PSH = 0x08
TCP_ACK = 0x10
TCP_URG = 0x20


class CaptureError(Exception):
    """Base class for capture-file problems."""


class UnknownMagic(CaptureError):
    """The file does not begin with a PCAP or PCAPNG magic sequence."""


class LinkType(Enum):
    ETHERNET = "ethernet"
    RAW_IP = "raw_ip"
    OTHER = "other"


class Transport(Enum):
    TCP_ONLY = "tcp_only"
    TCP_UDP = "tcp_udp"


@dataclass(frozen=True)
class RawFrame:
    """One captured frame: microsecond timestamp, link type, raw bytes."""

    timestamp: int
    link_type: LinkType
    data: bytes


@dataclass(frozen=True)
class TruncationNotice:
    """Yielded in-stream when a frame header claims more bytes than remain."""

    offset: int
    message: str


@dataclass(frozen=True)
class IpInfo:
    src_addr: str
    dst_addr: str
    protocol: int
    total_length: int
    header_length: int
    ttl: int


@dataclass(frozen=True)
class TcpInfo:
    src_port: int
    dst_port: int
    seq: int
    flags: int
    window: int
    header_length: int
    payload_length: int

    @property
    def syn(self) -> bool:
        return bool(self.flags & TCP_SYN)

    @property
    def ack(self) -> bool:
        return bool(self.flags & TCP_ACK)

    @property
    def fin(self) -> bool:
        return bool(self.flags & TCP_FIN)

    @property
    def rst(self) -> bool:
        return bool(self.flags & TCP_RST)

    @property
    def psh(self) -> bool:
        return bool(self.flags & TCP_PSH)

    @property
    def urg(self) -> bool:
        return bool(self.flags & TCP_URG)


@dataclass(frozen=True)
class UdpInfo:
    src_port: int
    dst_port: int


@dataclass(frozen=True)
class DecodedPacket:
    timestamp: int
    link_type: LinkType
    ip: IpInfo
    tcp: Optional[TcpInfo] = None
    udp: Optional[UdpInfo] = None
    payload: bytes = b""

    @property
    def ports(self) -> Optional[tuple[int, int]]:
        if self.tcp is not None:
            return self.tcp.src_port, self.tcp.dst_port
        if self.udp is not None:
            return self.udp.src_port, self.udp.dst_port
        return None


@dataclass(frozen=True)
class Undecodable:
    """Frame that is not IP/TCP traffic or is malformed; `layer` names the failure."""

    layer: str  # link | network | transport
    detail: str = ""
    protocol: Optional[str] = None  # best-effort label, e.g. "ARP"


@dataclass(frozen=True)
class FilterPolicy:
    drop_protocols: frozenset = frozenset({"ARP", "ICMP", "ICMPV6"})
    require_transport: Transport = Transport.TCP_ONLY
    drop_malformed: bool = True


@dataclass(frozen=True)
class FilterVerdict:
    kept: bool
    reason: Optional[str] = None  # protocol | malformed | transport

    def __bool__(self) -> bool:
        return self.kept


def validate_packet(p: DecodedPacket) -> None:
    """Raise ValueError if a DecodedPacket violates its structural invariants."""
    if not (p.ip.total_length >= p.ip.header_length >= 20):
        raise ValueError("ip.total_length >= ip.header_length >= 20 violated")
    if p.tcp is not None:
        if p.ip.protocol != IPPROTO_TCP:
            raise ValueError("tcp present but ip.protocol != 6")
        expected = p.ip.total_length - p.ip.header_length - p.tcp.header_length
        if p.tcp.payload_length != expected:
            raise ValueError("tcp.payload_length inconsistent with lengths")
        if len(p.payload) != p.tcp.payload_length:
            raise ValueError("payload bytes inconsistent with tcp.payload_length")


def _classify_linktype(linktype: int) -> LinkType:
    if linktype == LINKTYPE_ETHERNET:
        return LinkType.ETHERNET
    if linktype in LINKTYPE_RAW_IP:
        return LinkType.RAW_IP
    return LinkType.OTHER


def _read_pcap(data: bytes) -> Iterator[Union[RawFrame, TruncationNotice]]:
    magic = data[:4]
    if magic in (PCAP_MAGIC_US_LE, PCAP_MAGIC_NS_LE):
        endian = "<"
    else:
        endian = ">"
    is_ns = magic in (PCAP_MAGIC_NS_LE, PCAP_MAGIC_NS_BE)
    if len(data) < 24:
        yield TruncationNotice(len(data), "truncated global header")
        return
    _, _, _, _, _, _, linktype = struct.unpack(endian + "IHHiIII", data[:24])
    link = _classify_linktype(linktype)
    offset = 24
    while offset < len(data):
        if offset + 16 > len(data):
            yield TruncationNotice(offset, "truncated record header")
            return
        ts_sec, ts_frac, incl_len, _ = struct.unpack(endian + "IIII", data[offset : offset + 16])
        if offset + 16 + incl_len > len(data):
            yield TruncationNotice(offset, f"record claims {incl_len} bytes, fewer remain")
            return
        if is_ns:
            ts = ts_sec * 1_000_000 + ts_frac // 1000
        else:
            ts = ts_sec * 1_000_000 + ts_frac
        yield RawFrame(ts, link, data[offset + 16 : offset + 16 + incl_len])
        offset += 16 + incl_len


def _pcapng_tsresol(options: bytes, endian: str) -> int:
    """Ticks per second from an IDB option block (default microseconds)."""
    off = 0
    while off + 4 <= len(options):
        code, length = struct.unpack(endian + "HH", options[off : off + 4])
        if code == 0:
            break
        value = options[off + 4 : off + 4 + length]
        if code == 9 and length >= 1:
            v = value[0]
            if v & 0x80:
                return 2 ** (v & 0x7F)
            return 10**v
        off += 4 + length + (-length % 4)
    return 1_000_000


def _read_pcapng(data: bytes) -> Iterator[Union[RawFrame, TruncationNotice]]:
    offset = 0
    endian = "<"
    interfaces: list[tuple[LinkType, int]] = []
    while offset < len(data):
        if offset + 8 > len(data):
            yield TruncationNotice(offset, "truncated block header")
            return
        block_type_raw = data[offset : offset + 4]
        if block_type_raw == PCAPNG_BLOCK_MAGIC:
            # Section header: byte order magic decides endianness for the section.
            if offset + 12 > len(data):
                yield TruncationNotice(offset, "truncated section header")
                return
            bom = data[offset + 8 : offset + 12]
            endian = "<" if bom == b"\x4d\x3c\x2b\x1a" else ">"
            interfaces = []
        (block_type,) = struct.unpack(endian + "I", block_type_raw)
        (total_len,) = struct.unpack(endian + "I", data[offset + 4 : offset + 8])
        if total_len < 12 or offset + total_len > len(data):
            yield TruncationNotice(offset, "block length exceeds file")
            return
        body = data[offset + 8 : offset + total_len - 4]
        if block_type == 0x00000001 and len(body) >= 8:  # interface description
            (linktype,) = struct.unpack(endian + "H", body[:2])
            resol = _pcapng_tsresol(body[8:], endian)
            interfaces.append((_classify_linktype(linktype), resol))
        elif block_type == 0x00000006 and len(body) >= 20:  # enhanced packet
            iface, ts_high, ts_low, cap_len, _ = struct.unpack(endian + "IIIII", body[:20])
            if 20 + cap_len > len(body):
                yield TruncationNotice(offset, "packet data exceeds block")
                return
            link, resol = interfaces[iface] if iface < len(interfaces) else (LinkType.OTHER, 1_000_000)
            ticks = (ts_high << 32) | ts_low
            yield RawFrame(ticks * 1_000_000 // resol, link, body[20 : 20 + cap_len])
        elif block_type == 0x00000003 and len(body) >= 4:  # simple packet, no timestamp
            link = interfaces[0][0] if interfaces else LinkType.OTHER
            yield RawFrame(0, link, body[4:])
        offset += total_len


def open_capture(path) -> Iterator[Union[RawFrame, TruncationNotice]]:
    """Yield RawFrames from a PCAP or PCAPNG file, in file order.

    On truncation the complete frames read so far are followed by a single
    TruncationNotice. Raises UnknownMagic for anything else.
    """
    data = Path(path).read_bytes()
    magic = data[:4]
    if magic in (PCAP_MAGIC_US_LE, PCAP_MAGIC_US_BE, PCAP_MAGIC_NS_LE, PCAP_MAGIC_NS_BE):
        yield from _read_pcap(data)
    elif magic == PCAPNG_BLOCK_MAGIC:
        yield from _read_pcapng(data)
    else:
        raise UnknownMagic(f"{path}: not a PCAP/PCAPNG capture")


def read_frames(path) -> tuple[list[RawFrame], Optional[TruncationNotice]]:
    """Convenience wrapper: collect all frames plus the truncation notice, if any."""
    frames: list[RawFrame] = []
    notice = None
    for item in open_capture(path):
        if isinstance(item, TruncationNotice):
            notice = item
        else:
            frames.append(item)
    return frames, notice


def _decode_ipv4(ts: int, link: LinkType, data: bytes) -> Union[DecodedPacket, Undecodable]:
    if len(data) < 20:
        return Undecodable("network", "short ipv4 header")
    version = data[0] >> 4
    ihl = (data[0] & 0x0F) * 4
    if version != 4 or ihl < 20:
        return Undecodable("network", "bad ipv4 version/ihl")
    total_length = struct.unpack(">H", data[2:4])[0]
    if total_length < ihl:
        return Undecodable("network", "total_length below header length")
    if len(data) < total_length:
        return Undecodable("network", "incompletely captured packet")
    flags_frag = struct.unpack(">H", data[6:8])[0]
    if flags_frag & 0x2000 or flags_frag & 0x1FFF:
        return Undecodable("network", "ip fragment")
    ttl = data[8]
    protocol = data[9]
    src = str(ipaddress.ip_address(data[12:16]))
    dst = str(ipaddress.ip_address(data[16:20]))
    ip = IpInfo(src, dst, protocol, total_length, ihl, ttl)
    return _decode_transport(ts, link, ip, data[:total_length])


def _decode_ipv6(ts: int, link: LinkType, data: bytes) -> Union[DecodedPacket, Undecodable]:
    if len(data) < 40:
        return Undecodable("network", "short ipv6 header")
    if data[0] >> 4 != 6:
        return Undecodable("network", "bad ipv6 version")
    payload_len = struct.unpack(">H", data[4:6])[0]
    next_header = data[6]
    ttl = data[7]
    src = str(ipaddress.ip_address(data[8:24]))
    dst = str(ipaddress.ip_address(data[24:40]))
    total_length = 40 + payload_len
    if len(data) < total_length:
        return Undecodable("network", "incompletely captured packet")
    header_length = 40
    off = 40
    while next_header in (0, 43, 60, 51):
        if off + 2 > total_length:
            return Undecodable("network", "truncated ipv6 extension header")
        ext_len = (data[off + 1] + 2) * 4 if next_header == 51 else (data[off + 1] + 1) * 8
        next_header, off = data[off], off + ext_len
        header_length += ext_len
        if off > total_length:
            return Undecodable("network", "ipv6 extension header overruns packet")
    if next_header == 44:
        return Undecodable("network", "ip fragment")
    ip = IpInfo(src, dst, next_header, total_length, header_length, ttl)
    return _decode_transport(ts, link, ip, data[:total_length])


def _decode_transport(ts: int, link: LinkType, ip: IpInfo, data: bytes) -> Union[DecodedPacket, Undecodable]:
    body = data[ip.header_length :]
    if ip.protocol == IPPROTO_TCP:
        if len(body) < 20:
            return Undecodable("transport", "short tcp header")
        sport, dport, seq = struct.unpack(">HHI", body[:8])
        offset_flags, window = struct.unpack(">HH", body[12:16])
        tcp_hlen = (offset_flags >> 12) * 4
        flags = offset_flags & 0x3F
        if tcp_hlen < 20 or len(body) < tcp_hlen:
            return Undecodable("transport", "bad tcp data offset")
        payload_length = ip.total_length - ip.header_length - tcp_hlen
        if payload_length < 0:
            return Undecodable("transport", "negative tcp payload length")
        payload = body[tcp_hlen : tcp_hlen + payload_length]
        tcp = TcpInfo(sport, dport, seq, flags, window, tcp_hlen, payload_length)
        return DecodedPacket(ts, link, ip, tcp=tcp, payload=payload)
    if ip.protocol == IPPROTO_UDP:
        if len(body) < 8:
            return Undecodable("transport", "short udp header")
        sport, dport = struct.unpack(">HH", body[:4])
        return DecodedPacket(ts, link, ip, udp=UdpInfo(sport, dport), payload=body[8:])
    return DecodedPacket(ts, link, ip, payload=body)


def decode_packet(frame: RawFrame) -> Union[DecodedPacket, Undecodable]:
    """Decode one frame to a DecodedPacket, or report the layer that failed."""
    data = frame.data
    if frame.link_type is LinkType.ETHERNET:
        if len(data) < 14:
            return Undecodable("link", "short ethernet header")
        ethertype = struct.unpack(">H", data[12:14])[0]
        off = 14
        while ethertype in ETHERTYPE_VLAN and off + 4 <= len(data):
            ethertype = struct.unpack(">H", data[off + 2 : off + 4])[0]
            off += 4
        if ethertype == ETHERTYPE_IPV4:
            return _decode_ipv4(frame.timestamp, frame.link_type, data[off:])
        if ethertype == ETHERTYPE_IPV6:
            return _decode_ipv6(frame.timestamp, frame.link_type, data[off:])
        if ethertype == ETHERTYPE_ARP:
            return Undecodable("network", "non-ip ethertype", protocol="ARP")
        return Undecodable("network", f"non-ip ethertype 0x{ethertype:04x}")
    if frame.link_type is LinkType.RAW_IP:
        if not data:
            return Undecodable("network", "empty frame")
        version = data[0] >> 4
        if version == 4:
            return _decode_ipv4(frame.timestamp, frame.link_type, data)
        if version == 6:
            return _decode_ipv6(frame.timestamp, frame.link_type, data)
        return Undecodable("network", "unknown ip version")
    return Undecodable("link", "unsupported link type")


def _protocol_labels(obj: Union[DecodedPacket, Undecodable]) -> set:
    if isinstance(obj, Undecodable):
        return {obj.protocol} if obj.protocol else set()
    labels = {obj.ip.protocol}
    name = PROTOCOL_NAMES.get(obj.ip.protocol)
    if name:
        labels.add(name)
    return labels


def filter_packet(p: Union[DecodedPacket, Undecodable], policy: FilterPolicy = FilterPolicy()) -> FilterVerdict:
    """Apply the relevance filter; pure function of (packet, policy)."""
    normalized = {x.upper() if isinstance(x, str) else x for x in policy.drop_protocols}
    if _protocol_labels(p) & normalized:
        return FilterVerdict(False, "protocol")
    if isinstance(p, Undecodable):
        if policy.drop_malformed:
            return FilterVerdict(False, "malformed")
        return FilterVerdict(True)
    if policy.require_transport is Transport.TCP_ONLY and p.tcp is None:
        return FilterVerdict(False, "transport")
    if policy.require_transport is Transport.TCP_UDP and p.tcp is None and p.udp is None:
        return FilterVerdict(False, "transport")
    return FilterVerdict(True)
