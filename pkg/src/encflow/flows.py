"""Bidirectional session assembly and the fixed-length per-session packet window.

Sessions group packets by canonical 5-tuple. A flow key maps to more than one
session only across a FIN/RST completion or an idle-timeout gap. Direction is
relative to the initiator (source of the session's first packet), so captures
that start mid-connection still get deterministic labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional

from .capture import DecodedPacket

Endpoint = tuple[str, int]


class Direction(Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class CloseReason(Enum):
    FIN = "fin"
    RST = "rst"
    TIMEOUT = "timeout"
    END_OF_CAPTURE = "end_of_capture"


@dataclass(frozen=True)
class FlowKey:
    """Canonical bidirectional 5-tuple: lexicographically smaller endpoint first."""

    endpoint_a: Endpoint
    endpoint_b: Endpoint
    protocol: int

    @classmethod
    def from_packet(cls, p: DecodedPacket) -> "FlowKey":
        ports = p.ports
        if ports is None:
            raise ValueError("packet has no transport ports")
        src = (p.ip.src_addr, ports[0])
        dst = (p.ip.dst_addr, ports[1])
        a, b = (src, dst) if src <= dst else (dst, src)
        return cls(a, b, p.ip.protocol)


def flow_key(p: DecodedPacket) -> FlowKey:
    return FlowKey.from_packet(p)


@dataclass(frozen=True)
class DirectedPacket:
    packet: DecodedPacket
    direction: Direction


@dataclass
class Session:
    key: FlowKey
    initiator: Endpoint
    packets: list[DirectedPacket]
    start_time: int
    end_time: int
    close_reason: CloseReason

    @property
    def responder(self) -> Endpoint:
        return self.key.endpoint_b if self.initiator == self.key.endpoint_a else self.key.endpoint_a

    def forward_packets(self) -> list[DecodedPacket]:
        return [dp.packet for dp in self.packets if dp.direction is Direction.FORWARD]

    def backward_packets(self) -> list[DecodedPacket]:
        return [dp.packet for dp in self.packets if dp.direction is Direction.BACKWARD]


@dataclass(frozen=True)
class FixedRow:
    """One slot of the fixed-length window; pad rows carry all-zero numerics."""

    timestamp: int
    direction: Optional[Direction]
    ip_length: int
    ip_header_length: int
    ttl: int
    tcp_window: int
    tcp_payload_length: int
    is_pad: bool = False


PAD_ROW = FixedRow(0, None, 0, 0, 0, 0, 0, is_pad=True)


@dataclass(frozen=True)
class FixedSession:
    key: FlowKey
    rows: tuple
    pad_count: int

    @property
    def window_size(self) -> int:
        return len(self.rows)


class _OpenFlow:
    __slots__ = ("key", "initiator", "packets", "fin_forward", "fin_backward", "rst_seen", "last_ts")

    def __init__(self, key: FlowKey, initiator: Endpoint):
        self.key = key
        self.initiator = initiator
        self.packets: list[DirectedPacket] = []
        self.fin_forward = False
        self.fin_backward = False
        self.rst_seen = False
        self.last_ts = 0

    @property
    def terminated(self) -> bool:
        return self.rst_seen or (self.fin_forward and self.fin_backward)

    def close(self, reason: CloseReason) -> Session:
        if self.rst_seen:
            reason = CloseReason.RST
        elif self.fin_forward and self.fin_backward:
            reason = CloseReason.FIN
        return Session(
            key=self.key,
            initiator=self.initiator,
            packets=self.packets,
            start_time=self.packets[0].packet.timestamp,
            end_time=self.packets[-1].packet.timestamp,
            close_reason=reason,
        )


def assemble(packets: Iterable[DecodedPacket], idle_timeout_s: float = 300.0) -> list[Session]:
    """Group packets into sessions. Every input packet lands in exactly one session.

    Boundary rules: an idle gap longer than the timeout splits the flow; after
    FIN from both directions or an RST, the next SYN on the same key starts a
    fresh session (trailing teardown ACKs stay with the old one).
    """
    ordered = sorted(packets, key=lambda p: p.timestamp)  # stable: equal stamps keep input order
    timeout_us = int(idle_timeout_s * 1_000_000)
    open_flows: dict[FlowKey, _OpenFlow] = {}
    done: list[Session] = []
    for p in ordered:
        if p.ports is None:
            raise ValueError("assemble requires packets with transport ports")
        key = FlowKey.from_packet(p)
        flow = open_flows.get(key)
        if flow is not None and p.timestamp - flow.last_ts > timeout_us:
            done.append(flow.close(CloseReason.TIMEOUT))
            flow = None
        if flow is not None and flow.terminated and p.tcp is not None and p.tcp.syn:
            done.append(flow.close(CloseReason.END_OF_CAPTURE))
            flow = None
        if flow is None:
            flow = _OpenFlow(key, (p.ip.src_addr, p.ports[0]))
            open_flows[key] = flow
        direction = Direction.FORWARD if (p.ip.src_addr, p.ports[0]) == flow.initiator else Direction.BACKWARD
        flow.packets.append(DirectedPacket(p, direction))
        flow.last_ts = p.timestamp
        if p.tcp is not None:
            if p.tcp.fin:
                if direction is Direction.FORWARD:
                    flow.fin_forward = True
                else:
                    flow.fin_backward = True
            if p.tcp.rst:
                flow.rst_seen = True
    for flow in open_flows.values():
        done.append(flow.close(CloseReason.END_OF_CAPTURE))
    done.sort(key=lambda s: (s.start_time, s.key.endpoint_a, s.key.endpoint_b, s.key.protocol))
    return done


def truncate_pad(s: Session, window_size: int = 15) -> FixedSession:
    """First min(len, window_size) packets, zero-padded up to window_size rows."""
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    rows = []
    for dp in s.packets[:window_size]:
        p = dp.packet
        rows.append(
            FixedRow(
                timestamp=p.timestamp,
                direction=dp.direction,
                ip_length=p.ip.total_length,
                ip_header_length=p.ip.header_length,
                ttl=p.ip.ttl,
                tcp_window=p.tcp.window if p.tcp else 0,
                tcp_payload_length=p.tcp.payload_length if p.tcp else len(p.payload),
            )
        )
    pad_count = window_size - len(rows)
    rows.extend([PAD_ROW] * pad_count)
    return FixedSession(key=s.key, rows=tuple(rows), pad_count=pad_count)


def session_json(s: Session) -> dict:
    return {
        "key": {
            "endpoint_a": list(s.key.endpoint_a),
            "endpoint_b": list(s.key.endpoint_b),
            "protocol": s.key.protocol,
        },
        "initiator": list(s.initiator),
        "forward_packets": len(s.forward_packets()),
        "backward_packets": len(s.backward_packets()),
        "start_time": s.start_time,
        "end_time": s.end_time,
        "close_reason": s.close_reason.value,
    }


def write_session_dump(sessions: Iterable[Session], path) -> None:
    """One JSON object per line: key, initiator, counts, times, close reason."""
    with open(path, "w", encoding="utf-8") as fp:
        for s in sessions:
            fp.write(json.dumps(session_json(s), sort_keys=True) + "\n")
