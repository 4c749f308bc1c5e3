"""Shared test helpers: direct packet/session construction and brute-force oracles.

Oracles here are written independently of the library code paths they check:
plain-Python loops and sorting only.
"""

from __future__ import annotations

import math

from encflow.capture import DecodedPacket, IpInfo, LinkType, TcpInfo
from encflow.flows import CloseReason, DirectedPacket, Direction, FlowKey, Session


def make_packet(
    ts: int,
    src: str = "10.0.0.1",
    sport: int = 40000,
    dst: str = "10.0.0.2",
    dport: int = 443,
    payload_length: int = 0,
    ip_length: int = None,
    header_length: int = 20,
    tcp_header_length: int = 20,
    ttl: int = 64,
    window: int = 65535,
    flags: int = 0x10,
    seq: int = 0,
) -> DecodedPacket:
    if ip_length is None:
        ip_length = header_length + tcp_header_length + payload_length
    tcp = TcpInfo(
        src_port=sport,
        dst_port=dport,
        seq=seq,
        flags=flags,
        window=window,
        header_length=tcp_header_length,
        payload_length=payload_length,
    )
    ip = IpInfo(src, dst, 6, ip_length, header_length, ttl)
    return DecodedPacket(ts, LinkType.ETHERNET, ip, tcp=tcp, payload=b"\x00" * payload_length)


def make_session(specs, client=("10.0.0.1", 40000), server=("10.0.0.2", 443)) -> Session:
    """Build a Session from (ts, 'f'|'b', ip_length, payload_length, window, ttl) tuples.

    Entries may be shorter; missing fields take defaults. Lengths are taken at
    face value (feature code reads fields, it does not re-derive them).
    """
    packets = []
    for spec in specs:
        ts, direction = spec[0], spec[1]
        ip_length = spec[2] if len(spec) > 2 else 60
        payload_length = spec[3] if len(spec) > 3 else max(0, ip_length - 40)
        window = spec[4] if len(spec) > 4 else 65535
        ttl = spec[5] if len(spec) > 5 else 64
        if direction == "f":
            src, dst = client, server
            d = Direction.FORWARD
        else:
            src, dst = server, client
            d = Direction.BACKWARD
        p = DecodedPacket(
            ts,
            LinkType.ETHERNET,
            IpInfo(src[0], dst[0], 6, ip_length, 20, ttl),
            tcp=TcpInfo(src[1], dst[1], 0, 0x10, window, 20, payload_length),
            payload=b"\x00" * payload_length,
        )
        packets.append(DirectedPacket(p, d))
    key = FlowKey.from_packet(packets[0].packet)
    return Session(
        key=key,
        initiator=client,
        packets=packets,
        start_time=packets[0].packet.timestamp,
        end_time=packets[-1].packet.timestamp,
        close_reason=CloseReason.END_OF_CAPTURE,
    )


# ---------------------------------------------------------------------------
# independent oracles

def oracle_stats(xs) -> dict:
    """min/max/mean/median/population-std via plain loops and sorting."""
    n = len(xs)
    assert n > 0
    lo = hi = xs[0]
    total = 0.0
    for x in xs:
        lo = min(lo, x)
        hi = max(hi, x)
        total += x
    mean = total / n
    var = sum((x - mean) ** 2 for x in xs) / n
    ordered = sorted(xs)
    if n % 2 == 1:
        median = ordered[n // 2]
    else:
        median = (ordered[n // 2 - 1] + ordered[n // 2]) / 2.0
    return {"min": lo, "max": hi, "mean": mean, "median": median, "std": math.sqrt(var)}


def oracle_auc(scores, labels) -> float:
    """All-pairs count: positives beating negatives, ties half credit."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def oracle_confusion(y_true, y_pred) -> dict:
    tp = fp = tn = fn = 0
    for t, p in zip(y_true, y_pred):
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 0 and p == 0:
            tn += 1
        else:
            fn += 1
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn}
