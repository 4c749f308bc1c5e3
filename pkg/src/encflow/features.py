"""Protocol-agnostic numerical features over sessions and fixed packet windows.

All aggregates use population standard deviation (divisor N). Degenerate
inputs resolve to documented zeros so every feature value is finite:
aggregates of an empty series are 0, goodput and the rates are 0 for
zero-duration sessions, and the first packet's ratio-to-previous is the
neutral 1.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .catalog import (
    ALL_FEATURE_NAMES,
    CATALOG_VERSION,
    FEATURE_SET_MEMBERS,
    PACKET_FEATURES,
    FeatureSetName,
)
from .flows import Direction, FixedSession, Session, truncate_pad


class EmptyInput(ValueError):
    pass


class UnknownSet(KeyError):
    pass


class MissingFeature(KeyError):
    pass


@dataclass(frozen=True)
class Aggregate:
    min: float
    max: float
    mean: float
    median: float
    std: float

    def as_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "mean": self.mean, "median": self.median, "std": self.std}


def aggregate(xs: Sequence[float]) -> Aggregate:
    """Five-number summary; population STD; median of an even list is the middle mean."""
    if len(xs) == 0:
        raise EmptyInput("aggregate of empty input")
    arr = np.asarray(xs, dtype=np.float64)
    return Aggregate(
        min=float(arr.min()),
        max=float(arr.max()),
        mean=float(arr.mean()),
        median=float(np.median(arr)),
        std=float(arr.std()),
    )


_ZEROS = Aggregate(0.0, 0.0, 0.0, 0.0, 0.0)


def _agg(xs: Sequence[float]) -> Aggregate:
    return aggregate(xs) if len(xs) else _ZEROS


@dataclass(frozen=True)
class FeatureVector:
    values: Mapping[str, float]
    catalog_version: str = CATALOG_VERSION

    def __post_init__(self):
        for name, value in self.values.items():
            if not math.isfinite(value):
                raise ValueError(f"non-finite feature value for {name}")


@dataclass(frozen=True)
class PacketFeatureRow:
    ip_length: float
    tcp_payload_length: float
    payload_ratio: float
    ratio_to_previous: float
    time_delta: float


def compute_packet_features(fs: FixedSession) -> list:
    """Per-slot feature rows for a fixed window; pad slots are all zeros."""
    rows = []
    prev_length = None
    prev_ts = None
    for row in fs.rows:
        if row.is_pad:
            rows.append(PacketFeatureRow(0.0, 0.0, 0.0, 0.0, 0.0))
            continue
        ratio_prev = 1.0 if prev_length is None else row.ip_length / prev_length
        delta = 0.0 if prev_ts is None else (row.timestamp - prev_ts) / 1e6
        rows.append(
            PacketFeatureRow(
                ip_length=float(row.ip_length),
                tcp_payload_length=float(row.tcp_payload_length),
                payload_ratio=row.tcp_payload_length / row.ip_length if row.ip_length else 0.0,
                ratio_to_previous=ratio_prev,
                time_delta=delta,
            )
        )
        prev_length = row.ip_length
        prev_ts = row.timestamp
    return rows


def window_feature_values(fs: FixedSession) -> dict:
    """Session materialization of the packet-granularity names: window means."""
    rows = compute_packet_features(fs)
    n = len(rows)
    means = {
        "ip_length": sum(r.ip_length for r in rows) / n,
        "tcp_payload_length": sum(r.tcp_payload_length for r in rows) / n,
        "payload_ratio": sum(r.payload_ratio for r in rows) / n,
        "ratio_to_previous": sum(r.ratio_to_previous for r in rows) / n,
        "time_delta": sum(r.time_delta for r in rows) / n,
    }
    return means


def _payload_length(p) -> int:
    return p.tcp.payload_length if p.tcp is not None else len(p.payload)


def _inter_arrivals(timestamps: Sequence[int]) -> list:
    return [(b - a) / 1e6 for a, b in zip(timestamps, timestamps[1:])]


def compute_session_features(s: Session) -> FeatureVector:
    """Feature vector over the session-granularity catalog names (full session)."""
    if not s.packets:
        raise EmptyInput("session has no packets")
    packets = [dp.packet for dp in s.packets]
    directions = [dp.direction for dp in s.packets]
    ip_lengths = [p.ip.total_length for p in packets]
    payloads = [_payload_length(p) for p in packets]
    windows = [p.tcp.window if p.tcp else 0 for p in packets]
    headers = [p.ip.header_length for p in packets]
    ttls = [p.ip.ttl for p in packets]
    stamps = [p.timestamp for p in packets]

    fwd = [i for i, d in enumerate(directions) if d is Direction.FORWARD]
    bwd = [i for i, d in enumerate(directions) if d is Direction.BACKWARD]
    pick = lambda xs, idx: [xs[i] for i in idx]

    time_deltas = _inter_arrivals(stamps)
    payload_ratios = [payloads[i] / ip_lengths[i] if ip_lengths[i] else 0.0 for i in range(len(packets))]
    ratio_prev = [1.0] + [
        ip_lengths[i] / ip_lengths[i - 1] if ip_lengths[i - 1] else 0.0 for i in range(1, len(packets))
    ]

    series = {
        "ip_length": ip_lengths,
        "tcp_payload_length": payloads,
        "tcp_window": windows,
        "ip_header_length": headers,
        "ttl": ttls,
        "time_delta": time_deltas,
        "payload_ratio": payload_ratios,
        "ratio_to_previous": ratio_prev,
        "forward_inter_arrival": _inter_arrivals(pick(stamps, fwd)),
        "backward_inter_arrival": _inter_arrivals(pick(stamps, bwd)),
        "forward_ip_length": pick(ip_lengths, fwd),
        "backward_ip_length": pick(ip_lengths, bwd),
        "forward_tcp_payload_length": pick(payloads, fwd),
        "backward_tcp_payload_length": pick(payloads, bwd),
        "forward_ip_header_length": pick(headers, fwd),
        "backward_ip_header_length": pick(headers, bwd),
        "forward_tcp_window": pick(windows, fwd),
        "backward_tcp_window": pick(windows, bwd),
    }

    values: dict = {}
    for stem, xs in series.items():
        agg = _agg(xs)
        for agg_name, value in agg.as_dict().items():
            values[f"{agg_name}_{stem}"] = value

    duration = (s.end_time - s.start_time) / 1e6
    fwd_stamps, bwd_stamps = pick(stamps, fwd), pick(stamps, bwd)
    total_ip = float(sum(ip_lengths))
    total_payload = float(sum(payloads))
    min_ip = min(ip_lengths)

    values.update(
        {
            "source_port": float(s.initiator[1]),
            "destination_port": float(s.responder[1]),
            "flow_duration": duration,
            "forward_duration": (fwd_stamps[-1] - fwd_stamps[0]) / 1e6 if len(fwd_stamps) >= 2 else 0.0,
            "backward_duration": (bwd_stamps[-1] - bwd_stamps[0]) / 1e6 if len(bwd_stamps) >= 2 else 0.0,
            "total_payload": total_payload,
            "total_forward_payload": float(sum(pick(payloads, fwd))),
            "total_backward_payload": float(sum(pick(payloads, bwd))),
            "total_ip_bytes": total_ip,
            "total_forward_ip_bytes": float(sum(pick(ip_lengths, fwd))),
            "total_backward_ip_bytes": float(sum(pick(ip_lengths, bwd))),
            "packet_count": float(len(packets)),
            "forward_packet_count": float(len(fwd)),
            "backward_packet_count": float(len(bwd)),
            "ipratio": max(ip_lengths) / min_ip if min_ip else 0.0,
            "goodput": total_ip / duration if duration > 0 else 0.0,
            "tcp_window_change_count": float(sum(1 for a, b in zip(windows, windows[1:]) if a != b)),
            "packet_rate": len(packets) / duration if duration > 0 else 0.0,
            "payload_rate": total_payload / duration if duration > 0 else 0.0,
        }
    )
    return FeatureVector(values=values)


def featurize_session(s: Session, window_size: int = 15) -> FeatureVector:
    """Full-catalog vector: session features plus the window-mean packet features."""
    values = dict(compute_session_features(s).values)
    values.update(window_feature_values(truncate_pad(s, window_size)))
    assert set(values) == set(ALL_FEATURE_NAMES)
    return FeatureVector(values=values)


def select_set(v: FeatureVector, name: FeatureSetName) -> FeatureVector:
    """Project a full-catalog vector onto a named feature set, values unchanged."""
    if not isinstance(name, FeatureSetName):
        try:
            name = FeatureSetName(str(name).upper())
        except ValueError as exc:
            raise UnknownSet(str(name)) from exc
    members = FEATURE_SET_MEMBERS.get(name)
    if members is None:
        raise UnknownSet(name)
    missing = [m for m in members if m not in v.values]
    if missing:
        raise MissingFeature(f"vector lacks {missing[:3]}{'...' if len(missing) > 3 else ''}")
    return FeatureVector(
        values={m: v.values[m] for m in members},
        catalog_version=v.catalog_version,
    )


PACKET_FEATURE_NAMES = tuple(name for name, _ in PACKET_FEATURES)
