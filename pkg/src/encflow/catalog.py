"""Canonical feature catalog: names, granularities, definitions, and the named sets.

Feature names are frozen snake_case strings; CSV headers use them verbatim.
The full profile is the 37 curated names plus systematic statistical
extensions (five aggregates over each per-packet and directional series),
114 names in total. Packet-granularity names are materialized per session as
the mean over the fixed packet window, zero pad rows included, so short and
long sessions stay distinguishable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

CATALOG_VERSION = "1.0"

AGGREGATES = ("min", "max", "mean", "median", "std")

# Per-packet and per-direction series that receive the five aggregates.
SERIES = (
    ("ip_length", "IP packet total length, bytes"),
    ("tcp_payload_length", "TCP payload length, bytes"),
    ("tcp_window", "TCP window size value"),
    ("ip_header_length", "IP header length, bytes"),
    ("ttl", "IP time to live"),
    ("time_delta", "time difference between consecutive packets, seconds"),
    ("payload_ratio", "per-packet TCP payload length / IP length"),
    ("ratio_to_previous", "per-packet IP length / previous IP length (first packet: 1.0)"),
    ("forward_inter_arrival", "interval of arrival time of forward traffic, seconds"),
    ("backward_inter_arrival", "interval of arrival time of backward traffic, seconds"),
    ("forward_ip_length", "forward packet IP length, bytes"),
    ("backward_ip_length", "backward packet IP length, bytes"),
    ("forward_tcp_payload_length", "forward TCP payload length, bytes"),
    ("backward_tcp_payload_length", "backward TCP payload length, bytes"),
    ("forward_ip_header_length", "forward IP header length, bytes"),
    ("backward_ip_header_length", "backward IP header length, bytes"),
    ("forward_tcp_window", "forward TCP window size value"),
    ("backward_tcp_window", "backward TCP window size value"),
)

SCALARS = (
    ("source_port", "transport port of the session initiator"),
    ("destination_port", "transport port of the responder"),
    ("flow_duration", "session duration, seconds"),
    ("forward_duration", "time span of forward traffic, seconds"),
    ("backward_duration", "time span of backward traffic, seconds"),
    ("total_payload", "sum of TCP payload bytes, both directions"),
    ("total_forward_payload", "sum of forward TCP payload bytes"),
    ("total_backward_payload", "sum of backward TCP payload bytes"),
    ("total_ip_bytes", "sum of IP packet lengths, both directions"),
    ("total_forward_ip_bytes", "sum of forward IP packet lengths"),
    ("total_backward_ip_bytes", "sum of backward IP packet lengths"),
    ("packet_count", "number of packets in the session"),
    ("forward_packet_count", "number of forward packets"),
    ("backward_packet_count", "number of backward packets"),
    ("ipratio", "maximum IP length / minimum IP length"),
    ("goodput", "total IP bytes / flow duration (0 when duration is 0)"),
    ("tcp_window_change_count", "number of consecutive-packet TCP window value changes"),
    ("packet_rate", "packets per second (0 when duration is 0)"),
    ("payload_rate", "payload bytes per second (0 when duration is 0)"),
)

# Packet-granularity names (the per-window features); session value = window mean.
PACKET_FEATURES = (
    ("ip_length", "length of IP packets over the fixed window (session value: window mean)"),
    ("tcp_payload_length", "length of TCP payload over the fixed window (session value: window mean)"),
    ("payload_ratio", "TCP payload / IP length per window slot (session value: window mean)"),
    ("ratio_to_previous", "IP length / previous IP length per window slot (session value: window mean)"),
    ("time_delta", "seconds since previous packet per window slot (session value: window mean)"),
)


class Granularity(Enum):
    PACKET = "packet"
    SESSION = "session"


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    granularity: Granularity
    definition: str


@dataclass(frozen=True)
class FeatureCatalog:
    entries: tuple
    version: str = CATALOG_VERSION

    @property
    def names(self) -> tuple:
        return tuple(e.name for e in self.entries)


def build_catalog() -> FeatureCatalog:
    entries = []
    for stem, definition in SERIES:
        for agg in AGGREGATES:
            entries.append(CatalogEntry(f"{agg}_{stem}", Granularity.SESSION, f"{agg} of {definition}"))
    for name, definition in SCALARS:
        entries.append(CatalogEntry(name, Granularity.SESSION, definition))
    for name, definition in PACKET_FEATURES:
        entries.append(CatalogEntry(name, Granularity.PACKET, definition))
    names = [e.name for e in entries]
    assert len(names) == len(set(names)), "catalog names must be unique"
    return FeatureCatalog(entries=tuple(entries))


CATALOG = build_catalog()
ALL_FEATURE_NAMES = CATALOG.names


class FeatureSetName(Enum):
    FOS = "FOS"
    TOP10 = "TOP10"
    SIDE_CHANNEL = "SIDE_CHANNEL"
    TAMPER_RESISTANT = "TAMPER_RESISTANT"
    TIME_BASED = "TIME_BASED"
    FOTS = "FOTS"
    FULL = "FULL"


FOS_FEATURES = (
    "mean_tcp_window",
    "source_port",
    "max_forward_inter_arrival",
    "max_backward_inter_arrival",
    "flow_duration",
    "std_backward_inter_arrival",
    "total_forward_payload",
    "std_ip_length",
    "max_time_delta",
    "std_forward_ip_length",
    "max_tcp_payload_length",
    "mean_ttl",
    "std_ttl",
    "forward_duration",
)

TOP10_FEATURES = (
    "mean_tcp_window",
    "source_port",
    "mean_ip_header_length",
    "max_forward_inter_arrival",
    "mean_backward_ip_header_length",
    "max_backward_inter_arrival",
    "std_backward_ip_length",
    "flow_duration",
    "backward_duration",
    "total_payload",
)

SIDE_CHANNEL_FEATURES = (
    "ip_length",
    "tcp_payload_length",
    "payload_ratio",
    "ratio_to_previous",
    "time_delta",
)

TAMPER_RESISTANT_FEATURES = (
    "flow_duration",
    "total_forward_payload",
    "min_tcp_payload_length",
    "mean_tcp_payload_length",
    "median_tcp_payload_length",
    "std_ip_length",
    "ipratio",
    "goodput",
)

TIME_BASED_FEATURES = (
    "source_port",
    "destination_port",
    "max_forward_inter_arrival",
    "max_backward_inter_arrival",
    "flow_duration",
    "std_time_delta",
    "min_time_delta",
    "std_backward_inter_arrival",
    "std_forward_inter_arrival",
    "min_backward_inter_arrival",
    "mean_forward_inter_arrival",
    "mean_backward_inter_arrival",
    "min_forward_inter_arrival",
)

# TLS/SSL block: the published members plus documented extensions, 22 names.
FOTS_FEATURES = (
    "client_payload_bytes",
    "responder_client_byte_ratio",
    "certificate_count",
    "tls_version_ordinal",
    "sni_in_san_dns",
    "distinct_sni",
    "distinct_subject",
    "mean_cert_validity",
    "cn_in_san",
    "san_domain_count",
    "mean_san_domains",
    "mean_key_bits",
    "std_key_bits",
    "min_key_bits",
    "max_key_bits",
    "std_cert_validity",
    "self_signed_ratio",
    "same_issuer_ratio",
    "resumption_flag",
    "offered_cipher_count",
    "expired_at_capture",
    "sni_present",
)

FOTS_DEFINITIONS = {
    "client_payload_bytes": "payload bytes sent by the client",
    "responder_client_byte_ratio": "server payload bytes / client payload bytes (0 when client sent none)",
    "certificate_count": "number of certificates resolved for the session",
    "tls_version_ordinal": "negotiated version: ssl3=0, tls1_0=1, tls1_1=2, tls1_2=3, tls1_3=4, unknown=-1",
    "sni_in_san_dns": "1 iff the SNI matches any certificate SAN entry (exact or single-label wildcard)",
    "distinct_sni": "1 iff the SNI is present and differs from the leaf certificate subject CN",
    "distinct_subject": "1 iff the chain carries two or more distinct subject strings",
    "mean_cert_validity": "mean certificate validity period, seconds",
    "cn_in_san": "1 iff the leaf subject CN appears in its own SAN list (exact or wildcard)",
    "san_domain_count": "total SAN DNS entries across the chain",
    "mean_san_domains": "mean SAN DNS entries per certificate",
    "mean_key_bits": "mean public key size, bits",
    "std_key_bits": "population STD of public key size, bits",
    "min_key_bits": "minimum public key size, bits",
    "max_key_bits": "maximum public key size, bits",
    "std_cert_validity": "population STD of certificate validity, seconds",
    "self_signed_ratio": "fraction of chain certificates with subject equal to issuer",
    "same_issuer_ratio": "fraction of chain certificates sharing the most common issuer",
    "resumption_flag": "1 iff the handshake resumed a previous session",
    "offered_cipher_count": "number of cipher suites offered by the client",
    "expired_at_capture": "1 iff any chain certificate was outside its validity window at session start",
    "sni_present": "1 iff the ClientHello carried an SNI",
}

FEATURE_SET_MEMBERS = {
    FeatureSetName.FOS: FOS_FEATURES,
    FeatureSetName.TOP10: TOP10_FEATURES,
    FeatureSetName.SIDE_CHANNEL: SIDE_CHANNEL_FEATURES,
    FeatureSetName.TAMPER_RESISTANT: TAMPER_RESISTANT_FEATURES,
    FeatureSetName.TIME_BASED: TIME_BASED_FEATURES,
    FeatureSetName.FOTS: FOTS_FEATURES,
    FeatureSetName.FULL: ALL_FEATURE_NAMES,
}

# The five protocol-agnostic sets used by the experiment grid.
NUMERIC_FEATURE_SETS = (
    FeatureSetName.FOS,
    FeatureSetName.TOP10,
    FeatureSetName.SIDE_CHANNEL,
    FeatureSetName.TAMPER_RESISTANT,
    FeatureSetName.TIME_BASED,
)

# Union of the five numeric sets, in catalog order (the 37 curated names).
NUMERIC_SET_UNION = tuple(
    name
    for name in ALL_FEATURE_NAMES
    if any(name in FEATURE_SET_MEMBERS[s] for s in NUMERIC_FEATURE_SETS)
)


def catalog_markdown() -> str:
    """Render the catalog (and the TLS block) as a markdown document."""
    lines = [
        "# Feature catalog",
        "",
        f"Version: {CATALOG_VERSION}. Names are frozen; CSV headers use them verbatim.",
        "",
        "| name | granularity | definition |",
        "| --- | --- | --- |",
    ]
    for e in CATALOG.entries:
        lines.append(f"| {e.name} | {e.granularity.value} | {e.definition} |")
    lines += [
        "",
        "## Named feature sets",
        "",
    ]
    for set_name in NUMERIC_FEATURE_SETS:
        members = ", ".join(FEATURE_SET_MEMBERS[set_name])
        lines.append(f"- **{set_name.value}** ({len(FEATURE_SET_MEMBERS[set_name])}): {members}")
    lines += [
        "",
        "## TLS/SSL feature block (FOTS-compatible, 22 names)",
        "",
        "| name | definition |",
        "| --- | --- |",
    ]
    for name in FOTS_FEATURES:
        lines.append(f"| {name} | {FOTS_DEFINITIONS[name]} |")
    lines += [
        "",
        "Notes:",
        "- `source_port` / `destination_port` membership follows the published table",
        "  exactly, including the port entries inside FOS and the time-based set.",
        "- Packet-granularity names take the window mean over exactly `window_size`",
        "  slots (default 15), zero pad rows included.",
        "- Aggregates over an empty series (e.g. a direction with fewer than two",
        "  packets) are 0 by convention so vectors stay finite.",
        "",
    ]
    return "\n".join(lines)
