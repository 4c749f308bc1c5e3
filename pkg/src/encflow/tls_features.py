"""TLS/SSL feature block computed from connection bundles.

Booleans are encoded 0/1, the negotiated version ordinally. Certificate
features are order-free aggregates over the resolved chain and fall back to 0
when no certificates resolve; a bundle without an SSL record keeps its
connection-derived fields and zeroes the TLS-derived ones.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .catalog import FOTS_FEATURES
from .features import FeatureVector
from .pipeline import LabeledRow
from .tls import ConnectionBundle


class UnlabeledBundle(KeyError):
    pass


@dataclass(frozen=True)
class FotsVector:
    values: Mapping[str, float]
    bundle_id: str


def hostname_matches(host: str, pattern: str) -> bool:
    """Exact match or single left-most wildcard label, case-insensitive."""
    host, pattern = host.lower().rstrip("."), pattern.lower().rstrip(".")
    if pattern.startswith("*."):
        suffix = pattern[2:]
        if not suffix:
            return False
        head, _, tail = host.partition(".")
        return bool(head) and tail == suffix
    return host == pattern


def _std(xs) -> float:
    return float(np.asarray(xs, dtype=np.float64).std()) if xs else 0.0


def _mean(xs) -> float:
    return float(np.mean(xs)) if xs else 0.0


def compute_fots(b: ConnectionBundle) -> FotsVector:
    conn, ssl, certs = b.conn, b.ssl, b.certs
    values = {name: 0.0 for name in FOTS_FEATURES}
    values["client_payload_bytes"] = float(conn.client_bytes)
    values["responder_client_byte_ratio"] = (
        conn.server_bytes / conn.client_bytes if conn.client_bytes > 0 else 0.0
    )
    if ssl is None:
        return FotsVector(values=values, bundle_id=conn.uid)

    values["tls_version_ordinal"] = float(ssl.tls_version.ordinal)
    values["resumption_flag"] = 1.0 if ssl.resumed else 0.0
    values["offered_cipher_count"] = float(len(ssl.cipher_suites_offered))
    values["sni_present"] = 1.0 if ssl.sni else 0.0
    values["certificate_count"] = float(len(certs))

    if certs:
        key_bits = [c.public_key_bits for c in certs]
        validities = [c.validity_s for c in certs]
        san_counts = [len(c.san_dns) for c in certs]
        issuers = [c.issuer for c in certs]
        values["mean_key_bits"] = _mean(key_bits)
        values["std_key_bits"] = _std(key_bits)
        values["min_key_bits"] = float(min(key_bits))
        values["max_key_bits"] = float(max(key_bits))
        values["mean_cert_validity"] = _mean(validities)
        values["std_cert_validity"] = _std(validities)
        values["san_domain_count"] = float(sum(san_counts))
        values["mean_san_domains"] = _mean(san_counts)
        values["self_signed_ratio"] = sum(1 for c in certs if c.self_signed) / len(certs)
        values["same_issuer_ratio"] = max(issuers.count(i) for i in issuers) / len(certs)
        values["distinct_subject"] = 1.0 if len({c.subject for c in certs}) >= 2 else 0.0

        start_s = conn.start_time / 1e6
        values["expired_at_capture"] = (
            1.0 if any(start_s < c.not_before or start_s > c.not_after for c in certs) else 0.0
        )
        leaf = certs[0]
        if leaf.subject_cn and any(hostname_matches(leaf.subject_cn, san) for san in leaf.san_dns):
            values["cn_in_san"] = 1.0
        if ssl.sni:
            if any(hostname_matches(ssl.sni, san) for c in certs for san in c.san_dns):
                values["sni_in_san_dns"] = 1.0
            if leaf.subject_cn and ssl.sni.lower() != leaf.subject_cn.lower():
                values["distinct_sni"] = 1.0

    return FotsVector(values=values, bundle_id=conn.uid)


def fots_dataset(
    bundles: Iterable[ConnectionBundle],
    labels: Mapping[str, int],
    source_dataset: str = "",
) -> tuple[list, int]:
    """LabeledRows over the TLS feature block; non-TLS bundles are excluded.

    Returns (rows, excluded_count). Every TLS bundle must have a label keyed
    by its connection uid, otherwise UnlabeledBundle is raised.
    """
    rows = []
    excluded = 0
    for b in bundles:
        if not b.tls_detected:
            excluded += 1
            continue
        if b.conn.uid not in labels:
            raise UnlabeledBundle(b.conn.uid)
        fv = compute_fots(b)
        rows.append(
            LabeledRow(
                session_id=b.conn.uid,
                features=FeatureVector(values=dict(fv.values)),
                label=int(labels[b.conn.uid]),
                source_dataset=source_dataset,
            )
        )
    return rows, excluded
