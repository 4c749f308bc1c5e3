"""End-to-end capture extraction: frames -> packets -> sessions -> feature rows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from .capture import DecodedPacket, FilterPolicy, TruncationNotice, decode_packet, filter_packet, open_capture
from .features import featurize_session
from .flows import Session, assemble
from .pipeline import LabeledRow
from .tls import CertificateStore, bundle_sessions, detect_tls, session_uid
from .tls_features import fots_dataset


@dataclass
class ExtractResult:
    rows: list
    fots_rows: list
    sessions: list
    bundles: list
    counts: dict
    truncation: Optional[TruncationNotice] = None
    drop_reasons: dict = field(default_factory=dict)


def extract_capture(
    path,
    label: int,
    source: str,
    window_size: int = 15,
    encrypted_only: bool = True,
    idle_timeout_s: float = 300.0,
    policy: Optional[FilterPolicy] = None,
    session_labels: Optional[Mapping[str, int]] = None,
    cert_store: Optional[CertificateStore] = None,
) -> ExtractResult:
    """Turn one capture into labeled feature rows (numeric catalog + TLS block).

    The capture-level label applies to every session unless a per-session
    label map (keyed by session id) overrides it.
    """
    policy = policy or FilterPolicy()
    frames = 0
    kept: list = []
    drop_reasons: dict = {}
    truncation = None
    for item in open_capture(path):
        if isinstance(item, TruncationNotice):
            truncation = item
            continue
        frames += 1
        packet = decode_packet(item)
        verdict = filter_packet(packet, policy)
        if verdict.kept and isinstance(packet, DecodedPacket) and packet.ports is not None:
            kept.append(packet)
        else:
            reason = verdict.reason or "transport"
            drop_reasons[reason] = drop_reasons.get(reason, 0) + 1
    sessions = assemble(kept, idle_timeout_s=idle_timeout_s)

    def label_for(s: Session) -> int:
        uid = session_uid(s)
        if session_labels and uid in session_labels:
            return int(session_labels[uid])
        return int(label)

    selected = []
    tls_count = 0
    for s in sessions:
        is_tls = detect_tls(s).is_tls
        tls_count += int(is_tls)
        if encrypted_only and not is_tls:
            continue
        selected.append(s)
    rows = [
        LabeledRow(
            session_id=session_uid(s),
            features=featurize_session(s, window_size=window_size),
            label=label_for(s),
            source_dataset=source,
        )
        for s in selected
    ]
    bundles = bundle_sessions(sessions, store=cert_store)
    fots_labels = {session_uid(s): label_for(s) for s in sessions}
    fots_rows, _ = fots_dataset(bundles, fots_labels, source_dataset=source)
    counts = {
        "frames": frames,
        "kept_packets": len(kept),
        "dropped_packets": frames - len(kept),
        "sessions": len(sessions),
        "tls_sessions": tls_count,
        "feature_rows": len(rows),
        "fots_rows": len(fots_rows),
    }
    return ExtractResult(
        rows=rows,
        fots_rows=fots_rows,
        sessions=sessions,
        bundles=bundles,
        counts=counts,
        truncation=truncation,
        drop_reasons=drop_reasons,
    )
