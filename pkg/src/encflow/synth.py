"""Synthetic captures and datasets for demos and tests.

Builds deterministic PCAP/PCAPNG files from scripted TCP sessions (plaintext
or TLS with real DER certificates), and labeled synthetic feature rows for
exercising the evaluation harness without external data.
"""

from __future__ import annotations

import datetime
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .catalog import FOS_FEATURES, NUMERIC_SET_UNION
from .features import FeatureVector
from .pipeline import LabeledRow

ETH_SRC = bytes.fromhex("020000000001")
ETH_DST = bytes.fromhex("020000000002")


# ---------------------------------------------------------------------------
# capture files

def write_pcap(path, frames: Sequence[tuple], nanosecond: bool = False, linktype: int = 1) -> None:
    """Write (timestamp_us, frame_bytes) pairs as a classic little-endian pcap."""
    magic = 0xA1B23C4D if nanosecond else 0xA1B2C3D4
    with open(path, "wb") as fp:
        fp.write(struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 0x40000, linktype))
        for ts_us, data in frames:
            sec, rem = divmod(ts_us, 1_000_000)
            frac = rem * 1000 if nanosecond else rem
            fp.write(struct.pack("<IIII", sec, frac, len(data), len(data)))
            fp.write(data)


def write_pcapng(path, frames: Sequence[tuple], linktype: int = 1) -> None:
    """Write the same frames as a minimal PCAPNG (SHB + IDB + EPBs)."""

    def block(block_type: int, body: bytes) -> bytes:
        padded = body + b"\x00" * (-len(body) % 4)
        total = 12 + len(padded)
        return struct.pack("<II", block_type, total) + padded + struct.pack("<I", total)

    shb = block(0x0A0D0D0A, struct.pack("<IHHq", 0x1A2B3C4D, 1, 0, -1))
    idb = block(0x00000001, struct.pack("<HHI", linktype, 0, 0x40000))
    with open(path, "wb") as fp:
        fp.write(shb)
        fp.write(idb)
        for ts_us, data in frames:
            body = struct.pack("<IIIII", 0, ts_us >> 32, ts_us & 0xFFFFFFFF, len(data), len(data)) + data
            fp.write(block(0x00000006, body))


# ---------------------------------------------------------------------------
# frame crafting

def ethernet_frame(payload: bytes, ethertype: int = 0x0800) -> bytes:
    return ETH_DST + ETH_SRC + struct.pack(">H", ethertype) + payload


def arp_frame() -> bytes:
    body = struct.pack(">HHBBH", 1, 0x0800, 6, 4, 1) + b"\x00" * 20
    return ethernet_frame(body, ethertype=0x0806)


def ipv4_packet(src_ip: str, dst_ip: str, protocol: int, body: bytes, ttl: int = 64, ident: int = 0) -> bytes:
    total = 20 + len(body)
    header = struct.pack(
        ">BBHHHBBH4s4s",
        0x45,
        0,
        total,
        ident,
        0,
        ttl,
        protocol,
        0,
        bytes(int(x) for x in src_ip.split(".")),
        bytes(int(x) for x in dst_ip.split(".")),
    )
    return header + body


def tcp_segment(sport: int, dport: int, seq: int, ack: int, flags: int, window: int, payload: bytes = b"") -> bytes:
    header = struct.pack(">HHIIHHHH", sport, dport, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, (5 << 12) | flags, window, 0, 0)
    return header + payload


def icmp_echo_frame(src_ip: str = "10.0.0.1", dst_ip: str = "10.0.0.2") -> bytes:
    body = struct.pack(">BBHHH", 8, 0, 0, 1, 1) + b"ping"
    return ethernet_frame(ipv4_packet(src_ip, dst_ip, 1, body))


FLAG_FIN = 0x01
FLAG_SYN = 0x02
FLAG_RST = 0x04
FLAG_PSH = 0x08
FLAG_ACK = 0x10


@dataclass
class ScriptedTcpSession:
    """Deterministic two-endpoint TCP exchange; emits frames plus a packet log."""

    client_ip: str = "10.0.0.1"
    client_port: int = 49152
    server_ip: str = "10.0.0.2"
    server_port: int = 443
    start_us: int = 1_700_000_000_000_000
    client_ttl: int = 64
    server_ttl: int = 60
    client_window: int = 64240
    server_window: int = 29200
    frames: list = field(default_factory=list)
    packet_log: list = field(default_factory=list)

    def __post_init__(self):
        self._ts = self.start_us
        self._client_seq = 1000
        self._server_seq = 9000
        self._ident = 1

    def _emit(self, from_client: bool, flags: int, payload: bytes, window: Optional[int]) -> None:
        if from_client:
            src, dst = (self.client_ip, self.client_port), (self.server_ip, self.server_port)
            seq, ack = self._client_seq, self._server_seq
            ttl = self.client_ttl
            win = window if window is not None else self.client_window
        else:
            src, dst = (self.server_ip, self.server_port), (self.client_ip, self.client_port)
            seq, ack = self._server_seq, self._client_seq
            ttl = self.server_ttl
            win = window if window is not None else self.server_window
        segment = tcp_segment(src[1], dst[1], seq, ack, flags, win, payload)
        packet = ipv4_packet(src[0], dst[0], 6, segment, ttl=ttl, ident=self._ident)
        self._ident += 1
        self.frames.append((self._ts, ethernet_frame(packet)))
        self.packet_log.append(
            {
                "timestamp": self._ts,
                "from_client": from_client,
                "ip_length": 20 + len(segment),
                "payload_length": len(payload),
                "window": win,
                "ttl": ttl,
            }
        )
        consumed = len(payload) + (1 if flags & (FLAG_SYN | FLAG_FIN) else 0)
        if from_client:
            self._client_seq += consumed
        else:
            self._server_seq += consumed

    def step(self, gap_us: int) -> None:
        self._ts += gap_us

    def handshake(self, gap_us: int = 1000) -> None:
        self._emit(True, FLAG_SYN, b"", None)
        self.step(gap_us)
        self._emit(False, FLAG_SYN | FLAG_ACK, b"", None)
        self.step(gap_us)
        self._emit(True, FLAG_ACK, b"", None)

    def send(self, from_client: bool, payload: bytes, gap_us: int = 10_000, window: Optional[int] = None) -> None:
        self.step(gap_us)
        self._emit(from_client, FLAG_ACK | FLAG_PSH, payload, window)

    def send_split(self, from_client: bool, payload: bytes, chunk: int, gap_us: int = 10_000) -> None:
        """Send one byte stream across several segments (exercises reassembly)."""
        for i in range(0, len(payload), chunk):
            self.send(from_client, payload[i : i + chunk], gap_us=gap_us)

    def finish(self, gap_us: int = 5_000) -> None:
        self.step(gap_us)
        self._emit(True, FLAG_FIN | FLAG_ACK, b"", None)
        self.step(gap_us)
        self._emit(False, FLAG_FIN | FLAG_ACK, b"", None)
        self.step(gap_us)
        self._emit(True, FLAG_ACK, b"", None)

    def reset(self, from_client: bool = False, gap_us: int = 5_000) -> None:
        self.step(gap_us)
        self._emit(from_client, FLAG_RST | FLAG_ACK, b"", None)


# ---------------------------------------------------------------------------
# TLS message crafting

def tls_record(content_type: int, payload: bytes, version: int = 0x0303) -> bytes:
    return struct.pack(">BHH", content_type, version, len(payload)) + payload


def handshake_message(hs_type: int, body: bytes) -> bytes:
    return struct.pack(">B", hs_type) + len(body).to_bytes(3, "big") + body


def _extension(ext_type: int, data: bytes) -> bytes:
    return struct.pack(">HH", ext_type, len(data)) + data


def client_hello(
    sni: Optional[str] = None,
    ciphers: Sequence[int] = (0xC02F, 0xC030, 0x009E),
    session_id: bytes = b"",
    tls13: bool = False,
) -> bytes:
    body = struct.pack(">H", 0x0303) + bytes(32)
    body += struct.pack(">B", len(session_id)) + session_id
    body += struct.pack(">H", len(ciphers) * 2) + b"".join(struct.pack(">H", c) for c in ciphers)
    body += b"\x01\x00"  # one compression method: null
    extensions = b""
    if sni is not None:
        name = sni.encode()
        entry = struct.pack(">BH", 0, len(name)) + name
        extensions += _extension(0, struct.pack(">H", len(entry)) + entry)
    if tls13:
        extensions += _extension(43, b"\x02\x03\x04")
    body += struct.pack(">H", len(extensions)) + extensions
    return handshake_message(1, body)


def server_hello(
    cipher: int = 0xC02F,
    session_id: bytes = b"",
    tls13: bool = False,
    psk: bool = False,
    legacy_version: int = 0x0303,
) -> bytes:
    body = struct.pack(">H", legacy_version) + bytes(32)
    body += struct.pack(">B", len(session_id)) + session_id
    body += struct.pack(">H", cipher) + b"\x00"
    extensions = b""
    if tls13:
        extensions += _extension(43, struct.pack(">H", 0x0304))
    if psk:
        extensions += _extension(41, struct.pack(">H", 0))
    body += struct.pack(">H", len(extensions)) + extensions
    return handshake_message(2, body)


def certificate_message(ders: Sequence[bytes]) -> bytes:
    entries = b"".join(len(d).to_bytes(3, "big") + bytes(d) for d in ders)
    return handshake_message(11, len(entries).to_bytes(3, "big") + entries)


def server_hello_done() -> bytes:
    return handshake_message(14, b"")


def change_cipher_spec() -> bytes:
    return tls_record(20, b"\x01")


def app_data(n: int, fill: int = 0x41) -> bytes:
    return tls_record(23, bytes([fill]) * n)


def tls_session(
    session: ScriptedTcpSession,
    sni: Optional[str],
    cert_ders: Sequence[bytes] = (),
    tls13: bool = False,
    resumed: bool = False,
    app_rounds: int = 2,
    split_server_flight: bool = False,
) -> ScriptedTcpSession:
    """Script a full TLS exchange onto a TCP session."""
    session.handshake()
    session_id = b"\x11" * 16 if resumed and not tls13 else b""
    session.send(True, tls_record(22, client_hello(sni=sni, session_id=session_id, tls13=tls13), version=0x0301))
    if tls13:
        flight = tls_record(22, server_hello(session_id=session_id, tls13=True, psk=resumed))
        flight += change_cipher_spec()
        flight += app_data(900)  # encrypted extensions + certificate, opaque
        session.send(False, flight)
        session.send(True, change_cipher_spec() + app_data(80))
    elif resumed:
        flight = tls_record(22, server_hello(session_id=session_id)) + change_cipher_spec() + app_data(64)
        session.send(False, flight)
        session.send(True, change_cipher_spec() + app_data(64))
    else:
        flight = tls_record(22, server_hello() + certificate_message(cert_ders) + server_hello_done())
        if split_server_flight:
            session.send_split(False, flight, chunk=len(flight) // 2 + 1)
        else:
            session.send(False, flight)
        session.send(True, tls_record(22, handshake_message(16, bytes(66))) + change_cipher_spec() + app_data(40))
        session.send(False, change_cipher_spec() + app_data(40))
    for i in range(app_rounds):
        session.send(True, app_data(120 + 16 * i), window=session.client_window - 400 * (i + 1))
        session.send(False, app_data(400 + 32 * i))
    session.finish()
    return session


HTTP_REQUEST = b"GET / HTTP/1.1\r\nHost: plain.example\r\n\r\n"
HTTP_RESPONSE = b"HTTP/1.1 200 OK\r\nContent-Length: 64\r\n\r\n" + b"x" * 64


def plain_session(session: ScriptedTcpSession, rounds: int = 2) -> ScriptedTcpSession:
    session.handshake()
    for _ in range(rounds):
        session.send(True, HTTP_REQUEST)
        session.send(False, HTTP_RESPONSE)
    session.finish()
    return session


# ---------------------------------------------------------------------------
# certificates

def make_certificate(
    common_name: str,
    san: Sequence[str] = (),
    key_bits: int = 2048,
    validity_days: int = 30,
    not_before: Optional[datetime.datetime] = None,
    issuer: Optional[tuple] = None,
):
    """Self-signed unless `issuer` = (issuer_cert, issuer_key); returns (der, cert, key)."""
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import rsa
    from cryptography.x509.oid import NameOID

    key = rsa.generate_private_key(public_exponent=65537, key_size=key_bits)
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, common_name)])
    if issuer is None:
        issuer_name, signing_key = subject, key
    else:
        issuer_cert, signing_key = issuer
        issuer_name = issuer_cert.subject
    start = not_before or datetime.datetime(2023, 6, 1, tzinfo=datetime.timezone.utc)
    builder = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(issuer_name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(start)
        .not_valid_after(start + datetime.timedelta(days=validity_days))
    )
    if san:
        builder = builder.add_extension(
            x509.SubjectAlternativeName([x509.DNSName(name) for name in san]), critical=False
        )
    cert = builder.sign(signing_key, hashes.SHA256())
    return cert.public_bytes(serialization.Encoding.DER), cert, key


def make_chain(leaf_cn: str, san: Sequence[str], ca_cn: str = "Synthetic Test CA", leaf_bits: int = 2048):
    """Two-certificate chain (leaf signed by a CA); returns [leaf_der, ca_der]."""
    ca_der, ca_cert, ca_key = make_certificate(ca_cn, validity_days=3650, key_bits=2048)
    leaf_der, _, _ = make_certificate(leaf_cn, san=san, key_bits=leaf_bits, issuer=(ca_cert, ca_key))
    return [leaf_der, ca_der]


# ---------------------------------------------------------------------------
# synthetic labeled feature rows

def gaussian_rows(
    n: int,
    seed: int,
    feature_names: Sequence[str] = NUMERIC_SET_UNION,
    class1_shift: Optional[dict] = None,
    default_shift: float = 4.0,
    source_dataset: str = "synthetic",
    id_prefix: str = "row",
) -> list:
    """Balanced two-class rows: unit-variance noise, class 1 shifted per feature.

    class1_shift maps feature name -> shift; features absent from the map use
    default_shift. Pass default_shift=0.0 plus an explicit map to concentrate
    the signal on chosen features.
    """
    rng = np.random.default_rng(seed)
    shifts = {name: default_shift for name in feature_names}
    shifts.update(class1_shift or {})
    rows = []
    for i in range(n):
        label = i % 2
        values = {}
        for name in feature_names:
            base = rng.normal(0.0, 1.0)
            values[name] = base + (shifts[name] if label == 1 else 0.0)
        rows.append(
            LabeledRow(
                session_id=f"{id_prefix}-{i:05d}",
                features=FeatureVector(values=values),
                label=label,
                source_dataset=source_dataset,
            )
        )
    return rows


def shuffle_labels(rows: Sequence[LabeledRow], seed: int) -> list:
    """Permute the label column across rows (class counts preserved)."""
    rng = np.random.default_rng(seed)
    labels = [r.label for r in rows]
    perm = rng.permutation(len(labels))
    return [
        LabeledRow(
            session_id=r.session_id,
            features=r.features,
            label=labels[perm[i]],
            source_dataset=r.source_dataset,
        )
        for i, r in enumerate(rows)
    ]


def shifted_sources(n_per_source: int, seed: int, feature_names: Sequence[str] = NUMERIC_SET_UNION) -> dict:
    """Two sources whose class signal lives on different features.

    A model trained on one source finds pure noise where it learned its
    signal, reproducing the cross-dataset degradation direction. Both signal
    features are drawn from the FOS set so an FOS-based model sees them.
    """
    names = list(feature_names)
    signals = [n for n in names if n in FOS_FEATURES][:2]
    if len(signals) < 2:
        signals = names[:2]
    return {
        "source_a": gaussian_rows(
            n_per_source,
            derive(seed, 0),
            names,
            class1_shift={signals[0]: 5.0},
            default_shift=0.0,
            source_dataset="source_a",
            id_prefix="a",
        ),
        "source_b": gaussian_rows(
            n_per_source,
            derive(seed, 1),
            names,
            class1_shift={signals[1]: 5.0},
            default_shift=0.0,
            source_dataset="source_b",
            id_prefix="b",
        ),
    }


def derive(seed: int, offset: int) -> int:
    return (seed * 1_000_003 + offset) % (2**31)
