"""TLS session inspection: detection, handshake metadata, certificates, record linking.

A session is inspected into the three-record model used by protocol log files:
a connection summary, an SSL handshake record, and the certificate records it
references. Handshake bytes are recovered with minimal in-order per-direction
reassembly; application-data record contents are never touched.
"""

from __future__ import annotations

import hashlib
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Union

from cryptography import x509 as cx509
from cryptography.hazmat.primitives.asymmetric import dsa, ec, ed448, ed25519, rsa
from cryptography.x509.oid import NameOID

from .flows import Direction, Session

RECORD_CCS = 20
RECORD_ALERT = 21
RECORD_HANDSHAKE = 22
RECORD_APPDATA = 23
MAX_RECORD_LENGTH = 2**14 + 2048

HS_CLIENT_HELLO = 1
HS_SERVER_HELLO = 2
HS_CERTIFICATE = 11

EXT_SERVER_NAME = 0
EXT_PRE_SHARED_KEY = 41
EXT_SUPPORTED_VERSIONS = 43


class TlsVersion(Enum):
    SSL3 = "ssl3"
    TLS1_0 = "tls1_0"
    TLS1_1 = "tls1_1"
    TLS1_2 = "tls1_2"
    TLS1_3 = "tls1_3"
    UNKNOWN = "unknown"

    @property
    def ordinal(self) -> int:
        order = {"ssl3": 0, "tls1_0": 1, "tls1_1": 2, "tls1_2": 3, "tls1_3": 4}
        return order.get(self.value, -1)


_WIRE_VERSIONS = {
    0x0300: TlsVersion.SSL3,
    0x0301: TlsVersion.TLS1_0,
    0x0302: TlsVersion.TLS1_1,
    0x0303: TlsVersion.TLS1_2,
    0x0304: TlsVersion.TLS1_3,
}


class DuplicateUid(Exception):
    pass


class MalformedHandshake(Exception):
    def __init__(self, offset: int, reason: str = ""):
        super().__init__(f"malformed handshake at offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


class BadCertificate(Exception):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class NoHandshake:
    """Records were present but no parseable handshake; session still usable."""

    reason: str


@dataclass(frozen=True)
class TlsDetection:
    is_tls: bool
    first_record_offset: Optional[int] = None


@dataclass(frozen=True)
class ConnRecord:
    uid: str
    start_time: int  # microseconds
    duration_s: float
    client_bytes: int
    server_bytes: int
    client_packets: int
    server_packets: int


@dataclass(frozen=True)
class SslRecord:
    uid: str
    tls_version: TlsVersion
    sni: Optional[str]
    cipher_suites_offered: tuple
    selected_cipher: Optional[int]
    cert_chain_fuid: tuple
    resumed: bool


@dataclass(frozen=True)
class X509Record:
    fuid: str
    not_before: int  # epoch seconds
    not_after: int
    validity_s: int
    san_dns: tuple
    subject_cn: Optional[str]
    issuer: str
    subject: str
    public_key_bits: int
    self_signed: bool


@dataclass(frozen=True)
class ConnectionBundle:
    conn: ConnRecord
    ssl: Optional[SslRecord]
    certs: tuple
    missing_fuids: tuple = ()
    tls_detected: bool = False


def detect_tls(s: Session) -> TlsDetection:
    """True iff some forward payload begins a syntactically valid TLS record.

    The offset reported is the byte position within the concatenated forward
    payload stream where that record starts.
    """
    offset = 0
    for p in s.forward_packets():
        data = p.payload
        if len(data) >= 5:
            content_type = data[0]
            length = struct.unpack(">H", data[3:5])[0]
            if content_type in (RECORD_CCS, RECORD_ALERT, RECORD_HANDSHAKE, RECORD_APPDATA) and data[
                1
            ] == 0x03 and data[2] <= 0x04 and length <= MAX_RECORD_LENGTH:
                return TlsDetection(True, offset)
        offset += len(data)
    return TlsDetection(False, None)


def _direction_stream(s: Session, direction: Direction) -> bytes:
    """In-order payload bytes for one direction, retransmissions skipped by seq."""
    pkts = [
        dp.packet
        for dp in s.packets
        if dp.direction is direction and dp.packet.tcp is not None and dp.packet.tcp.payload_length > 0
    ]
    if not pkts:
        return b""
    pkts.sort(key=lambda p: (p.tcp.seq, p.timestamp))
    out = bytearray()
    next_seq = pkts[0].tcp.seq
    for p in pkts:
        seq, payload = p.tcp.seq, p.payload
        if seq == next_seq:
            out += payload
            next_seq = seq + len(payload)
        elif seq < next_seq:
            overlap = next_seq - seq
            if len(payload) > overlap:
                out += payload[overlap:]
                next_seq = seq + len(payload)
        else:
            break  # capture hole: stop, do not bridge
    return bytes(out)


def _handshake_bytes(stream: bytes) -> bytes:
    """Concatenated handshake-record payloads up to the first ChangeCipherSpec.

    Later records are encrypted (Finished in TLS 1.2, everything in TLS 1.3),
    so collection stops there; application data is never consumed.
    """
    out = bytearray()
    offset = 0
    while offset + 5 <= len(stream):
        content_type = stream[offset]
        length = struct.unpack(">H", stream[offset + 3 : offset + 5])[0]
        if stream[offset + 1] != 0x03 or stream[offset + 2] > 0x04 or length > MAX_RECORD_LENGTH:
            break
        if content_type == RECORD_CCS:
            break
        body = stream[offset + 5 : offset + 5 + length]
        if len(body) < length:
            if content_type == RECORD_HANDSHAKE:
                out += body
            break
        if content_type == RECORD_HANDSHAKE:
            out += body
        offset += 5 + length
    return bytes(out)


class _Cursor:
    __slots__ = ("data", "pos")

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedHandshake(self.pos, "field overruns message")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u24(self) -> int:
        b = self.take(3)
        return (b[0] << 16) | (b[1] << 8) | b[2]


def _iter_handshake_messages(hs: bytes):
    pos = 0
    while pos + 4 <= len(hs):
        msg_type = hs[pos]
        length = (hs[pos + 1] << 16) | (hs[pos + 2] << 8) | hs[pos + 3]
        if pos + 4 + length > len(hs):
            return  # incomplete tail (capture ended mid-message)
        yield msg_type, hs[pos + 4 : pos + 4 + length]
        pos += 4 + length


@dataclass
class _ClientHello:
    session_id: bytes = b""
    sni: Optional[str] = None
    ciphers: tuple = ()


@dataclass
class _ServerHello:
    session_id: bytes = b""
    version: TlsVersion = TlsVersion.UNKNOWN
    cipher: Optional[int] = None
    psk_selected: bool = False


def _parse_extensions(cur: _Cursor) -> list:
    exts = []
    if cur.pos >= len(cur.data):
        return exts
    total = cur.u16()
    end = cur.pos + total
    while cur.pos + 4 <= min(end, len(cur.data)):
        ext_type = cur.u16()
        ext_len = cur.u16()
        exts.append((ext_type, cur.take(ext_len)))
    return exts


def _parse_client_hello(body: bytes) -> _ClientHello:
    cur = _Cursor(body)
    cur.take(2 + 32)  # legacy version + random
    sid = cur.take(cur.u8())
    cipher_bytes = cur.take(cur.u16())
    ciphers = tuple(struct.unpack(f">{len(cipher_bytes) // 2}H", cipher_bytes[: len(cipher_bytes) // 2 * 2]))
    cur.take(cur.u8())  # compression methods
    sni = None
    for ext_type, ext_data in _parse_extensions(cur):
        if ext_type == EXT_SERVER_NAME and len(ext_data) >= 5:
            ecur = _Cursor(ext_data)
            ecur.u16()  # list length
            name_type = ecur.u8()
            name = ecur.take(ecur.u16())
            if name_type == 0 and name:
                try:
                    sni = name.decode("ascii")
                except UnicodeDecodeError:
                    sni = name.decode("utf-8", errors="replace")
    return _ClientHello(session_id=sid, sni=sni, ciphers=ciphers)


def _parse_server_hello(body: bytes) -> _ServerHello:
    cur = _Cursor(body)
    legacy = struct.unpack(">H", cur.take(2))[0]
    cur.take(32)
    sid = cur.take(cur.u8())
    cipher = cur.u16()
    cur.u8()  # compression
    version = _WIRE_VERSIONS.get(legacy, TlsVersion.UNKNOWN)
    psk = False
    for ext_type, ext_data in _parse_extensions(cur):
        if ext_type == EXT_SUPPORTED_VERSIONS and len(ext_data) >= 2:
            version = _WIRE_VERSIONS.get(struct.unpack(">H", ext_data[:2])[0], TlsVersion.UNKNOWN)
        elif ext_type == EXT_PRE_SHARED_KEY:
            psk = True
    return _ServerHello(session_id=sid, version=version, cipher=cipher, psk_selected=psk)


def _parse_certificate_message(body: bytes) -> list:
    cur = _Cursor(body)
    total = cur.u24()
    end = min(cur.pos + total, len(body))
    ders = []
    while cur.pos + 3 <= end:
        ders.append(bytes(cur.take(cur.u24())))
    return ders


@dataclass
class _HandshakeScan:
    client_hello: Optional[_ClientHello] = None
    server_hello: Optional[_ServerHello] = None
    cert_ders: list = field(default_factory=list)


def _scan_handshake(s: Session) -> _HandshakeScan:
    scan = _HandshakeScan()
    for direction in (Direction.FORWARD, Direction.BACKWARD):
        hs = _handshake_bytes(_direction_stream(s, direction))
        for msg_type, body in _iter_handshake_messages(hs):
            if msg_type == HS_CLIENT_HELLO and scan.client_hello is None:
                scan.client_hello = _parse_client_hello(body)
            elif msg_type == HS_SERVER_HELLO and scan.server_hello is None:
                scan.server_hello = _parse_server_hello(body)
            elif msg_type == HS_CERTIFICATE and not scan.cert_ders:
                scan.cert_ders = _parse_certificate_message(body)
    return scan


def certificate_fuid(der: bytes) -> str:
    """Content-addressed certificate id: identical DER bytes share one record."""
    return "X" + hashlib.sha256(der).hexdigest()[:32]


def parse_handshake(s: Session, uid: str = "") -> Union[SslRecord, NoHandshake]:
    """Extract handshake metadata from a TLS session.

    Returns NoHandshake when no ClientHello/ServerHello can be recovered;
    raises MalformedHandshake when a handshake message is structurally broken.
    """
    scan = _scan_handshake(s)
    ch, sh = scan.client_hello, scan.server_hello
    if ch is None and sh is None:
        return NoHandshake("no client or server hello recovered")
    version = sh.version if sh is not None else TlsVersion.UNKNOWN
    resumed = False
    if sh is not None:
        if version is TlsVersion.TLS1_3:
            resumed = sh.psk_selected
        elif ch is not None and ch.session_id:
            resumed = sh.session_id == ch.session_id
    return SslRecord(
        uid=uid,
        tls_version=version,
        sni=ch.sni if ch is not None else None,
        cipher_suites_offered=ch.ciphers if ch is not None else (),
        selected_cipher=sh.cipher if sh is not None else None,
        cert_chain_fuid=tuple(certificate_fuid(d) for d in scan.cert_ders),
        resumed=resumed,
    )


def handshake_certificates(s: Session) -> list:
    """DER certificate blobs carried by the session's handshake, in wire order."""
    return list(_scan_handshake(s).cert_ders)


def _public_key_bits(cert) -> int:
    key = cert.public_key()
    if isinstance(key, (rsa.RSAPublicKey, dsa.DSAPublicKey)):
        return key.key_size
    if isinstance(key, ec.EllipticCurvePublicKey):
        return key.curve.key_size
    if isinstance(key, ed25519.Ed25519PublicKey):
        return 256
    if isinstance(key, ed448.Ed448PublicKey):
        return 456
    return 0


def parse_certificate(der: bytes) -> X509Record:
    """Parse one DER certificate into an X509Record; raises BadCertificate."""
    try:
        cert = cx509.load_der_x509_certificate(bytes(der))
    except Exception as exc:
        raise BadCertificate(f"der parse failed: {exc}") from exc
    try:
        not_before = int(cert.not_valid_before_utc.timestamp())
        not_after = int(cert.not_valid_after_utc.timestamp())
    except Exception as exc:
        raise BadCertificate(f"bad validity: {exc}") from exc
    try:
        san_ext = cert.extensions.get_extension_for_class(cx509.SubjectAlternativeName)
        san_dns = tuple(san_ext.value.get_values_for_type(cx509.DNSName))
    except cx509.ExtensionNotFound:
        san_dns = ()
    except Exception as exc:
        raise BadCertificate(f"bad SAN extension: {exc}") from exc
    cn_attrs = cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
    subject_cn = str(cn_attrs[0].value) if cn_attrs else None
    subject = cert.subject.rfc4514_string()
    issuer = cert.issuer.rfc4514_string()
    try:
        bits = _public_key_bits(cert)
    except Exception:
        bits = 0
    return X509Record(
        fuid=certificate_fuid(bytes(der)),
        not_before=not_before,
        not_after=not_after,
        validity_s=not_after - not_before,
        san_dns=san_dns,
        subject_cn=subject_cn,
        issuer=issuer,
        subject=subject,
        public_key_bits=bits,
        self_signed=subject == issuer,
    )


class CertificateStore:
    """Insert-if-absent certificate table; identical DER dedupes to one record."""

    def __init__(self):
        self._records: dict = {}
        self._lock = threading.Lock()

    def add(self, der: bytes) -> tuple[str, Optional[X509Record]]:
        fuid = certificate_fuid(bytes(der))
        with self._lock:
            if fuid not in self._records:
                try:
                    self._records[fuid] = parse_certificate(der)
                except BadCertificate:
                    self._records[fuid] = None
            return fuid, self._records[fuid]

    def get(self, fuid: str) -> Optional[X509Record]:
        with self._lock:
            return self._records.get(fuid)

    def records(self) -> list:
        with self._lock:
            return sorted((r for r in self._records.values() if r is not None), key=lambda r: r.fuid)


def session_uid(s: Session) -> str:
    basis = f"{s.key.endpoint_a}|{s.key.endpoint_b}|{s.key.protocol}|{s.start_time}|{s.initiator}"
    return "C" + hashlib.sha256(basis.encode()).hexdigest()[:16]


def conn_record(s: Session, uid: Optional[str] = None) -> ConnRecord:
    fwd, bwd = s.forward_packets(), s.backward_packets()
    payload_len = lambda p: p.tcp.payload_length if p.tcp else len(p.payload)
    return ConnRecord(
        uid=uid or session_uid(s),
        start_time=s.start_time,
        duration_s=(s.end_time - s.start_time) / 1e6,
        client_bytes=sum(payload_len(p) for p in fwd),
        server_bytes=sum(payload_len(p) for p in bwd),
        client_packets=len(fwd),
        server_packets=len(bwd),
    )


def link_records(conns: Iterable[ConnRecord], ssls: Iterable[SslRecord], certs: Iterable[X509Record]) -> list:
    """Pure join of the three record kinds; invariant under input permutation."""
    conns, ssls, certs = list(conns), list(ssls), list(certs)
    for name, uids in (("conn", [c.uid for c in conns]), ("ssl", [r.uid for r in ssls]), ("x509", [x.fuid for x in certs])):
        if len(uids) != len(set(uids)):
            raise DuplicateUid(f"duplicate uid in {name} records")
    ssl_by_uid = {r.uid: r for r in ssls}
    cert_by_fuid = {x.fuid: x for x in certs}
    bundles = []
    for conn in sorted(conns, key=lambda c: c.uid):
        ssl = ssl_by_uid.get(conn.uid)
        resolved, missing = [], []
        if ssl is not None:
            for fuid in ssl.cert_chain_fuid:
                record = cert_by_fuid.get(fuid)
                if record is None:
                    missing.append(fuid)
                else:
                    resolved.append(record)
        bundles.append(
            ConnectionBundle(
                conn=conn,
                ssl=ssl,
                certs=tuple(resolved),
                missing_fuids=tuple(missing),
                tls_detected=ssl is not None,
            )
        )
    return bundles


def bundle_sessions(sessions: Iterable[Session], store: Optional[CertificateStore] = None, include_non_tls: bool = True) -> list:
    """One ConnectionBundle per session (always one per TLS-detected session)."""
    store = store or CertificateStore()
    bundles = []
    for s in sessions:
        conn = conn_record(s)
        detection = detect_tls(s)
        if not detection.is_tls:
            if include_non_tls:
                bundles.append(ConnectionBundle(conn=conn, ssl=None, certs=(), tls_detected=False))
            continue
        ssl: Optional[SslRecord] = None
        resolved, missing = [], []
        try:
            parsed = parse_handshake(s, uid=conn.uid)
        except MalformedHandshake:
            parsed = NoHandshake("malformed handshake")
        if isinstance(parsed, SslRecord):
            ssl = parsed
            for der in handshake_certificates(s):
                fuid, record = store.add(der)
                if record is None:
                    missing.append(fuid)
                else:
                    resolved.append(record)
        bundles.append(
            ConnectionBundle(
                conn=conn,
                ssl=ssl,
                certs=tuple(resolved),
                missing_fuids=tuple(missing),
                tls_detected=True,
            )
        )
    return bundles


def export_logs(bundles: Iterable[ConnectionBundle], directory) -> dict:
    """Write conn/ssl/x509 as three tab-separated files; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / f"{name}.tsv" for name in ("conn", "ssl", "x509")}
    bundles = list(bundles)
    with open(paths["conn"], "w", encoding="utf-8") as fp:
        fp.write("uid\tstart_time\tduration_s\tclient_bytes\tserver_bytes\tclient_packets\tserver_packets\n")
        for b in bundles:
            c = b.conn
            fp.write(
                f"{c.uid}\t{c.start_time}\t{c.duration_s:.6f}\t{c.client_bytes}\t{c.server_bytes}\t"
                f"{c.client_packets}\t{c.server_packets}\n"
            )
    with open(paths["ssl"], "w", encoding="utf-8") as fp:
        fp.write("uid\ttls_version\tsni\tcipher_suites_offered\tselected_cipher\tcert_chain_fuid\tresumed\n")
        for b in bundles:
            r = b.ssl
            if r is None:
                continue
            ciphers = ",".join(f"0x{c:04x}" for c in r.cipher_suites_offered)
            selected = f"0x{r.selected_cipher:04x}" if r.selected_cipher is not None else "-"
            fp.write(
                f"{r.uid}\t{r.tls_version.value}\t{r.sni or '-'}\t{ciphers}\t{selected}\t"
                f"{','.join(r.cert_chain_fuid)}\t{str(r.resumed).lower()}\n"
            )
    seen = set()
    with open(paths["x509"], "w", encoding="utf-8") as fp:
        fp.write(
            "fuid\tnot_before\tnot_after\tvalidity_s\tsan_dns\tsubject_cn\tissuer\tsubject\t"
            "public_key_bits\tself_signed\n"
        )
        for b in bundles:
            for x in b.certs:
                if x.fuid in seen:
                    continue
                seen.add(x.fuid)
                fp.write(
                    f"{x.fuid}\t{x.not_before}\t{x.not_after}\t{x.validity_s}\t{','.join(x.san_dns)}\t"
                    f"{x.subject_cn or '-'}\t{x.issuer}\t{x.subject}\t{x.public_key_bits}\t"
                    f"{str(x.self_signed).lower()}\n"
                )
    return {k: str(v) for k, v in paths.items()}
