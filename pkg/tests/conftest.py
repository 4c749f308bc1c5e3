import pytest

from encflow import synth


@pytest.fixture(scope="session")
def cert_chain():
    """One leaf+CA chain reused across tests (RSA generation is the slow part)."""
    return synth.make_chain("leaf.example.com", ["leaf.example.com", "*.alt.example.com"])


@pytest.fixture(scope="session")
def self_signed():
    """Self-signed cert with the documented parameters: 30 days, one SAN, RSA-2048."""
    der, cert, key = synth.make_certificate("test.local", san=["test.local"], key_bits=2048, validity_days=30)
    return der, cert


def build_mixed_capture(path, cert_ders, n_tls=3, n_plain=2, base_us=1_700_000_000_000_000):
    """Interleaved TLS and plaintext sessions; returns scripts keyed by client port."""
    scripts = {}
    frames = []
    port = 50000
    for i in range(n_tls):
        s = synth.ScriptedTcpSession(client_port=port, start_us=base_us + i * 37_000)
        synth.tls_session(s, sni="leaf.example.com", cert_ders=cert_ders, app_rounds=1 + i % 2)
        scripts[port] = ("tls", s)
        frames.extend(s.frames)
        port += 1
    for i in range(n_plain):
        s = synth.ScriptedTcpSession(client_port=port, server_port=80, start_us=base_us + 11_000 + i * 53_000)
        synth.plain_session(s, rounds=1 + i)
        scripts[port] = ("plain", s)
        frames.extend(s.frames)
        port += 1
    frames.sort(key=lambda f: f[0])
    synth.write_pcap(path, frames)
    return scripts
