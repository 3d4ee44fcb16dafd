import hashlib
import hmac

import pytest
from py_ecc.bls.point_compression import compress_G2, decompress_G2
from py_ecc.optimized_bls12_381 import multiply

from backref import ntor
from backref import pairing_suite as ps


def g2_bytes_oracle(P):
    z1, z2 = compress_G2(P)
    return z1.to_bytes(48, "big") + z2.to_bytes(48, "big")


def g2_mul_oracle(k, X: bytes) -> bytes:
    P = decompress_G2((int.from_bytes(X[:48], "big"), int.from_bytes(X[48:], "big")))
    return g2_bytes_oracle(multiply(P, k))


def hkdf_oracle(ikm, salt, info, n):
    prk = hmac.new(salt, ikm, hashlib.sha256).digest()
    out, t, i = b"", b"", 1
    while len(out) < n:
        t = hmac.new(prk, t + info + bytes([i]), hashlib.sha256).digest()
        out += t
        i += 1
    return out[:n]


@pytest.fixture(scope="module")
def server():
    return ps.keygen(b"ntor-server"), b"relay-001"


def handshake(server, seed):
    kp, Q = server
    client = ntor.NtorClient()
    state, X = client.initiate(kp.pk, Q, seed)
    out = ntor.respond(kp.pk, kp.sk, Q, X, seed + b"/srv")
    return client, state, X, out


def test_100_sessions_agree(server):
    kp, _ = server
    keys = set()
    for i in range(100):
        client, state, X, out = handshake(server, i.to_bytes(4, "big"))
        Y, t = ntor.split_reply(out.reply())
        k = client.compute_key(kp.pk, state, Y, t)
        assert k == out.k and len(k) == ntor.KEY_BYTES
        assert state.psi not in client
        keys.add(k)
    assert len(keys) == 100


def test_transcript_oracle(server):
    kp, Q = server
    client, state, X, out = handshake(server, b"oracle")
    x = state.pseudonym.x
    lp_Q = len(Q).to_bytes(2, "big") + Q
    secret = g2_mul_oracle(x, out.Y) + g2_mul_oracle(x, kp.pk) + lp_Q + kp.pk + X + out.Y + b"ntor"
    okm = hkdf_oracle(secret, b"ntor", b"backref-ntor-kdf", 64)
    k_prime, k = okm[:32], okm[32:]
    assert k == out.k
    assert out.t_Q == hmac.new(k_prime, lp_Q + out.Y + X + b"ntor" + b"server", hashlib.sha256).digest()
    assert state.psi == hashlib.sha256(X).digest()


def test_bad_mac_aborts_and_erases(server):
    kp, _ = server
    client, state, X, out = handshake(server, b"badmac")
    bad = bytes([out.t_Q[0] ^ 1]) + out.t_Q[1:]
    with pytest.raises(ntor.HandshakeAbort):
        client.compute_key(kp.pk, state, out.Y, bad)
    assert state.psi not in client
    with pytest.raises(ntor.HandshakeAbort):
        client.compute_key(kp.pk, state, out.Y, out.t_Q)


def test_wrong_server_key_aborts(server):
    kp, Q = server
    impostor = ps.keygen(b"impostor")
    client = ntor.NtorClient()
    state, X = client.initiate(kp.pk, Q, b"imp")
    out = ntor.respond(impostor.pk, impostor.sk, Q, X, b"imp/srv")
    with pytest.raises(ntor.HandshakeAbort):
        client.compute_key(kp.pk, state, out.Y, out.t_Q)


def test_identity_challenge_rejected(server):
    kp, Q = server
    with pytest.raises(ntor.HandshakeAbort):
        ntor.respond(kp.pk, kp.sk, Q, bytes([0xC0]) + bytes(95), b"s")
    with pytest.raises(ntor.HandshakeAbort):
        ntor.respond(kp.pk, kp.sk, Q, b"\x00" * 96, b"s")


def test_identity_reply_rejected(server):
    kp, _ = server
    client, state, X, out = handshake(server, b"idY")
    with pytest.raises(ntor.HandshakeAbort):
        client.compute_key(kp.pk, state, bytes([0xC0]) + bytes(95), out.t_Q)


def test_reply_size(server):
    _, _, _, out = handshake(server, b"size")
    assert len(out.reply()) == ntor.REPLY_BYTES == 128
