"""ntor one-way authenticated key exchange, run in G2.

The client challenge X is the hop pseudonym, so the same element serves as
the ntor ephemeral and as a BackRef one-time signing key.

    client                                 server Q (sk_Q, pk_Q)
    X = g2^x              ---- X ---->
                                           Y = g2^y
                                           s = X^y || X^sk_Q || Q || pk_Q || X || Y || tag
                                           (k', k) = HKDF(s)
                          <-- Y, t_Q --    t_Q = HMAC(k', Q || Y || X || tag || "server")
    s = Y^x || pk_Q^x || ...
    check t_Q, output k
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from backref import pairing_suite as ps
from backref.pseudonym import Pseudonym, new_pseudonym

PROTOCOL_TAG = b"ntor"
MAC_BYTES = 32
KEY_BYTES = 32
REPLY_BYTES = ps.G2_BYTES + MAC_BYTES
_KDF_INFO = b"backref-ntor-kdf"


class HandshakeAbort(Exception):
    """The session was aborted and its state erased."""


def session_id(X: bytes) -> bytes:
    return hashlib.sha256(X).digest()


def _lp(b: bytes) -> bytes:
    return len(b).to_bytes(2, "big") + b


def _derive(shared_xy: bytes, shared_xb: bytes, Q: bytes, pk_Q: bytes, X: bytes, Y: bytes):
    secret = shared_xy + shared_xb + _lp(Q) + pk_Q + X + Y + PROTOCOL_TAG
    okm = HKDF(
        algorithm=hashes.SHA256(), length=2 * KEY_BYTES, salt=PROTOCOL_TAG, info=_KDF_INFO
    ).derive(secret)
    return okm[:KEY_BYTES], okm[KEY_BYTES:]


def server_mac(k_prime: bytes, Q: bytes, X: bytes, Y: bytes) -> bytes:
    return hmac.new(k_prime, _lp(Q) + Y + X + PROTOCOL_TAG + b"server", hashlib.sha256).digest()


def _valid_nonidentity(X: bytes):
    try:
        P = ps.decode_g2(bytes(X))
    except ps.InvalidEncoding:
        return None
    if P == ps.G2Point.identity():
        return None
    return P


@dataclass
class NtorClientState:
    psi: bytes
    Q: bytes
    pk_Q: bytes
    pseudonym: Pseudonym
    tag: bytes = PROTOCOL_TAG

    def __repr__(self) -> str:
        return f"NtorClientState(psi={self.psi[:6].hex()}..., Q={self.Q!r})"


@dataclass(frozen=True)
class NtorServerOutput:
    Y: bytes
    t_Q: bytes
    k: bytes

    def reply(self) -> bytes:
        return self.Y + self.t_Q


class NtorClient:
    """Client-side session store, keyed by the session id Psi_P = SHA-256(X)."""

    def __init__(self):
        self._sessions: dict[bytes, NtorClientState] = {}

    def __len__(self) -> int:
        return len(self._sessions)

    def __contains__(self, psi: bytes) -> bool:
        return psi in self._sessions

    def initiate(
        self, pk_Q: bytes, Q: bytes, seed: bytes, hop: int = 1
    ) -> tuple[NtorClientState, bytes]:
        pn = new_pseudonym(seed, hop)
        psi = session_id(pn.X)
        state = NtorClientState(psi, bytes(Q), bytes(pk_Q), pn)
        self._sessions[psi] = state
        return state, pn.X

    def compute_key(
        self, pk_Q: bytes, state: NtorClientState | bytes, Y: bytes, t_Q: bytes
    ) -> bytes:
        psi = state.psi if isinstance(state, NtorClientState) else bytes(state)
        state = self._sessions.pop(psi, None)
        if state is None:
            raise HandshakeAbort("unknown session")
        x = state.pseudonym.x
        X = state.pseudonym.X
        Y_pt = _valid_nonidentity(Y)
        pk_pt = _valid_nonidentity(pk_Q)
        if Y_pt is None or pk_pt is None or bytes(pk_Q) != state.pk_Q:
            raise HandshakeAbort("invalid group element")
        k_prime, k = _derive(
            ps.encode_g2(ps.g2_mul(x, Y_pt)),
            ps.encode_g2(ps.g2_mul(x, pk_pt)),
            state.Q,
            state.pk_Q,
            X,
            bytes(Y),
        )
        if not hmac.compare_digest(server_mac(k_prime, state.Q, X, bytes(Y)), bytes(t_Q)):
            raise HandshakeAbort("server authenticator mismatch")
        return k

    def abort(self, psi: bytes) -> None:
        self._sessions.pop(psi, None)


def respond(pk_Q: bytes, sk_Q: int, Q: bytes, X: bytes, seed: bytes) -> NtorServerOutput:
    """Server side. y lives only inside this call."""
    X_pt = _valid_nonidentity(X)
    if X_pt is None:
        raise HandshakeAbort("challenge is not a valid non-identity G2 element")
    y = ps.derive_scalar(seed, b"ntor-server-ephemeral")
    Y = ps.encode_g2(ps.g2_mul(y))
    k_prime, k = _derive(
        ps.encode_g2(ps.g2_mul(y, X_pt)),
        ps.encode_g2(ps.g2_mul(sk_Q, X_pt)),
        bytes(Q),
        bytes(pk_Q),
        bytes(X),
        Y,
    )
    return NtorServerOutput(Y, server_mac(k_prime, bytes(Q), bytes(X), Y), k)


def split_reply(reply: bytes) -> tuple[bytes, bytes]:
    if len(reply) != REPLY_BYTES:
        raise HandshakeAbort("malformed created payload")
    return bytes(reply[: ps.G2_BYTES]), bytes(reply[ps.G2_BYTES :])
