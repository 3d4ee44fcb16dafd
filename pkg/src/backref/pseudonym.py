"""Pseudonyms and the three signature forms built on them.

A pseudonym is X = g2^x. The originator keeps x; relays only ever see X.
Signatures bind X (or a stream request) to a 4-byte timestamp:

* pseudonym signature: signed by the predecessor pseudonym's secret
* endorsement: signed by a relay's long-term key
* stream signature: signed by the exit-hop pseudonym over the request m

Verifiers return a :class:`Verdict`, which is falsy on failure and carries
the reason.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

from backref import pairing_suite as ps

DEFAULT_WINDOW = 300
TS_MAX = 0xFFFFFFFF


class SignerKind(enum.IntEnum):
    PSEUDONYM = 1
    NODE = 2


_DST_FOR = {SignerKind.PSEUDONYM: ps.DST_PSEUDONYM, SignerKind.NODE: ps.DST_ENDORSE}


class Reason(str, enum.Enum):
    OK = "ok"
    TIMESTAMP_STALE = "timestamp-stale"
    BAD_SIGNATURE = "bad-signature"


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: Reason

    def __bool__(self) -> bool:
        return self.ok


ACCEPT = Verdict(True, Reason.OK)
STALE = Verdict(False, Reason.TIMESTAMP_STALE)
BAD = Verdict(False, Reason.BAD_SIGNATURE)


def _check_ts(ts: int) -> None:
    if not 0 <= ts <= TS_MAX:
        raise ValueError(f"timestamp {ts} does not fit in u32")


def fresh(ts: int, now: int, window: int) -> bool:
    return abs(now - ts) <= window


@dataclass(frozen=True)
class Pseudonym:
    X: bytes
    x: int | None
    hop: int

    def public(self) -> "Pseudonym":
        return Pseudonym(self.X, None, self.hop)

    def __repr__(self) -> str:
        return f"Pseudonym(hop={self.hop}, X={self.X[:6].hex()}...)"


def new_pseudonym(seed: bytes, hop: int) -> Pseudonym:
    if hop < 1:
        raise ValueError("hop index starts at 1")
    x = ps.derive_scalar(seed, b"pseudonym" + hop.to_bytes(2, "big"))
    return Pseudonym(ps.encode_g2(ps.g2_mul(x)), x, hop)


def pseudonym_message(X: bytes, ts: int) -> bytes:
    _check_ts(ts)
    if len(X) != ps.G2_BYTES:
        raise ValueError("pseudonym must be a 96-byte G2 encoding")
    return bytes(X) + struct.pack(">I", ts)


@dataclass(frozen=True)
class SignedPseudonym:
    X: bytes
    ts: int
    sigma: bytes
    kind: SignerKind
    signer: bytes

    SIZE = 1 + ps.G2_BYTES + 4 + ps.G1_BYTES + ps.G2_BYTES

    def message(self) -> bytes:
        return pseudonym_message(self.X, self.ts)

    def encode(self) -> bytes:
        return (
            bytes([self.kind]) + self.X + struct.pack(">I", self.ts) + self.sigma + self.signer
        )

    @classmethod
    def decode(cls, data: bytes) -> "SignedPseudonym":
        if len(data) != cls.SIZE:
            raise ValueError(f"signed pseudonym must be {cls.SIZE} bytes, got {len(data)}")
        kind = SignerKind(data[0])
        off = 1
        X = bytes(data[off : off + ps.G2_BYTES])
        off += ps.G2_BYTES
        (ts,) = struct.unpack_from(">I", data, off)
        off += 4
        sigma = bytes(data[off : off + ps.G1_BYTES])
        off += ps.G1_BYTES
        return cls(X, ts, sigma, kind, bytes(data[off:]))


def sign_pseudonym(x_prev: int, X_next: bytes, ts: int) -> SignedPseudonym:
    if not x_prev:
        raise ValueError("pseudonym secret must be non-zero")
    sigma = ps.sign(x_prev, pseudonym_message(X_next, ts), ps.DST_PSEUDONYM)
    return SignedPseudonym(
        bytes(X_next), ts, sigma, SignerKind.PSEUDONYM, ps.encode_g2(ps.g2_mul(x_prev))
    )


def endorse_pseudonym(sk_node: int, X: bytes, ts: int) -> SignedPseudonym:
    if not sk_node:
        raise ValueError("node key must be non-zero")
    sigma = ps.sign(sk_node, pseudonym_message(X, ts), ps.DST_ENDORSE)
    return SignedPseudonym(bytes(X), ts, sigma, SignerKind.NODE, ps.encode_g2(ps.g2_mul(sk_node)))


def check_signature(sp: SignedPseudonym, signer: bytes | None = None) -> bool:
    """Pairing check only, no freshness. ``signer`` overrides ``sp.signer``."""
    pk = sp.signer if signer is None else signer
    try:
        msg = sp.message()
    except ValueError:
        return False
    return ps.verify(bytes(pk), msg, sp.sigma, _DST_FOR[sp.kind])


def _verify(sp, signer, kind, now, window) -> Verdict:
    if not fresh(sp.ts, now, window):
        return STALE
    if sp.kind is not kind:
        return BAD
    return ACCEPT if check_signature(sp, signer) else BAD


def verify_linkability(
    X_prev: bytes, sp: SignedPseudonym, now: int, window: int = DEFAULT_WINDOW
) -> Verdict:
    """e(H(X_next || ts), X_prev) == e(sigma, g2) and |now - ts| <= window."""
    return _verify(sp, X_prev, SignerKind.PSEUDONYM, now, window)


def verify_endorsement(
    pk_node: bytes, sp: SignedPseudonym, now: int, window: int = DEFAULT_WINDOW
) -> Verdict:
    return _verify(sp, pk_node, SignerKind.NODE, now, window)


@dataclass(frozen=True)
class StreamRequest:
    address: bytes
    port: int
    ts: int

    def __post_init__(self):
        if isinstance(self.address, str):
            object.__setattr__(self, "address", self.address.encode())
        if not 0 <= self.port <= 0xFFFF:
            raise ValueError("port must fit in u16")
        if len(self.address) > 0xFFFF:
            raise ValueError("address too long")
        _check_ts(self.ts)

    def encode(self) -> bytes:
        return (
            struct.pack(">H", len(self.address))
            + self.address
            + struct.pack(">HI", self.port, self.ts)
        )

    @classmethod
    def decode(cls, data: bytes) -> "StreamRequest":
        req, rest = cls.decode_prefix(data)
        if rest:
            raise ValueError("trailing bytes after stream request")
        return req

    @classmethod
    def decode_prefix(cls, data: bytes) -> tuple["StreamRequest", bytes]:
        if len(data) < 2:
            raise ValueError("truncated stream request")
        (n,) = struct.unpack_from(">H", data)
        if len(data) < 2 + n + 6:
            raise ValueError("truncated stream request")
        address = bytes(data[2 : 2 + n])
        port, ts = struct.unpack_from(">HI", data, 2 + n)
        return cls(address, port, ts), bytes(data[2 + n + 6 :])

    def host(self) -> str:
        return self.address.decode("utf-8", "replace")


def sign_stream(x_exit: int, req: StreamRequest) -> bytes:
    return ps.sign(x_exit, req.encode(), ps.DST_STREAM)


def check_stream(X_exit: bytes, req: StreamRequest, sigma: bytes) -> bool:
    return ps.verify(bytes(X_exit), req.encode(), bytes(sigma), ps.DST_STREAM)


def verify_stream(
    X_exit: bytes, req: StreamRequest, sigma: bytes, now: int, window: int = DEFAULT_WINDOW
) -> Verdict:
    """e(H(m), X_exit) == e(sigma, g2) and the request timestamp is fresh."""
    if not fresh(req.ts, now, window):
        return STALE
    return ACCEPT if check_stream(X_exit, req, sigma) else BAD
