"""BLS12-381 group suite and BLS short signatures.

Signatures live in G1 (48-byte compressed), public keys and pseudonyms in G2
(96-byte compressed). Every element crossing a module boundary is passed in
its canonical compressed encoding; decoding rejects anything that does not
re-encode to the identical bytes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from py_arkworks_bls12381 import GT, G1Point, G2Point, Scalar

from backref._h2c import hash_to_g1 as _hash_to_g1

ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
G1_BYTES = 48
G2_BYTES = 96
SCALAR_BYTES = 32

DST_SIGN = b"BACKREF-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_NUL_"
DST_PSEUDONYM = b"BACKREF-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_PSEUDONYM_"
DST_ENDORSE = b"BACKREF-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_ENDORSE_"
DST_STREAM = b"BACKREF-V01-CS01-with-BLS12381G1_XMD:SHA-256_SSWU_RO_STREAM_"

_SCALAR_TAG = b"BACKREF-V01-SCALAR"


class InvalidEncoding(ValueError):
    """Bytes that are not the canonical encoding of a group element or scalar."""


def g1_generator() -> G1Point:
    return G1Point()


def g2_generator() -> G2Point:
    return G2Point()


def _scalar(k: int) -> Scalar:
    return Scalar(k % ORDER)


def g1_mul(k: int, point: G1Point | None = None) -> G1Point:
    return (G1Point() if point is None else point) * _scalar(k)


def g2_mul(k: int, point: G2Point | None = None) -> G2Point:
    return (G2Point() if point is None else point) * _scalar(k)


def encode_g1(point: G1Point) -> bytes:
    return bytes(point.to_compressed_bytes())


def encode_g2(point: G2Point) -> bytes:
    return bytes(point.to_compressed_bytes())


@lru_cache(maxsize=8192)
def decode_g1(data: bytes) -> G1Point:
    if not isinstance(data, (bytes, bytearray)) or len(data) != G1_BYTES:
        raise InvalidEncoding("G1 encoding must be 48 bytes")
    try:
        point = G1Point.from_compressed_bytes(list(data))
    except ValueError as exc:
        raise InvalidEncoding(str(exc)) from None
    if encode_g1(point) != bytes(data):
        raise InvalidEncoding("non-canonical G1 encoding")
    return point


@lru_cache(maxsize=8192)
def decode_g2(data: bytes) -> G2Point:
    if not isinstance(data, (bytes, bytearray)) or len(data) != G2_BYTES:
        raise InvalidEncoding("G2 encoding must be 96 bytes")
    try:
        point = G2Point.from_compressed_bytes(list(data))
    except ValueError as exc:
        raise InvalidEncoding(str(exc)) from None
    if encode_g2(point) != bytes(data):
        raise InvalidEncoding("non-canonical G2 encoding")
    return point


def encode_scalar(k: int) -> bytes:
    if not 0 <= k < ORDER:
        raise InvalidEncoding("scalar out of range")
    return k.to_bytes(SCALAR_BYTES, "big")


def decode_scalar(data: bytes) -> int:
    if len(data) != SCALAR_BYTES:
        raise InvalidEncoding("scalar encoding must be 32 bytes")
    k = int.from_bytes(data, "big")
    if k >= ORDER:
        raise InvalidEncoding("scalar out of range")
    return k


def derive_scalar(seed: bytes, label: bytes = b"") -> int:
    """Hash-then-reduce a seed into Z_p \\ {0}.

    64 bytes of SHA-512 output are reduced mod p, so the bias is below 2^-250.
    Zero is rejected by bumping a counter.
    """
    if not seed:
        raise ValueError("seed must be non-empty")
    counter = 0
    while True:
        digest = hashlib.sha512(
            _SCALAR_TAG + len(label).to_bytes(2, "big") + label + counter.to_bytes(4, "big") + seed
        ).digest()
        k = int.from_bytes(digest, "big") % ORDER
        if k:
            return k
        counter += 1


@lru_cache(maxsize=16384)
def hash_to_g1(message: bytes, dst: bytes = DST_SIGN) -> G1Point:
    return _hash_to_g1(bytes(message), dst)


def pairing(p: G1Point, q: G2Point) -> GT:
    return GT.pairing(p, q)


def gt_pow(x: GT, k: int) -> GT:
    """Square-and-multiply in the (multiplicative) target group."""
    k %= ORDER
    result = GT.one()
    base = x
    while k:
        if k & 1:
            result = result * base
        base = base * base
        k >>= 1
    return result


@dataclass(frozen=True)
class GroupSuite:
    """The pairing setting e: G1 x G2 -> GT of prime order ``order``."""

    name: str = "BLS12-381"
    order: int = ORDER
    g1: G1Point = field(default_factory=G1Point, compare=False)
    g2: G2Point = field(default_factory=G2Point, compare=False)

    def pair(self, p: G1Point, q: G2Point) -> GT:
        return pairing(p, q)

    def hash(self, message: bytes, dst: bytes = DST_SIGN) -> G1Point:
        return hash_to_g1(message, dst)


BLS12_381 = GroupSuite()


@dataclass(frozen=True)
class BlsKeyPair:
    sk: int
    pk: bytes

    def __post_init__(self):
        if not 0 < self.sk < ORDER:
            raise ValueError("secret key must lie in [1, p)")

    def check(self) -> bool:
        return encode_g2(g2_mul(self.sk)) == self.pk

    def __repr__(self) -> str:
        return f"BlsKeyPair(pk={self.pk[:6].hex()}...)"


def keygen(seed: bytes) -> BlsKeyPair:
    sk = derive_scalar(seed, b"bls-keygen")
    return BlsKeyPair(sk, encode_g2(g2_mul(sk)))


def sign(sk: int, message: bytes, dst: bytes = DST_SIGN) -> bytes:
    """sigma = H(message)^sk, returned as 48 compressed bytes."""
    if not 0 < sk < ORDER:
        raise ValueError("secret key must lie in [1, p)")
    return encode_g1(hash_to_g1(message, dst) * Scalar(sk))


@lru_cache(maxsize=16384)
def verify(pk: bytes, message: bytes, sigma: bytes, dst: bytes = DST_SIGN) -> bool:
    """Check e(H(message), pk) == e(sigma, g2).

    Evaluated as one multi-pairing e(H(m), pk) * e(-sigma, g2) == 1, which
    shares the final exponentiation. Malformed or identity encodings of pk or
    sigma verify as False.
    """
    try:
        pk_point = decode_g2(bytes(pk))
        sig_point = decode_g1(bytes(sigma))
    except InvalidEncoding:
        return False
    if pk_point == G2Point.identity() or sig_point == G1Point.identity():
        return False
    h = hash_to_g1(bytes(message), dst)
    return GT.multi_pairing([h, -sig_point], [pk_point, G2Point()]) == GT.one()
