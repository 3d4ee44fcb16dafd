"""Hash-to-curve against py_ecc and the published test vector."""

import pytest
from hypothesis import given, strategies as st
from py_ecc.bls.hash import expand_message_xmd as ecc_expand
from py_ecc.bls.hash_to_curve import hash_to_G1 as ecc_hash_to_G1
from py_ecc.bls.point_compression import compress_G1
from py_ecc.optimized_bls12_381 import normalize
import hashlib

from backref import _h2c
from backref.pairing_suite import encode_g1, hash_to_g1

DST = b"QUUX-V01-CS02-with-BLS12381G1_XMD:SHA-256_SSWU_RO_"


def ecc_bytes(msg, dst):
    return compress_G1(ecc_hash_to_G1(msg, dst, hashlib.sha256)).to_bytes(48, "big")


def test_rfc_vector_empty_message():
    x = 0x052926ADD2207B76CA4FA57A8734416C8DC95E24501772C814278700EED6D1E4E8CF62D9C09DB0FAC349612B759E79A1
    pt = ecc_hash_to_G1(b"", DST, hashlib.sha256)
    assert normalize(pt)[0].n == x
    assert encode_g1(_h2c.hash_to_g1(b"", DST)) == ecc_bytes(b"", DST)


@pytest.mark.parametrize("msg", [b"", b"abc", b"abcdef0123456789", b"q128_" + b"q" * 128, b"a512_" + b"a" * 512])
def test_matches_py_ecc(msg):
    assert encode_g1(_h2c.hash_to_g1(msg, DST)) == ecc_bytes(msg, DST)


@given(st.binary(max_size=64), st.binary(min_size=1, max_size=40))
def test_matches_py_ecc_random(msg, dst):
    assert encode_g1(_h2c.hash_to_g1(msg, dst)) == ecc_bytes(msg, dst)


@given(st.binary(max_size=80), st.integers(1, 200))
def test_expand_message_xmd(msg, n):
    assert _h2c.expand_message_xmd(msg, b"BACKREF-TEST", n) == ecc_expand(msg, b"BACKREF-TEST", n, hashlib.sha256)


def test_backend_point_agrees():
    pt = hash_to_g1(b"hello", DST)
    assert encode_g1(pt) == ecc_bytes(b"hello", DST)
