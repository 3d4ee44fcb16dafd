import pytest
from hypothesis import given, strategies as st

from backref import pairing_suite as ps
from backref.pseudonym import (
    Reason,
    SignedPseudonym,
    SignerKind,
    StreamRequest,
    check_signature,
    endorse_pseudonym,
    fresh,
    new_pseudonym,
    pseudonym_message,
    sign_pseudonym,
    sign_stream,
    verify_endorsement,
    verify_linkability,
    verify_stream,
)

NOW = 1_700_000_000


@pytest.fixture(scope="module")
def chain():
    return [new_pseudonym(b"chain", i) for i in (1, 2, 3)]


def test_message_layout():
    X = new_pseudonym(b"m", 1).X
    assert pseudonym_message(X, 0x01020304) == X + b"\x01\x02\x03\x04"


def test_linkability(chain):
    x1, x2 = chain[0], chain[1]
    sp = sign_pseudonym(x1.x, x2.X, NOW)
    assert sp.signer == x1.X
    assert verify_linkability(x1.X, sp, NOW)
    assert verify_linkability(x1.X, sp, NOW + 300)
    assert verify_linkability(x1.X, sp, NOW + 301).reason is Reason.TIMESTAMP_STALE
    assert verify_linkability(chain[2].X, sp, NOW).reason is Reason.BAD_SIGNATURE


def test_linkability_equality_form(chain):
    # e(sigma, g2) == e(H(X2 || ts), X1)
    sp = sign_pseudonym(chain[0].x, chain[1].X, NOW)
    lhs = ps.pairing(ps.decode_g1(sp.sigma), ps.g2_generator())
    rhs = ps.pairing(ps.hash_to_g1(sp.message(), ps.DST_PSEUDONYM), ps.decode_g2(chain[0].X))
    assert lhs == rhs


def test_endorsement(chain):
    node = ps.keygen(b"node")
    sp = endorse_pseudonym(node.sk, chain[1].X, NOW)
    assert sp.kind is SignerKind.NODE
    assert verify_endorsement(node.pk, sp, NOW)
    assert not verify_endorsement(ps.keygen(b"other").pk, sp, NOW)
    lhs = ps.pairing(ps.decode_g1(sp.sigma), ps.g2_generator())
    rhs = ps.pairing(ps.hash_to_g1(sp.message(), ps.DST_ENDORSE), ps.decode_g2(node.pk))
    assert lhs == rhs


def test_roles_not_interchangeable(chain):
    # a pseudonym signature is not an endorsement even under the same key
    sp = sign_pseudonym(chain[0].x, chain[1].X, NOW)
    assert not verify_endorsement(chain[0].X, sp, NOW)


def test_stale_checked_before_signature(chain):
    sp = sign_pseudonym(chain[0].x, chain[1].X, NOW)
    bad = SignedPseudonym(sp.X, sp.ts, b"\x00" * 48, sp.kind, sp.signer)
    assert verify_linkability(chain[0].X, bad, NOW + 10_000).reason is Reason.TIMESTAMP_STALE
    assert verify_linkability(chain[0].X, bad, NOW).reason is Reason.BAD_SIGNATURE


def test_stream_signature(chain):
    req = StreamRequest("example.com", 443, NOW)
    sigma = sign_stream(chain[2].x, req)
    assert verify_stream(chain[2].X, req, sigma, NOW)
    other = StreamRequest("example.com", 443, NOW + 1)
    assert not verify_stream(chain[2].X, other, sigma, NOW)
    assert verify_stream(chain[2].X, req, sigma, NOW + 1000).reason is Reason.TIMESTAMP_STALE
    lhs = ps.pairing(ps.decode_g1(sigma), ps.g2_generator())
    rhs = ps.pairing(ps.hash_to_g1(req.encode(), ps.DST_STREAM), ps.decode_g2(chain[2].X))
    assert lhs == rhs


def test_stream_request_layout():
    req = StreamRequest(b"ab", 0x0102, 0x03040506)
    assert req.encode() == b"\x00\x02ab\x01\x02\x03\x04\x05\x06"


@given(st.binary(max_size=300), st.integers(0, 0xFFFF), st.integers(0, 0xFFFFFFFF))
def test_stream_request_roundtrip(addr, port, ts):
    req = StreamRequest(addr, port, ts)
    assert StreamRequest.decode(req.encode()) == req


def test_signed_pseudonym_roundtrip(chain):
    sp = sign_pseudonym(chain[0].x, chain[1].X, NOW)
    data = sp.encode()
    assert len(data) == SignedPseudonym.SIZE
    assert SignedPseudonym.decode(data) == sp
    assert check_signature(SignedPseudonym.decode(data))


@given(st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1), st.integers(0, 10_000))
def test_fresh_is_symmetric_window(ts, now, window):
    assert fresh(ts, now, window) == (abs(ts - now) <= window)


def test_timestamp_range():
    X = new_pseudonym(b"r", 1).X
    with pytest.raises(ValueError):
        pseudonym_message(X, 2**32)
    with pytest.raises(ValueError):
        pseudonym_message(X, -1)


def test_10000_pseudonyms_unique():
    seen = {new_pseudonym(i.to_bytes(4, "big"), 1 + i % 3).X for i in range(10_000)}
    assert len(seen) == 10_000


def test_hops_of_one_circuit_differ():
    assert len({new_pseudonym(b"same-seed", h).X for h in range(1, 9)}) == 8
