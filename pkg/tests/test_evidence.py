from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from backref.evidence import (
    MAGIC,
    DuplicateIndex,
    ExitEvidenceRecord,
    InvalidRecord,
    LogStore,
    LogView,
    RelayEvidenceRecord,
    decode_record,
    index_hash,
    load_export,
    load_text,
)
from backref.pairing_suite import keygen
from backref.pseudonym import StreamRequest, endorse_pseudonym, new_pseudonym, sign_pseudonym, sign_stream

NOW = 1_700_000_000


@pytest.fixture(scope="module")
def records():
    p1, p2, p3 = (new_pseudonym(b"ev", i) for i in (1, 2, 3))
    n1, n2 = keygen(b"n1"), keygen(b"n2")
    entry = RelayEvidenceRecord("192.168.0.1", p1.X, None, sign_pseudonym(p1.x, p2.X, NOW), NOW)
    middle = RelayEvidenceRecord(
        "10.0.0.1", p2.X, endorse_pseudonym(n1.sk, p2.X, NOW), sign_pseudonym(p2.x, p3.X, NOW), NOW
    )
    req = StreamRequest(b"example.com", 80, NOW + 1)
    exit_ = ExitEvidenceRecord(
        "10.0.0.2", p3.X, endorse_pseudonym(n2.sk, p3.X, NOW), req, sign_stream(p3.x, req), NOW + 1
    )
    return entry, middle, exit_


def test_records_verify(records):
    assert all(r.check() for r in records)
    assert records[0].user_origin and not records[1].user_origin


def test_record_roundtrip(records):
    for r in records:
        assert decode_record(r.encode()) == r


def test_indexes(records):
    entry, middle, exit_ = records
    assert entry.indexes() == (index_hash(entry.X_in), index_hash(entry.outbound.X))
    assert exit_.indexes() == (index_hash(exit_.request.encode()),)
    assert len(index_hash(b"x")) == 32


def test_append_rejects_bad_signature(records):
    log = LogStore("n")
    entry = records[0]
    forged = replace(entry, outbound=replace(entry.outbound, ts=entry.outbound.ts + 1))
    with pytest.raises(InvalidRecord):
        log.append(forged)
    assert log.rejected == 1 and len(log) == 0


def test_append_rejects_mismatched_endorsement(records):
    middle = records[1]
    with pytest.raises(InvalidRecord):
        LogStore("n").append(replace(middle, X_in=records[2].X_in))


def test_duplicate_index(records):
    log = LogStore("n")
    log.append(records[0])
    with pytest.raises(DuplicateIndex):
        log.append(records[0])


def test_lookup(records):
    entry, middle, exit_ = records
    log = LogStore("n")
    log.append(middle)
    log.append(exit_)
    assert log.lookup(index_hash(middle.X_in)) is middle
    assert log.lookup_outbound(middle.outbound.X) is middle
    assert log.lookup_stream(exit_.request) is exit_
    assert log.lookup(index_hash(b"nope")) is None


def test_shared_pseudonym_cannot_share_a_log(records):
    # entry's outbound is the middle's inbound: one node never holds both
    log = LogStore("n")
    log.append(records[0])
    with pytest.raises(DuplicateIndex):
        log.append(records[1])


def test_export_bit_exact(records):
    log = LogStore("relay-007")
    log.append(records[0])
    log.append(records[2])
    data = log.export()
    assert data.startswith(MAGIC + bytes([9]) + b"relay-007" + (2).to_bytes(4, "big"))
    back = load_export(data)
    assert back.node_id == "relay-007"
    assert back.records() == [records[0], records[2]]
    assert back.export() == data


def test_truncated_and_trailing_exports(records):
    log = LogStore("n")
    log.append(records[0])
    data = log.export()
    with pytest.raises(InvalidRecord):
        load_export(data[:-1])
    with pytest.raises(InvalidRecord):
        load_export(data + b"\x00")
    with pytest.raises(InvalidRecord):
        load_export(b"NOTALOG!" + data[8:])


def test_sealed_export(records):
    key = b"s" * 32
    log = LogStore("n", sealing_key=key)
    log.append(records[1])
    sealed = log.export()
    assert records[1].X_in not in sealed
    assert load_export(sealed, key).records() == [records[1]]
    assert sealed == log.export()


def test_text_export_and_coarsen(records):
    log = LogStore("n")
    log.append(records[1])
    log.append(records[2])
    assert load_text(log.export_text()).records() == list(records[1:])
    coarse = load_text(log.export_text(coarsen=3600))
    for a, b in zip(coarse, records[1:]):
        assert a.logged_at == b.logged_at - b.logged_at % 3600
        assert a.check()


def test_sweep(records):
    log = LogStore("n", horizon=100)
    log.append(records[0])
    log.append(records[2])
    assert log.sweep(NOW + 100) == 0
    assert log.sweep(NOW + 101) == 1
    assert [r.type for r in log] == [records[2].type]
    assert log.lookup(index_hash(records[0].X_in)) is None


def test_snapshot_is_independent(records):
    log = LogStore("n")
    log.append(records[0])
    snap = log.snapshot()
    log.append(records[2])
    assert len(snap) == 1 and len(log) == 2


@given(st.text(max_size=40), st.integers(0, 2**32 - 1))
def test_relay_record_roundtrip_fields(addr, t):
    p1, p2 = new_pseudonym(b"h", 1), new_pseudonym(b"h", 2)
    r = RelayEvidenceRecord(addr, p1.X, None, sign_pseudonym(p1.x, p2.X, NOW), t)
    assert decode_record(r.encode()) == r


def test_logview_rejects_duplicates(records):
    with pytest.raises(DuplicateIndex):
        LogView("n", [records[0], records[0]])
