"""Evidence records, the per-node log store and its export formats.

A relay record joins what a node saw on the way in (the predecessor's
address and the inbound pseudonym with its signature) with the outbound
pseudonym and the pseudonym signature linking the two. It never names the
successor. An exit record holds the stream request and its signature.

Binary export::

    "BKRFLOG1" || idlen(1) || node-id || count(4) || (len(4) || record)*
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Union

from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from backref._h2c import expand_message_xmd
from backref.pairing_suite import G1_BYTES, G2_BYTES
from backref.pseudonym import (
    SignedPseudonym,
    SignerKind,
    StreamRequest,
    check_signature,
    check_stream,
)

MAGIC = b"BKRFLOG1"
INDEX_BYTES = 32
_DST_INDEX = b"BACKREF-V01-INDEX"


def index_hash(data: bytes) -> bytes:
    return expand_message_xmd(bytes(data), _DST_INDEX, INDEX_BYTES)


class RecordType(enum.IntEnum):
    RELAY = 1
    EXIT = 2


class Inbound(enum.IntEnum):
    USER = 0  # unsigned create from a client address
    SIGNED = 1


class DuplicateIndex(Exception):
    pass


class InvalidRecord(ValueError):
    pass


def _lp16(b: bytes) -> bytes:
    return struct.pack(">H", len(b)) + b


def _read_lp16(data: bytes, off: int) -> tuple[bytes, int]:
    (n,) = struct.unpack_from(">H", data, off)
    off += 2
    if off + n > len(data):
        raise InvalidRecord("truncated field")
    return bytes(data[off : off + n]), off + n


def _encode_inbound(inbound: SignedPseudonym | None, X_in: bytes) -> bytes:
    if inbound is None:
        return bytes([Inbound.USER]) + X_in
    return bytes([Inbound.SIGNED]) + inbound.encode()


def _decode_inbound(data: bytes, off: int):
    flag = data[off]
    off += 1
    if flag == Inbound.USER:
        return None, bytes(data[off : off + G2_BYTES]), off + G2_BYTES
    if flag == Inbound.SIGNED:
        sp = SignedPseudonym.decode(data[off : off + SignedPseudonym.SIZE])
        return sp, sp.X, off + SignedPseudonym.SIZE
    raise InvalidRecord(f"unknown inbound flag {flag}")


@dataclass(frozen=True)
class RelayEvidenceRecord:
    """Entry/middle record: X_in arrived from ``pred_address``; X_out left,
    signed under X_in. ``inbound`` is None when the predecessor was an
    unsigned client, in which case ``pred_address`` is the user address."""

    pred_address: str
    X_in: bytes
    inbound: SignedPseudonym | None
    outbound: SignedPseudonym
    logged_at: int

    type = RecordType.RELAY

    @property
    def user_origin(self) -> bool:
        return self.inbound is None

    def indexes(self) -> tuple[bytes, ...]:
        return (index_hash(self.X_in), index_hash(self.outbound.X))

    def check(self) -> bool:
        if self.inbound is not None:
            if self.inbound.kind is not SignerKind.NODE or self.inbound.X != self.X_in:
                return False
            if not check_signature(self.inbound):
                return False
        out = self.outbound
        return (
            out.kind is SignerKind.PSEUDONYM
            and out.signer == self.X_in
            and check_signature(out)
        )

    def encode(self) -> bytes:
        return (
            bytes([RecordType.RELAY])
            + struct.pack(">I", self.logged_at)
            + _lp16(self.pred_address.encode())
            + _encode_inbound(self.inbound, self.X_in)
            + self.outbound.encode()
        )

    @classmethod
    def _decode(cls, data: bytes) -> "RelayEvidenceRecord":
        (logged_at,) = struct.unpack_from(">I", data, 1)
        addr, off = _read_lp16(data, 5)
        inbound, X_in, off = _decode_inbound(data, off)
        end = off + SignedPseudonym.SIZE
        if end != len(data):
            raise InvalidRecord("relay record length mismatch")
        outbound = SignedPseudonym.decode(data[off:end])
        return cls(addr.decode(), X_in, inbound, outbound, logged_at)


@dataclass(frozen=True)
class ExitEvidenceRecord:
    pred_address: str
    X_in: bytes
    inbound: SignedPseudonym | None
    request: StreamRequest
    stream_sigma: bytes
    logged_at: int

    type = RecordType.EXIT

    @property
    def user_origin(self) -> bool:
        return self.inbound is None

    def indexes(self) -> tuple[bytes, ...]:
        return (index_hash(self.request.encode()),)

    def check(self) -> bool:
        if self.inbound is not None:
            if self.inbound.kind is not SignerKind.NODE or self.inbound.X != self.X_in:
                return False
            if not check_signature(self.inbound):
                return False
        return check_stream(self.X_in, self.request, self.stream_sigma)

    def encode(self) -> bytes:
        return (
            bytes([RecordType.EXIT])
            + struct.pack(">I", self.logged_at)
            + _lp16(self.pred_address.encode())
            + _encode_inbound(self.inbound, self.X_in)
            + self.request.encode()
            + self.stream_sigma
        )

    @classmethod
    def _decode(cls, data: bytes) -> "ExitEvidenceRecord":
        (logged_at,) = struct.unpack_from(">I", data, 1)
        addr, off = _read_lp16(data, 5)
        inbound, X_in, off = _decode_inbound(data, off)
        req, rest = StreamRequest.decode_prefix(data[off:])
        if len(rest) != G1_BYTES:
            raise InvalidRecord("exit record length mismatch")
        return cls(addr.decode(), X_in, inbound, req, rest, logged_at)


EvidenceRecord = Union[RelayEvidenceRecord, ExitEvidenceRecord]


def decode_record(data: bytes) -> EvidenceRecord:
    if len(data) < 7:
        raise InvalidRecord("truncated record")
    try:
        kind = RecordType(data[0])
    except ValueError:
        raise InvalidRecord(f"unknown record type {data[0]}") from None
    cls = RelayEvidenceRecord if kind is RecordType.RELAY else ExitEvidenceRecord
    try:
        return cls._decode(bytes(data))
    except (struct.error, ValueError, IndexError) as exc:
        raise InvalidRecord(str(exc)) from None


class LogView:
    """Read-only indexed view over a list of records."""

    def __init__(self, node_id: str, records: Iterable[EvidenceRecord] = ()):
        self.node_id = node_id
        self._records: list[EvidenceRecord] = []
        self._index: dict[bytes, EvidenceRecord] = {}
        for r in records:
            self._add(r)

    def _add(self, record: EvidenceRecord) -> None:
        idx = record.indexes()
        if any(i in self._index for i in idx) or len(set(idx)) != len(idx):
            raise DuplicateIndex(f"index already present in log of {self.node_id}")
        self._records.append(record)
        for i in idx:
            self._index[i] = record

    def lookup(self, h: bytes) -> EvidenceRecord | None:
        return self._index.get(bytes(h))

    def lookup_stream(self, req: StreamRequest) -> ExitEvidenceRecord | None:
        r = self.lookup(index_hash(req.encode()))
        return r if isinstance(r, ExitEvidenceRecord) else None

    def lookup_outbound(self, X_next: bytes) -> RelayEvidenceRecord | None:
        r = self.lookup(index_hash(X_next))
        if isinstance(r, RelayEvidenceRecord) and r.outbound.X == bytes(X_next):
            return r
        return None

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[EvidenceRecord]:
        return iter(list(self._records))

    def records(self) -> list[EvidenceRecord]:
        return list(self._records)

    def export(self, sealing_key: bytes | None = None) -> bytes:
        nid = self.node_id.encode()
        out = [MAGIC, bytes([len(nid)]), nid, struct.pack(">I", len(self._records))]
        for r in self._records:
            body = r.encode()
            if sealing_key is not None:
                body = _seal(sealing_key, body)
            out.append(struct.pack(">I", len(body)) + body)
        return b"".join(out)

    def export_text(self, coarsen: int = 0) -> str:
        """One base-16 record per line. ``coarsen`` > 0 rounds each record's
        write time down to that many seconds; signed timestamps are left
        alone because changing them would break the signatures."""
        lines = [f"# BKRFLOG1 {self.node_id} {len(self._records)}"]
        for r in self._records:
            if coarsen > 0:
                r = replace(r, logged_at=r.logged_at - r.logged_at % coarsen)
            lines.append(r.encode().hex())
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.export()).hexdigest()


class LogStore(LogView):
    """Append-only evidence log with write-time verification and retention.

    ``sealing_key`` is a single symmetric key applied to exported records.
    It is a hook for encryption at rest, not a trustee escrow scheme.
    """

    def __init__(
        self, node_id: str, horizon: int | None = None, sealing_key: bytes | None = None
    ):
        super().__init__(node_id)
        self.horizon = horizon
        self.sealing_key = sealing_key
        self.rejected = 0

    def append(self, record: EvidenceRecord) -> None:
        if not record.check():
            self.rejected += 1
            raise InvalidRecord("record signatures do not verify")
        self._add(record)

    def sweep(self, now: int) -> int:
        if self.horizon is None:
            return 0
        cutoff = now - self.horizon
        keep = [r for r in self._records if r.logged_at >= cutoff]
        erased = len(self._records) - len(keep)
        if erased:
            self._records = []
            self._index = {}
            for r in keep:
                self._add(r)
        return erased

    def snapshot(self) -> LogView:
        return LogView(self.node_id, self._records)

    def export(self, sealing_key: bytes | None = None) -> bytes:
        return LogView.export(self, sealing_key if sealing_key is not None else self.sealing_key)


def _seal(key: bytes, body: bytes) -> bytes:
    nonce = hashlib.sha256(key + body).digest()[:12]
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, body, None)


def _unseal(key: bytes, blob: bytes) -> bytes:
    return ChaCha20Poly1305(key).decrypt(blob[:12], blob[12:], None)


def load_export(data: bytes, sealing_key: bytes | None = None) -> LogView:
    """Parse a BKRFLOG1 export. Records are not re-verified here; the tracer
    verifies every signature it relies on."""
    if data[:8] != MAGIC:
        raise InvalidRecord("not a BKRFLOG1 export")
    n = data[8]
    off = 9 + n
    node_id = bytes(data[9:off]).decode()
    (count,) = struct.unpack_from(">I", data, off)
    off += 4
    records = []
    for _ in range(count):
        (ln,) = struct.unpack_from(">I", data, off)
        off += 4
        body = bytes(data[off : off + ln])
        if len(body) != ln:
            raise InvalidRecord("truncated export")
        off += ln
        if sealing_key is not None:
            body = _unseal(sealing_key, body)
        records.append(decode_record(body))
    if off != len(data):
        raise InvalidRecord("trailing bytes in export")
    return LogView(node_id, records)


def load_text(text: str) -> LogView:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("# BKRFLOG1 "):
        raise InvalidRecord("not a BKRFLOG1 text export")
    node_id = lines[0].split()[2]
    return LogView(node_id, [decode_record(bytes.fromhex(ln)) for ln in lines[1:]])
