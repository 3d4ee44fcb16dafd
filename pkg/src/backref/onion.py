"""Cells, relay payloads and layered onion encryption.

Wire format (big-endian):

    cell          cid(16) || kind(1) || len(4) || payload
    create        X(96) [|| sigma(48) || ts(4)]
    created       Y(96) || t_Q(32)
    relay         onion, decrypting to tag(1) || body

Relay bodies:

    extend        idlen(1) || node-id || X(96) [|| sigma(48) || ts(4)]
    extended      Y(96) || t_Q(32)
    begin, data   sid(2) || addrlen(2) || addr || port(2) || dlen(4) || data
                  [|| sigma(48) || ts(4)]
    data (back)   sid(2) || data

The bracketed fields are the BackRef additions: one G1 signature plus a
4-byte timestamp. With BackRef disabled they are simply absent, so every
signed cell is exactly ``BACKREF_OVERHEAD`` bytes longer than its unsigned
twin. Presence is detected from the remaining length, which lets an exit
read an unsigned request for a whitelisted destination.

Each onion layer is ChaCha20-Poly1305 with a fresh 12-byte nonce carried in
front of the ciphertext.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Callable, Sequence

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from backref.pairing_suite import G1_BYTES, G2_BYTES
from backref.pseudonym import StreamRequest

CID_BYTES = 16
NONCE_BYTES = 12
TAG_BYTES = 16
LAYER_OVERHEAD = NONCE_BYTES + TAG_BYTES
BACKREF_OVERHEAD = G1_BYTES + 4
MAX_LAYERS = 8
_HEADER = struct.Struct(">16sBI")

NonceSource = Callable[[int], bytes]


class CellKind(enum.IntEnum):
    CREATE = 1
    CREATED = 2
    RELAY = 3


class RelayTag(enum.IntEnum):
    EXTEND = 1
    EXTENDED = 2
    DATA = 3
    BEGIN = 4


class LayerAuthFailure(Exception):
    """An onion layer failed authentication; the cell must be dropped."""


class MalformedCell(ValueError):
    pass


@dataclass(frozen=True)
class Cell:
    cid: bytes
    kind: CellKind
    payload: bytes

    def __post_init__(self):
        if len(self.cid) != CID_BYTES or not any(self.cid):
            raise MalformedCell("cid must be 16 non-zero bytes")
        object.__setattr__(self, "kind", CellKind(self.kind))

    def encode(self) -> bytes:
        return _HEADER.pack(self.cid, self.kind, len(self.payload)) + self.payload

    @classmethod
    def decode(cls, data: bytes) -> "Cell":
        if len(data) < _HEADER.size:
            raise MalformedCell("truncated cell header")
        cid, kind, n = _HEADER.unpack_from(data)
        if len(data) != _HEADER.size + n:
            raise MalformedCell("cell length field mismatch")
        try:
            return cls(cid, CellKind(kind), bytes(data[_HEADER.size :]))
        except ValueError as exc:
            raise MalformedCell(str(exc)) from None


def _sig_fields(sigma: bytes | None, ts: int | None) -> bytes:
    if sigma is None:
        return b""
    if len(sigma) != G1_BYTES:
        raise MalformedCell("signature must be a G1 encoding")
    return bytes(sigma) + struct.pack(">I", ts)


def _take_sig(data: bytes, off: int) -> tuple[bytes, int, int]:
    if len(data) < off + BACKREF_OVERHEAD:
        raise MalformedCell("truncated signature fields")
    sigma = bytes(data[off : off + G1_BYTES])
    (ts,) = struct.unpack_from(">I", data, off + G1_BYTES)
    return sigma, ts, off + BACKREF_OVERHEAD


@dataclass(frozen=True)
class CreatePayload:
    X: bytes
    sigma: bytes | None = None
    ts: int | None = None

    def encode(self) -> bytes:
        return bytes(self.X) + _sig_fields(self.sigma, self.ts)

    @classmethod
    def decode(cls, data: bytes) -> "CreatePayload":
        if len(data) == G2_BYTES:
            return cls(bytes(data))
        if len(data) == G2_BYTES + BACKREF_OVERHEAD:
            sigma, ts, _ = _take_sig(data, G2_BYTES)
            return cls(bytes(data[:G2_BYTES]), sigma, ts)
        raise MalformedCell("bad create payload length")


@dataclass(frozen=True)
class Extend:
    node_id: str
    X: bytes
    sigma: bytes | None = None
    ts: int | None = None

    def body(self) -> bytes:
        nid = self.node_id.encode()
        return bytes([len(nid)]) + nid + bytes(self.X) + _sig_fields(self.sigma, self.ts)

    @classmethod
    def parse(cls, body: bytes) -> "Extend":
        if not body:
            raise MalformedCell("empty extend")
        n = body[0]
        off = 1 + n
        if len(body) < off + G2_BYTES:
            raise MalformedCell("truncated extend")
        nid = bytes(body[1:off]).decode()
        X = bytes(body[off : off + G2_BYTES])
        off += G2_BYTES
        sigma = ts = None
        if len(body) == off + BACKREF_OVERHEAD:
            sigma, ts, off = _take_sig(body, off)
        if off != len(body):
            raise MalformedCell("trailing bytes in extend")
        return cls(nid, X, sigma, ts)


@dataclass(frozen=True)
class Extended:
    Y: bytes
    t_Q: bytes

    def body(self) -> bytes:
        return self.Y + self.t_Q

    @classmethod
    def parse(cls, body: bytes) -> "Extended":
        if len(body) != G2_BYTES + 32:
            raise MalformedCell("bad extended length")
        return cls(bytes(body[:G2_BYTES]), bytes(body[G2_BYTES:]))


@dataclass(frozen=True)
class StreamCell:
    """Forward begin/data body: the request, its payload and signature."""

    sid: int
    address: bytes
    port: int
    data: bytes = b""
    sigma: bytes | None = None
    ts: int | None = None

    def body(self) -> bytes:
        return (
            struct.pack(">HH", self.sid, len(self.address))
            + self.address
            + struct.pack(">HI", self.port, len(self.data))
            + self.data
            + _sig_fields(self.sigma, self.ts)
        )

    @classmethod
    def parse(cls, body: bytes) -> "StreamCell":
        if len(body) < 4:
            raise MalformedCell("truncated stream cell")
        sid, n = struct.unpack_from(">HH", body)
        off = 4 + n
        if len(body) < off + 6:
            raise MalformedCell("truncated stream cell")
        address = bytes(body[4:off])
        port, dlen = struct.unpack_from(">HI", body, off)
        off += 6
        data = bytes(body[off : off + dlen])
        off += dlen
        sigma = ts = None
        if len(body) == off + BACKREF_OVERHEAD:
            sigma, ts, off = _take_sig(body, off)
        if off != len(body):
            raise MalformedCell("stream cell length mismatch")
        return cls(sid, address, port, data, sigma, ts)

    @property
    def signed(self) -> bool:
        return self.sigma is not None

    def request(self) -> StreamRequest:
        if self.ts is None:
            raise MalformedCell("unsigned stream cell has no request timestamp")
        return StreamRequest(self.address, self.port, self.ts)


@dataclass(frozen=True)
class StreamReply:
    sid: int
    data: bytes

    def body(self) -> bytes:
        return struct.pack(">H", self.sid) + self.data

    @classmethod
    def parse(cls, body: bytes) -> "StreamReply":
        if len(body) < 2:
            raise MalformedCell("truncated data reply")
        return cls(struct.unpack_from(">H", body)[0], bytes(body[2:]))


_FORWARD = {
    RelayTag.EXTEND: Extend,
    RelayTag.BEGIN: StreamCell,
    RelayTag.DATA: StreamCell,
}
_BACKWARD = {RelayTag.EXTENDED: Extended, RelayTag.DATA: StreamReply}


def encode_relay(tag: RelayTag, msg) -> bytes:
    return bytes([tag]) + msg.body()


def decode_relay(payload: bytes, backward: bool = False):
    """Return ``(tag, message)`` for a fully unwrapped relay payload."""
    if not payload:
        raise MalformedCell("empty relay payload")
    try:
        tag = RelayTag(payload[0])
    except ValueError:
        raise MalformedCell(f"unknown relay tag {payload[0]}") from None
    table = _BACKWARD if backward else _FORWARD
    if tag not in table:
        raise MalformedCell(f"relay tag {tag.name} not valid in this direction")
    try:
        return tag, table[tag].parse(bytes(payload[1:]))
    except (ValueError, struct.error, UnicodeDecodeError) as exc:
        raise MalformedCell(str(exc)) from None


def wrap_layer(payload: bytes, key: bytes, nonce: bytes) -> bytes:
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, payload, None)


def unwrap_layer(onion: bytes, key: bytes) -> bytes:
    if len(onion) < LAYER_OVERHEAD:
        raise LayerAuthFailure("onion shorter than one layer")
    try:
        return ChaCha20Poly1305(key).decrypt(onion[:NONCE_BYTES], onion[NONCE_BYTES:], None)
    except InvalidTag:
        raise LayerAuthFailure("layer authentication failed") from None


def wr_on(payload: bytes, keys: Sequence[bytes], nonces: NonceSource) -> bytes:
    """Wrap ``payload`` for a path. ``keys`` is in path order (entry first);
    the last key is applied innermost."""
    if not 1 <= len(keys) <= MAX_LAYERS:
        raise ValueError(f"need 1..{MAX_LAYERS} keys, got {len(keys)}")
    out = bytes(payload)
    for k in reversed(keys):
        out = wrap_layer(out, k, nonces(NONCE_BYTES))
    return out


def unwr_on(onion: bytes, keys: Sequence[bytes]) -> bytes:
    """Strip ``len(keys)`` layers, outermost (``keys[0]``) first."""
    if not keys:
        raise ValueError("need at least one key")
    out = bytes(onion)
    for k in keys:
        out = unwrap_layer(out, k)
    return out


def onion_length(payload_len: int, layers: int) -> int:
    return payload_len + layers * LAYER_OVERHEAD
