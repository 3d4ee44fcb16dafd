"""Onion routers and onion proxies with the BackRef additions.

A :class:`Node` relays cells for circuits it is part of and can also act as
an onion proxy. A :class:`Client` is a proxy only, with no long-term key;
its first create is unsigned and the entry records its address instead.

Relay state per circuit holds the predecessor (address, cid), the successor
(address, cid) once extended, the session key and the inbound pseudonym.
Nothing in it says where the circuit started or where it ends.
"""

from __future__ import annotations

import fnmatch
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from backref import ntor
from backref import onion as oc
from backref.evidence import (
    DuplicateIndex,
    ExitEvidenceRecord,
    InvalidRecord,
    LogStore,
    RelayEvidenceRecord,
    index_hash,
)
from backref.onion import Cell, CellKind, CreatePayload, RelayTag
from backref.pairing_suite import BlsKeyPair, keygen
from backref.pseudonym import (
    DEFAULT_WINDOW,
    SignedPseudonym,
    SignerKind,
    StreamRequest,
    endorse_pseudonym,
    sign_pseudonym,
    sign_stream,
    verify_endorsement,
    verify_linkability,
    verify_stream,
)
from backref.simnet import SecretsBundle, SimNet

ROLES = frozenset({"entry", "middle", "exit"})


class Whitelist:
    """Destination patterns: ``*``, ``*.suffix``, ``host`` or ``host:port``."""

    def __init__(self, patterns: Iterable[str] = ()):
        self.patterns = tuple(patterns)

    def __repr__(self) -> str:
        return f"Whitelist({list(self.patterns)!r})"

    def __contains__(self, dest: tuple[str, int]) -> bool:
        return self.allows(*dest)

    def allows(self, host: str | bytes, port: int) -> bool:
        if isinstance(host, bytes):
            host = host.decode("utf-8", "replace")
        host = host.lower()
        for p in self.patterns:
            p = p.lower()
            if p == "*":
                return True
            if ":" in p:
                ph, _, pp = p.rpartition(":")
                if pp.isdigit() and int(pp) == port and _host_match(ph, host):
                    return True
                continue
            if _host_match(p, host):
                return True
        return False


def _host_match(pattern: str, host: str) -> bool:
    if pattern.startswith("*."):
        return host.endswith(pattern[1:])
    if any(c in pattern for c in "*?["):
        return fnmatch.fnmatchcase(host, pattern)
    return host == pattern


@dataclass
class NodeConfig:
    node_id: str
    address: str
    roles: frozenset = ROLES
    whitelist: tuple[str, ...] = ()
    backref: bool = True
    window: int = DEFAULT_WINDOW
    log_horizon: int | None = None
    circuit_idle_timeout: int | None = 600


@dataclass
class RelayCircuit:
    prev_addr: str
    prev_cid: bytes
    key: bytes
    X_in: bytes
    inbound: SignedPseudonym | None
    next_addr: str | None = None
    next_cid: bytes | None = None
    extending: bool = False
    used: int = 0
    last_active: int = 0

    def to_json(self) -> dict:
        return {
            "prev": [self.prev_addr, self.prev_cid.hex()],
            "next": None if self.next_addr is None else [self.next_addr, self.next_cid.hex()],
            "key": self.key.hex(),
            "X_in": self.X_in.hex(),
            "used": self.used,
        }


@dataclass
class Hop:
    node_id: str
    address: str
    pk: bytes
    state: ntor.NtorClientState | None = None
    key: bytes | None = None

    @property
    def X(self) -> bytes:
        return self.state.pseudonym.X

    @property
    def x(self) -> int:
        return self.state.pseudonym.x


@dataclass
class OriginCircuit:
    handle: int
    cid: bytes
    hops: list[Hop]
    status: str = "building"
    queued: list = field(default_factory=list)
    next_sid: int = 1

    @property
    def keys(self) -> list[bytes]:
        return [h.key for h in self.hops if h.key is not None]

    @property
    def established(self) -> bool:
        return self.status == "open"


@dataclass
class StreamTicket:
    handle: int
    sid: int
    request: StreamRequest | None
    host: str
    port: int
    data: bytes
    signed: bool
    reply: bytes | None = None
    sent_at: int | None = None


class NodeScript:
    """Hooks the adversary uses to drive a compromised node. Each returns the
    (possibly rewritten) value, or None to drop."""

    def on_receive(self, node: "Node", data: bytes, src: str) -> bytes | None:
        return data

    def on_send(self, node: "Node", dst: str, data: bytes) -> bytes | None:
        return data

    def rewrite_extend(self, node: "Node", circ: RelayCircuit, ext: oc.Extend) -> oc.Extend | None:
        return ext

    def forward_pseudonym(self, node: "Node", circ: RelayCircuit, X: bytes) -> bytes:
        return X


class OnionProxy:
    """Circuit construction and stream sending, shared by clients and nodes."""

    address: str
    net: SimNet
    backref: bool
    stats: Counter

    def _proxy_init(self) -> None:
        self.ntor_client = ntor.NtorClient()
        self.origin: dict[tuple[str, bytes], OriginCircuit] = {}
        self.handles: dict[int, OriginCircuit] = {}
        self.tickets: dict[tuple[int, int], StreamTicket] = {}
        self.on_established: Callable[[OriginCircuit], None] | None = None
        self._next_handle = 1

    def _endorse_first_hop(self, X: bytes, ts: int) -> SignedPseudonym | None:
        return None

    def _send(self, dst: str, cell: Cell) -> None:
        self.net.deliver(self.address, dst, cell.encode())

    def create_circuit(self, path: Iterable[str]) -> OriginCircuit:
        path = list(path)
        if not 1 <= len(path) <= oc.MAX_LAYERS:
            raise ValueError(f"path length must be 1..{oc.MAX_LAYERS}")
        hops = []
        for nid in path:
            e = self.net.directory.by_id(nid)
            if e is None:
                raise KeyError(f"node {nid!r} is not registered")
            hops.append(Hop(e.node_id, e.address, e.pk))
        cid = self._fresh_cid()
        circ = OriginCircuit(self._next_handle, cid, hops)
        self._next_handle += 1
        self.handles[circ.handle] = circ
        self.origin[(hops[0].address, cid)] = circ
        first = hops[0]
        first.state, X = self.ntor_client.initiate(
            first.pk, first.node_id.encode(), self.net.rand_bytes(32), 1
        )
        payload = CreatePayload(X)
        if self.backref:
            sp = self._endorse_first_hop(X, self.net.now())
            if sp is not None:
                payload = CreatePayload(X, sp.sigma, sp.ts)
        self.stats["proxy.create"] += 1
        self._send(first.address, Cell(cid, CellKind.CREATE, payload.encode()))
        return circ

    def _fresh_cid(self) -> bytes:
        while True:
            cid = self.net.rand_bytes(oc.CID_BYTES)
            if any(cid):
                return cid

    def _hop_done(self, circ: OriginCircuit, hop: Hop, Y: bytes, t_Q: bytes) -> None:
        try:
            hop.key = self.ntor_client.compute_key(hop.pk, hop.state, Y, t_Q)
        except ntor.HandshakeAbort:
            circ.status = "failed"
            self.stats["proxy.handshake_abort"] += 1
            return
        done = len(circ.keys)
        if done == len(circ.hops):
            circ.status = "open"
            self.stats["proxy.circuit_open"] += 1
            if self.on_established:
                self.on_established(circ)
            queued, circ.queued = circ.queued, []
            for t in queued:
                self._transmit(circ, t)
            return
        prev, nxt = circ.hops[done - 1], circ.hops[done]
        nxt.state, X = self.ntor_client.initiate(
            nxt.pk, nxt.node_id.encode(), self.net.rand_bytes(32), done + 1
        )
        ext = oc.Extend(nxt.node_id, X)
        if self.backref:
            sp = sign_pseudonym(prev.x, X, self.net.now())
            ext = oc.Extend(nxt.node_id, X, sp.sigma, sp.ts)
        body = oc.encode_relay(RelayTag.EXTEND, ext)
        onion = oc.wr_on(body, circ.keys, self.net.rand_bytes)
        self._send(circ.hops[0].address, Cell(circ.cid, CellKind.RELAY, onion))

    def send_stream(
        self,
        handle: int,
        host: str,
        port: int,
        data: bytes = b"",
        sign: bool = True,
        ts: int | None = None,
    ) -> StreamTicket:
        circ = self.handles.get(handle)
        if circ is None:
            raise KeyError(f"unknown circuit {handle}")
        sid = circ.next_sid
        circ.next_sid += 1
        t = StreamTicket(handle, sid, None, host, port, bytes(data), sign, sent_at=ts)
        self.tickets[(handle, sid)] = t
        if circ.established:
            self._transmit(circ, t)
        else:
            circ.queued.append(t)
        return t

    def _transmit(self, circ: OriginCircuit, t: StreamTicket) -> None:
        addr = t.host.encode()
        if self.backref and t.signed:
            ts = self.net.now() if t.sent_at is None else t.sent_at
            t.request = StreamRequest(addr, t.port, ts)
            sigma = sign_stream(circ.hops[-1].x, t.request)
            body = oc.StreamCell(t.sid, addr, t.port, t.data, sigma, ts)
        else:
            body = oc.StreamCell(t.sid, addr, t.port, t.data)
        payload = oc.encode_relay(RelayTag.BEGIN, body)
        onion = oc.wr_on(payload, circ.keys, self.net.rand_bytes)
        self.stats["proxy.stream"] += 1
        self._send(circ.hops[0].address, Cell(circ.cid, CellKind.RELAY, onion))

    def _origin_receive(self, circ: OriginCircuit, cell: Cell) -> None:
        if cell.kind is CellKind.CREATED:
            hop = circ.hops[0]
            if hop.key is not None:
                return
            try:
                Y, t_Q = ntor.split_reply(cell.payload)
            except ntor.HandshakeAbort:
                circ.status = "failed"
                return
            self._hop_done(circ, hop, Y, t_Q)
            return
        if cell.kind is not CellKind.RELAY:
            return
        keys = circ.keys
        data = cell.payload
        depth = None
        for i, k in enumerate(keys):
            try:
                data = oc.unwrap_layer(data, k)
            except oc.LayerAuthFailure:
                self.stats["drop.layer_auth"] += 1
                return
            if i + 1 == len(keys) or not _opens(data, keys[i + 1]):
                depth = i
                break
        try:
            tag, msg = oc.decode_relay(data, backward=True)
        except oc.MalformedCell:
            # stopped early because a deeper layer failed to open
            early = depth is not None and depth + 1 < len(keys)
            self.stats["drop.layer_auth" if early else "drop.malformed"] += 1
            return
        if tag is RelayTag.EXTENDED:
            if depth + 1 != len(keys) or len(keys) >= len(circ.hops):
                return
            self._hop_done(circ, circ.hops[depth + 1], msg.Y, msg.t_Q)
        elif tag is RelayTag.DATA:
            t = self.tickets.get((circ.handle, msg.sid))
            if t is not None:
                t.reply = msg.data
                self.stats["proxy.reply"] += 1


def _opens(data: bytes, key: bytes) -> bool:
    try:
        oc.unwrap_layer(data, key)
        return True
    except oc.LayerAuthFailure:
        return False


class Client(OnionProxy):
    """A user onion proxy with no long-term key."""

    def __init__(self, address: str, net: SimNet, backref: bool = True):
        self.address = address
        self.net = net
        self.backref = backref
        self.stats = Counter()
        self._proxy_init()
        net.attach(self, client=True)

    def receive(self, data: bytes, src: str) -> None:
        try:
            cell = Cell.decode(data)
        except oc.MalformedCell:
            return
        circ = self.origin.get((src, cell.cid))
        if circ is not None:
            self._origin_receive(circ, cell)


class Node(OnionProxy):
    def __init__(self, config: NodeConfig, net: SimNet, seed: bytes):
        self.config = config
        self.node_id = config.node_id
        self.address = config.address
        self.net = net
        self.backref = config.backref
        self.keypair: BlsKeyPair = keygen(seed)
        self.whitelist = Whitelist(config.whitelist)
        self.log = LogStore(config.node_id, config.log_horizon)
        self.circuits: dict[tuple[str, bytes], RelayCircuit] = {}
        self.backward: dict[tuple[str, bytes], tuple[str, bytes]] = {}
        self.stats = Counter()
        self.script: NodeScript | None = None
        self.roster: tuple = ()
        self._proxy_init()
        net.attach(self)

    def __repr__(self) -> str:
        return f"Node({self.node_id!r}, {self.address!r})"

    @property
    def pk(self) -> bytes:
        return self.keypair.pk

    def setup(self) -> tuple:
        """Register with the directory and cache the roster."""
        self.roster = self.net.directory.register(
            self.node_id, self.address, self.keypair.pk, self.config.roles
        )
        return self.roster

    def _endorse_first_hop(self, X: bytes, ts: int) -> SignedPseudonym | None:
        return endorse_pseudonym(self.keypair.sk, X, ts)

    def _send(self, dst: str, cell: Cell) -> None:
        data = cell.encode()
        if self.script is not None:
            data = self.script.on_send(self, dst, data)
            if data is None:
                return
        self.net.deliver(self.address, dst, data)

    def receive(self, data: bytes, src: str) -> None:
        if self.script is not None:
            data = self.script.on_receive(self, data, src)
            if data is None:
                return
        try:
            cell = Cell.decode(data)
        except oc.MalformedCell:
            self.stats["drop.malformed"] += 1
            return
        key = (src, cell.cid)
        if key in self.origin:
            self._origin_receive(self.origin[key], cell)
        elif cell.kind is CellKind.CREATE:
            self.handle_create(cell, src)
        elif key in self.circuits:
            self.handle_relay(cell, src)
        elif key in self.backward:
            self._handle_backward(cell, src)
        else:
            self.stats["drop.unknown_circuit"] += 1

    def handle_create(self, cell: Cell, src: str) -> bool:
        key = (src, cell.cid)
        if key in self.circuits:
            self.stats["drop.cid_reuse"] += 1
            return False
        try:
            cp = CreatePayload.decode(cell.payload)
        except oc.MalformedCell:
            self.stats["drop.malformed"] += 1
            return False
        now = self.net.now()
        inbound = None
        if self.backref:
            if cp.sigma is not None:
                pred = self.net.directory.by_address(src)
                if pred is None:
                    self.stats["drop.unknown_endorser"] += 1
                    return False
                sp = SignedPseudonym(cp.X, cp.ts, cp.sigma, SignerKind.NODE, pred.pk)
                if not verify_endorsement(pred.pk, sp, now, self.config.window):
                    self.stats["drop.bad_endorsement"] += 1
                    return False
                inbound = sp
            elif not ("entry" in self.config.roles and self.net.is_client(src)):
                self.stats["drop.unsigned_create"] += 1
                return False
        try:
            out = ntor.respond(
                self.keypair.pk,
                self.keypair.sk,
                self.node_id.encode(),
                cp.X,
                self.net.rand_bytes(32),
            )
        except ntor.HandshakeAbort:
            self.stats["drop.handshake"] += 1
            return False
        self.circuits[key] = RelayCircuit(src, cell.cid, out.k, cp.X, inbound, last_active=now)
        self.stats["create.accepted"] += 1
        self._send(src, Cell(cell.cid, CellKind.CREATED, out.reply()))
        return True

    def handle_relay(self, cell: Cell, src: str) -> None:
        circ = self.circuits[(src, cell.cid)]
        if cell.kind is not CellKind.RELAY:
            self.stats["drop.unexpected_kind"] += 1
            return
        circ.used += 1
        circ.last_active = self.net.now()
        try:
            inner = oc.unwrap_layer(cell.payload, circ.key)
        except oc.LayerAuthFailure:
            self.stats["drop.layer_auth"] += 1
            return
        if circ.next_addr is not None:
            self._send(circ.next_addr, Cell(circ.next_cid, CellKind.RELAY, inner))
            return
        try:
            tag, msg = oc.decode_relay(inner)
        except oc.MalformedCell:
            self.stats["drop.malformed"] += 1
            return
        if tag is RelayTag.EXTEND:
            self._handle_extend(circ, msg)
        else:
            self._handle_stream(circ, msg)

    def _handle_extend(self, circ: RelayCircuit, ext: oc.Extend) -> None:
        if circ.extending:
            self.stats["drop.double_extend"] += 1
            return
        if self.script is not None:
            ext = self.script.rewrite_extend(self, circ, ext)
            if ext is None:
                return
        now = self.net.now()
        nxt = self.net.directory.by_id(ext.node_id)
        if nxt is None or nxt.address == self.address:
            self.stats["drop.bad_extend_target"] += 1
            return
        payload = CreatePayload(ext.X)
        if self.backref:
            if ext.sigma is None:
                self.stats["drop.unsigned_extend"] += 1
                return
            sp = SignedPseudonym(ext.X, ext.ts, ext.sigma, SignerKind.PSEUDONYM, circ.X_in)
            if not verify_linkability(circ.X_in, sp, now, self.config.window):
                self.stats["drop.bad_linkability"] += 1
                return
            rec = RelayEvidenceRecord(circ.prev_addr, circ.X_in, circ.inbound, sp, now)
            try:
                self.log.append(rec)
            except (DuplicateIndex, InvalidRecord):
                self.stats["drop.log_reject"] += 1
                return
            X_fwd = ext.X
            if self.script is not None:
                X_fwd = self.script.forward_pseudonym(self, circ, X_fwd)
            e = endorse_pseudonym(self.keypair.sk, X_fwd, now)
            payload = CreatePayload(X_fwd, e.sigma, e.ts)
        cid = self._fresh_cid()
        circ.next_addr, circ.next_cid, circ.extending = nxt.address, cid, True
        self.backward[(nxt.address, cid)] = (circ.prev_addr, circ.prev_cid)
        self.stats["extend.accepted"] += 1
        self._send(nxt.address, Cell(cid, CellKind.CREATE, payload.encode()))

    def _handle_stream(self, circ: RelayCircuit, sc: oc.StreamCell) -> None:
        if "exit" not in self.config.roles:
            self.stats["drop.not_exit"] += 1
            return
        now = self.net.now()
        if self.whitelist.allows(sc.address, sc.port):
            self.stats["stream.whitelisted"] += 1
            self._open_stream(circ, sc)
            return
        if self.backref:
            if sc.sigma is None:
                self.stats["drop.unsigned_stream"] += 1
                return
            req = sc.request()
            if not verify_stream(circ.X_in, req, sc.sigma, now, self.config.window):
                self.stats["drop.bad_stream_signature"] += 1
                return
            if self.log.lookup(index_hash(req.encode())) is not None:
                self.stats["drop.replayed_stream"] += 1
                return
            rec = ExitEvidenceRecord(circ.prev_addr, circ.X_in, circ.inbound, req, sc.sigma, now)
            try:
                self.log.append(rec)
            except (DuplicateIndex, InvalidRecord):
                self.stats["drop.log_reject"] += 1
                return
        self.stats["stream.accepted"] += 1
        self._open_stream(circ, sc)

    def _open_stream(self, circ: RelayCircuit, sc: oc.StreamCell) -> None:
        prev, pcid, key = circ.prev_addr, circ.prev_cid, circ.key

        def reply(data: bytes) -> None:
            body = oc.encode_relay(RelayTag.DATA, oc.StreamReply(sc.sid, data))
            onion = oc.wrap_layer(body, key, self.net.rand_bytes(oc.NONCE_BYTES))
            self._send(prev, Cell(pcid, CellKind.RELAY, onion))

        self.net.connect(
            self.address, sc.address.decode("utf-8", "replace"), sc.port, sc.ts, sc.data, reply
        )

    def _handle_backward(self, cell: Cell, src: str) -> None:
        prev = self.backward[(src, cell.cid)]
        circ = self.circuits.get(prev)
        if circ is None:
            return
        circ.last_active = self.net.now()
        if cell.kind is CellKind.CREATED:
            if not circ.extending:
                return
            try:
                Y, t_Q = ntor.split_reply(cell.payload)
            except ntor.HandshakeAbort:
                return
            body = oc.encode_relay(RelayTag.EXTENDED, oc.Extended(Y, t_Q))
            circ.extending = False
            onion = oc.wrap_layer(body, circ.key, self.net.rand_bytes(oc.NONCE_BYTES))
        elif cell.kind is CellKind.RELAY:
            onion = oc.wrap_layer(cell.payload, circ.key, self.net.rand_bytes(oc.NONCE_BYTES))
        else:
            return
        self._send(circ.prev_addr, Cell(circ.prev_cid, CellKind.RELAY, onion))

    def expire_circuits(self, now: int | None = None) -> int:
        """Forget routing state idle longer than ``circuit_idle_timeout``."""
        timeout = self.config.circuit_idle_timeout
        if timeout is None:
            return 0
        now = self.net.now() if now is None else now
        stale = [k for k, c in self.circuits.items() if now - c.last_active > timeout]
        for k in stale:
            c = self.circuits.pop(k)
            if c.next_addr is not None:
                self.backward.pop((c.next_addr, c.next_cid), None)
        return len(stale)

    def secrets(self) -> SecretsBundle:
        self.expire_circuits()
        self.log.sweep(self.net.now())
        return SecretsBundle(
            self.node_id,
            self.keypair.sk,
            [c.to_json() for c in self.circuits.values()],
            self.log.export(),
            self.net.now(),
        )

    def transcript_digest(self) -> str:
        return hashlib.sha256(self.log.export()).hexdigest()
