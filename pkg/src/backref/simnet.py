"""Deterministic in-process network.

Everything that happens in a run is driven by one :class:`Scheduler` whose
event order is (virtual ms, insertion sequence) and whose randomness comes
from a single seeded ``random.Random``. Two runs with the same scenario and
seed therefore produce the same transcript byte for byte.

Links behave like authenticated secure channels: the adversary sees who
talks to whom, when, and how much; it sees cell contents only when an
endpoint is compromised, and any mutation of traffic between two honest
endpoints is detected and the cell dropped.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol

from backref.onion import Cell, CellKind, CreatePayload, MalformedCell

DEFAULT_EPOCH = 1_700_000_000
DEFAULT_LATENCY_MS = 1


class Scheduler:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.now_ms = 0
        self._queue: list = []
        self._seq = 0
        self.executed = 0

    def at(self, t_ms: int, fn: Callable, *args) -> None:
        if t_ms < self.now_ms:
            t_ms = self.now_ms
        heapq.heappush(self._queue, (t_ms, self._seq, fn, args))
        self._seq += 1

    def after(self, delay_ms: int, fn: Callable, *args) -> None:
        self.at(self.now_ms + delay_ms, fn, *args)

    def run(self, until_ms: int | None = None) -> int:
        n = 0
        while self._queue:
            if until_ms is not None and self._queue[0][0] > until_ms:
                break
            t, _, fn, args = heapq.heappop(self._queue)
            self.now_ms = t
            fn(*args)
            n += 1
        if until_ms is not None and until_ms > self.now_ms:
            self.now_ms = until_ms
        self.executed += n
        return n

    def rand_bytes(self, n: int) -> bytes:
        return self.rng.randbytes(n)

    def pending(self) -> int:
        return len(self._queue)


class DuplicateRegistration(Exception):
    pass


@dataclass(frozen=True)
class RosterEntry:
    node_id: str
    address: str
    pk: bytes
    roles: frozenset = frozenset({"entry", "middle", "exit"})

    def to_json(self) -> dict:
        return {
            "node_id": self.node_id,
            "address": self.address,
            "pk": self.pk.hex(),
            "roles": sorted(self.roles),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RosterEntry":
        return cls(d["node_id"], d["address"], bytes.fromhex(d["pk"]), frozenset(d["roles"]))


class Directory:
    """Registration functionality: first write wins, ids and addresses unique."""

    def __init__(self, entries: list[RosterEntry] | None = None):
        self._by_id: dict[str, RosterEntry] = {}
        self._by_addr: dict[str, RosterEntry] = {}
        for e in entries or ():
            self.register(e.node_id, e.address, e.pk, e.roles)

    def register(self, node_id: str, address: str, pk: bytes, roles=None) -> tuple:
        if node_id in self._by_id:
            raise DuplicateRegistration(f"node id {node_id!r} already registered")
        if address in self._by_addr:
            raise DuplicateRegistration(f"address {address!r} already registered")
        e = RosterEntry(node_id, address, bytes(pk), frozenset(roles or RosterEntry.roles))
        self._by_id[node_id] = e
        self._by_addr[address] = e
        return self.roster()

    def roster(self) -> tuple[RosterEntry, ...]:
        return tuple(self._by_id.values())

    def by_id(self, node_id: str) -> RosterEntry | None:
        return self._by_id.get(node_id)

    def by_address(self, address: str) -> RosterEntry | None:
        return self._by_addr.get(address)

    def __len__(self) -> int:
        return len(self._by_id)

    def export(self) -> str:
        return json.dumps([e.to_json() for e in self.roster()], indent=1, sort_keys=True)

    @classmethod
    def load(cls, text: str) -> "Directory":
        return cls([RosterEntry.from_json(d) for d in json.loads(text)])


class IspRegistry:
    """Append-only record of (client address, create-cell X) seen on
    client-to-entry links. Only a compromised ISP accepts forged entries."""

    def __init__(self, entries=()):
        self._entries: list[tuple[str, bytes]] = []
        self._set: set[tuple[str, bytes]] = set()
        self.compromised = False
        for a, x in entries:
            self._append(a, x)

    def _append(self, address: str, X: bytes) -> None:
        key = (address, bytes(X))
        if key not in self._set:
            self._set.add(key)
            self._entries.append(key)

    def observe(self, address: str, X: bytes) -> None:
        self._append(address, X)

    def forge(self, address: str, X: bytes) -> None:
        if not self.compromised:
            raise PermissionError("the ISP registry is not under adversary control")
        self._append(address, X)

    def attests(self, address: str, X: bytes) -> bool:
        return (address, bytes(X)) in self._set

    def entries(self) -> list[tuple[str, bytes]]:
        return list(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def export(self) -> str:
        return "".join(f"{a} {x.hex()}\n" for a, x in self._entries)

    @classmethod
    def load(cls, text: str) -> "IspRegistry":
        out = []
        for line in text.splitlines():
            if line.strip():
                a, x = line.split()
                out.append((a, bytes.fromhex(x)))
        return cls(out)

    def copy(self) -> "IspRegistry":
        c = IspRegistry(self._entries)
        c.compromised = self.compromised
        return c


@dataclass(frozen=True)
class ServerLogEntry:
    source: str
    host: str
    port: int
    ts: int | None
    time: int
    data: bytes


class DestinationServer:
    """Echo service. Logs every request it receives."""

    def __init__(self, host: str, reply_prefix: bytes = b"echo:"):
        self.host = host
        self.reply_prefix = reply_prefix
        self.log: list[ServerLogEntry] = []

    def handle(self, source: str, port: int, ts: int | None, data: bytes, now: int) -> bytes:
        self.log.append(ServerLogEntry(source, self.host, port, ts, now, data))
        return self.reply_prefix + data

    def export(self) -> str:
        return "".join(
            json.dumps(
                {
                    "source": e.source,
                    "host": e.host,
                    "port": e.port,
                    "ts": e.ts,
                    "time": e.time,
                    "data": e.data.hex(),
                },
                sort_keys=True,
            )
            + "\n"
            for e in self.log
        )


@dataclass(frozen=True)
class TapEvent:
    time_ms: int
    src: str
    dst: str
    size: int
    content: bytes | None  # full cell only when an endpoint is compromised


@dataclass
class SecretsBundle:
    node_id: str
    sk: int
    circuits: list[dict]
    log_export: bytes
    taken_at: int

    def serialize(self) -> bytes:
        head = json.dumps(
            {"node_id": self.node_id, "taken_at": self.taken_at, "circuits": self.circuits},
            sort_keys=True,
        ).encode()
        return self.sk.to_bytes(32, "big") + len(head).to_bytes(4, "big") + head + self.log_export


@dataclass
class AdversaryHandle:
    compromised: set[str] = field(default_factory=set)
    taps: list[TapEvent] = field(default_factory=list)
    bundles: dict[str, SecretsBundle] = field(default_factory=dict)
    link_tamper: Callable[[str, str, bytes], bytes | None] | None = None
    observed_plaintext: list[tuple[str, str, bytes]] = field(default_factory=list)

    def view(self) -> list[TapEvent]:
        return list(self.taps)


class Endpoint(Protocol):
    address: str

    def receive(self, data: bytes, src: str) -> None: ...


class SimNet:
    def __init__(
        self,
        seed: int = 0,
        epoch: int = DEFAULT_EPOCH,
        latency_ms: int = DEFAULT_LATENCY_MS,
    ):
        self.seed = seed
        self.sched = Scheduler(seed)
        self.epoch = epoch
        self.latency_ms = latency_ms
        self.directory = Directory()
        self.isp = IspRegistry()
        self.adversary = AdversaryHandle()
        self.endpoints: dict[str, Any] = {}
        self.client_addresses: set[str] = set()
        self.destinations: dict[str, DestinationServer] = {}
        self.stats: Counter = Counter()
        self.transcript: list[str] = []
        self._compromised_addrs: set[str] = set()

    def now(self) -> int:
        """Protocol clock in whole seconds."""
        return self.epoch + self.sched.now_ms // 1000

    def rand_bytes(self, n: int) -> bytes:
        return self.sched.rand_bytes(n)

    def attach(self, endpoint, client: bool = False) -> None:
        if endpoint.address in self.endpoints:
            raise DuplicateRegistration(f"address {endpoint.address!r} in use")
        self.endpoints[endpoint.address] = endpoint
        if client:
            self.client_addresses.add(endpoint.address)

    def add_destination(self, server: DestinationServer) -> DestinationServer:
        self.destinations[server.host] = server
        return server

    def is_client(self, address: str) -> bool:
        return address in self.client_addresses

    def is_compromised_addr(self, address: str) -> bool:
        return address in self._compromised_addrs

    def mark_compromised(self, node_id: str, address: str) -> None:
        self.adversary.compromised.add(node_id)
        self._compromised_addrs.add(address)

    def compromise(self, node_id: str, at_ms: int | None = None, script=None):
        """Hand ``node_id`` to the adversary, now or at virtual time ``at_ms``.

        Returns the secrets bundle when the compromise happens immediately;
        scheduled compromises leave theirs in ``adversary.bundles``.
        """
        entry = self.directory.by_id(node_id)
        if entry is None:
            raise KeyError(f"unknown node {node_id!r}")

        def take():
            ep = self.endpoints[entry.address]
            self.mark_compromised(node_id, entry.address)
            if script is not None:
                ep.script = script
            bundle = ep.secrets()
            self.adversary.bundles[node_id] = bundle
            self._record(f"compromise {node_id}")
            return bundle

        if at_ms is None or at_ms <= self.sched.now_ms:
            return take()
        self.sched.at(at_ms, take)
        return None

    def _record(self, line: str) -> None:
        self.transcript.append(f"{self.sched.now_ms} {line}")

    def deliver(self, src: str, dst: str, data: bytes) -> None:
        data = bytes(data)
        kind = data[16] if len(data) > 16 else 0
        self.stats[f"cells.{_KIND_NAMES.get(kind, 'other')}"] += 1
        self.stats["bytes"] += len(data)
        self._record(f"cell {src} {dst} {kind} {len(data)} {hashlib.sha256(data).hexdigest()[:32]}")
        exposed = self.is_compromised_addr(src) or self.is_compromised_addr(dst)
        self.adversary.taps.append(
            TapEvent(self.sched.now_ms, src, dst, len(data), data if exposed else None)
        )
        if self.is_client(src) and kind == CellKind.CREATE:
            try:
                self.isp.observe(src, CreatePayload.decode(Cell.decode(data).payload).X)
            except MalformedCell:
                pass
        if self.adversary.link_tamper is not None:
            mutated = self.adversary.link_tamper(src, dst, data)
            if mutated is not None and mutated != data:
                if not exposed:
                    self.stats["drop.scs_tamper"] += 1
                    self._record(f"scs-drop {src} {dst}")
                    return
                data = mutated
        if dst not in self.endpoints:
            self.stats["drop.unknown_destination"] += 1
            return
        self.sched.after(self.latency_ms, self._arrive, src, dst, data)

    def _arrive(self, src: str, dst: str, data: bytes) -> None:
        ep = self.endpoints.get(dst)
        if ep is not None:
            ep.receive(data, src)

    def inject(self, src: str, dst: str, data: bytes, at_ms: int | None = None) -> None:
        """Adversary-originated traffic, delivered as if sent by ``src``."""
        self.stats["injected"] += 1
        if at_ms is None:
            self.deliver(src, dst, data)
        else:
            self.sched.at(at_ms, self.deliver, src, dst, data)

    def connect(
        self,
        src: str,
        host: str,
        port: int,
        ts: int | None,
        data: bytes,
        on_reply: Callable[[bytes], None],
    ) -> bool:
        """Open a (simulated) TCP exchange with a destination server."""
        server = self.destinations.get(host)
        if server is None:
            self.stats["drop.no_such_host"] += 1
            return False
        self._record(f"connect {src} {host}:{port} {ts} {hashlib.sha256(data).hexdigest()[:32]}")

        def arrive():
            reply = server.handle(src, port, ts, data, self.now())
            self.stats["streams.delivered"] += 1
            self.sched.after(self.latency_ms, on_reply, reply)

        self.sched.after(self.latency_ms, arrive)
        return True

    def run(self, until_ms: int | None = None) -> int:
        return self.sched.run(until_ms)

    def transcript_hash(self) -> str:
        h = hashlib.sha256()
        for line in self.transcript:
            h.update(line.encode() + b"\n")
        return h.hexdigest()


_KIND_NAMES = {CellKind.CREATE: "create", CellKind.CREATED: "created", CellKind.RELAY: "relay"}
