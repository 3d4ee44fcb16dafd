"""Scenario files and the simulation runner.

A scenario is a YAML document::

    seed: 7
    epoch: 1700000000          # protocol clock at virtual time 0 (seconds)
    timestamp_window: 300
    backref: true
    circuit_length: 3          # trace policy: relays per valid chain
    nodes:
      - {id: relay-001, address: 10.0.101.201, roles: [entry, middle, exit],
         whitelist: ["*.example.org"]}
    clients:
      - {address: 192.168.101.201}
    destinations: [example.com]
    circuits:
      - {id: c1, proxy: 192.168.101.201, path: [relay-001, relay-002, relay-003], at: 0}
    streams:
      - {circuit: c1, host: example.com, port: 80, data: hello, at: 100, sign: true}
    adversary:
      compromised: [relay-002]             # before the run
      scripts: {relay-002: substitute-extend}
      schedule: [{node: relay-001, at: 900000}]   # post-hoc
      isp: false
    game: backward-traceability

Times under ``at`` are virtual milliseconds.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from backref import onion as oc
from backref.evidence import LogView, load_export
from backref.node import Client, Node, NodeConfig, NodeScript, ROLES, StreamTicket
from backref.pseudonym import DEFAULT_WINDOW, StreamRequest, new_pseudonym
from backref.simnet import DEFAULT_EPOCH, DestinationServer, Directory, IspRegistry, SimNet
from backref.tracer import DEFAULT_CIRCUIT_LENGTH, TraceQuery, TraceReport, full_trace


class ScenarioError(ValueError):
    pass


@dataclass
class NodeSpec:
    id: str
    address: str
    roles: frozenset = ROLES
    whitelist: tuple[str, ...] = ()


@dataclass
class CircuitSpec:
    id: str
    proxy: str
    path: list[str]
    at: int = 0


@dataclass
class StreamSpec:
    circuit: str
    host: str
    port: int
    data: bytes = b""
    at: int = 0
    sign: bool = True


@dataclass
class AdversarySpec:
    compromised: list[str] = field(default_factory=list)
    scripts: dict[str, str] = field(default_factory=dict)
    schedule: list[tuple[str, int]] = field(default_factory=list)
    isp: bool = False


@dataclass
class Scenario:
    seed: int = 0
    epoch: int = DEFAULT_EPOCH
    timestamp_window: int = DEFAULT_WINDOW
    backref: bool = True
    circuit_length: int | None = DEFAULT_CIRCUIT_LENGTH
    latency_ms: int = 1
    nodes: list[NodeSpec] = field(default_factory=list)
    clients: list[str] = field(default_factory=list)
    destinations: list[str] = field(default_factory=list)
    circuits: list[CircuitSpec] = field(default_factory=list)
    streams: list[StreamSpec] = field(default_factory=list)
    adversary: AdversarySpec = field(default_factory=AdversarySpec)
    game: str | None = None
    name: str = "scenario"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "epoch": self.epoch,
            "timestamp_window": self.timestamp_window,
            "backref": self.backref,
            "circuit_length": self.circuit_length,
            "latency_ms": self.latency_ms,
            "nodes": [
                {
                    "id": n.id,
                    "address": n.address,
                    "roles": sorted(n.roles),
                    "whitelist": list(n.whitelist),
                }
                for n in self.nodes
            ],
            "clients": [{"address": a} for a in self.clients],
            "destinations": list(self.destinations),
            "circuits": [
                {"id": c.id, "proxy": c.proxy, "path": list(c.path), "at": c.at}
                for c in self.circuits
            ],
            "streams": [
                {
                    "circuit": s.circuit,
                    "host": s.host,
                    "port": s.port,
                    "data": s.data.decode("latin-1"),
                    "at": s.at,
                    "sign": s.sign,
                }
                for s in self.streams
            ],
            "adversary": {
                "compromised": list(self.adversary.compromised),
                "scripts": dict(self.adversary.scripts),
                "schedule": [{"node": n, "at": t} for n, t in self.adversary.schedule],
                "isp": self.adversary.isp,
            },
            "game": self.game,
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# -- parsing ---------------------------------------------------------------


class _Lines:
    """Map key paths of a YAML document to 1-based source lines."""

    def __init__(self, text: str):
        self.lines: dict[tuple, int] = {}
        try:
            root = yaml.compose(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark else 0
            raise ScenarioError(f"line {line}: invalid YAML: {exc}") from None
        if root is not None:
            self._walk(root, ())

    def _walk(self, node, path):
        self.lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                self._walk(v, path + (k.value,))
                self.lines.setdefault(path + (k.value,), k.start_mark.line + 1)
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                self._walk(v, path + (i,))

    def at(self, path) -> int:
        path = tuple(path)
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path, 1)


class _Parser:
    def __init__(self, text: str, source: str):
        self.source = source
        self.lines = _Lines(text)
        self.doc = yaml.safe_load(text) or {}

    def err(self, path, msg):
        where = ".".join(str(p) for p in path) or "<root>"
        raise ScenarioError(f"{self.source}:{self.lines.at(path)}: {where}: {msg}")

    def get(self, d, key, path, typ, default=...):
        if key not in d:
            if default is ...:
                self.err(path, f"missing required field {key!r}")
            return default
        v = d[key]
        if typ is int and isinstance(v, bool):
            self.err(path + (key,), f"expected int, got {v!r}")
        if not isinstance(v, typ):
            name = typ.__name__ if isinstance(typ, type) else "/".join(t.__name__ for t in typ)
            self.err(path + (key,), f"expected {name}, got {type(v).__name__}")
        return v

    def check_keys(self, d, allowed, path):
        if not isinstance(d, dict):
            self.err(path, "expected a mapping")
        for k in d:
            if k not in allowed:
                self.err(path + (k,), f"unknown field {k!r}")

    def parse(self) -> Scenario:
        d = self.doc
        top = {
            "name", "seed", "epoch", "timestamp_window", "backref", "circuit_length",
            "latency_ms", "nodes", "clients", "destinations", "circuits", "streams",
            "adversary", "game", "whitelists",
        }
        self.check_keys(d, top, ())
        s = Scenario()
        s.name = str(d.get("name", Path(self.source).stem))
        s.seed = self.get(d, "seed", (), int, 0)
        s.epoch = self.get(d, "epoch", (), int, DEFAULT_EPOCH)
        s.timestamp_window = self.get(d, "timestamp_window", (), int, DEFAULT_WINDOW)
        s.backref = self.get(d, "backref", (), bool, True)
        s.circuit_length = self.get(d, "circuit_length", (), (int, type(None)), DEFAULT_CIRCUIT_LENGTH)
        s.latency_ms = self.get(d, "latency_ms", (), int, 1)
        s.game = self.get(d, "game", (), (str, type(None)), None)
        shared_wl = self.get(d, "whitelists", (), dict, {})

        ids, addrs = set(), set()
        for i, n in enumerate(self.get(d, "nodes", (), list)):
            p = ("nodes", i)
            self.check_keys(n, {"id", "address", "roles", "whitelist"}, p)
            nid = self.get(n, "id", p, str)
            addr = self.get(n, "address", p, str)
            if nid in ids:
                self.err(p + ("id",), f"duplicate node id {nid!r}")
            if addr in addrs:
                self.err(p + ("address",), f"duplicate address {addr!r}")
            ids.add(nid)
            addrs.add(addr)
            roles = self.get(n, "roles", p, list, sorted(ROLES))
            bad = set(roles) - ROLES
            if bad:
                self.err(p + ("roles",), f"unknown roles {sorted(bad)}")
            wl = self.get(n, "whitelist", p, list, shared_wl.get(nid, []))
            s.nodes.append(NodeSpec(nid, addr, frozenset(roles), tuple(str(w) for w in wl)))

        for i, c in enumerate(self.get(d, "clients", (), list, [])):
            p = ("clients", i)
            addr = c if isinstance(c, str) else None
            if isinstance(c, dict):
                self.check_keys(c, {"address"}, p)
                addr = self.get(c, "address", p, str)
            if addr is None:
                self.err(p, "client must be an address or {address: ...}")
            if addr in addrs:
                self.err(p, f"duplicate address {addr!r}")
            addrs.add(addr)
            s.clients.append(addr)

        for i, h in enumerate(self.get(d, "destinations", (), list, [])):
            if not isinstance(h, str):
                self.err(("destinations", i), "destination must be a host name")
            s.destinations.append(h)

        circ_ids = {}
        for i, c in enumerate(self.get(d, "circuits", (), list, [])):
            p = ("circuits", i)
            self.check_keys(c, {"id", "proxy", "path", "at"}, p)
            cid = self.get(c, "id", p, str)
            if cid in circ_ids:
                self.err(p + ("id",), f"duplicate circuit id {cid!r}")
            proxy = self.get(c, "proxy", p, str)
            if proxy not in s.clients and proxy not in ids:
                self.err(p + ("proxy",), f"proxy {proxy!r} is neither a client nor a node")
            path = self.get(c, "path", p, list)
            if not 1 <= len(path) <= oc.MAX_LAYERS:
                self.err(p + ("path",), f"path length must be 1..{oc.MAX_LAYERS}")
            for j, hop in enumerate(path):
                if hop not in ids:
                    self.err(p + ("path", j), f"unknown node {hop!r}")
            if len(set(path)) != len(path) or proxy in path:
                self.err(p + ("path",), "path nodes must be distinct and exclude the proxy")
            at = self.get(c, "at", p, int, 0)
            circ_ids[cid] = at
            s.circuits.append(CircuitSpec(cid, proxy, list(path), at))

        for i, st in enumerate(self.get(d, "streams", (), list, [])):
            p = ("streams", i)
            self.check_keys(st, {"circuit", "host", "port", "data", "at", "sign"}, p)
            cid = self.get(st, "circuit", p, str)
            if cid not in circ_ids:
                self.err(p + ("circuit",), f"unknown circuit {cid!r}")
            host = self.get(st, "host", p, str)
            if host not in s.destinations:
                self.err(p + ("host",), f"host {host!r} is not a listed destination")
            port = self.get(st, "port", p, int)
            if not 0 <= port <= 0xFFFF:
                self.err(p + ("port",), "port must fit in 16 bits")
            at = self.get(st, "at", p, int, circ_ids[cid])
            if at < circ_ids[cid]:
                self.err(p + ("at",), "stream scheduled before its circuit")
            data = str(self.get(st, "data", p, (str, int), "")).encode()
            sign = self.get(st, "sign", p, bool, True)
            s.streams.append(StreamSpec(cid, host, port, data, at, sign))

        adv = self.get(d, "adversary", (), dict, {})
        p = ("adversary",)
        self.check_keys(adv, {"compromised", "scripts", "schedule", "isp"}, p)
        a = AdversarySpec()
        for j, nid in enumerate(self.get(adv, "compromised", p, list, [])):
            if nid not in ids:
                self.err(p + ("compromised", j), f"unknown node {nid!r}")
            a.compromised.append(nid)
        for nid, script in self.get(adv, "scripts", p, dict, {}).items():
            if nid not in a.compromised:
                self.err(p + ("scripts", nid), "scripts apply only to pre-run compromised nodes")
            if script not in SCRIPTS:
                self.err(p + ("scripts", nid), f"unknown script {script!r}; have {sorted(SCRIPTS)}")
            a.scripts[nid] = script
        for j, ev in enumerate(self.get(adv, "schedule", p, list, [])):
            q = p + ("schedule", j)
            self.check_keys(ev, {"node", "at"}, q)
            nid = self.get(ev, "node", q, str)
            if nid not in ids:
                self.err(q + ("node",), f"unknown node {nid!r}")
            a.schedule.append((nid, self.get(ev, "at", q, int)))
        a.isp = self.get(adv, "isp", p, bool, False)
        s.adversary = a
        return s


def parse_scenario(text: str, source: str = "<scenario>") -> Scenario:
    return _Parser(text, source).parse()


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def bundled_scenarios() -> dict[str, str]:
    """Name -> YAML text of the scenarios shipped with the package."""
    root = resources.files("backref") / "scenarios"
    return {
        p.name.removesuffix(".yaml"): p.read_text()
        for p in sorted(root.iterdir(), key=lambda p: p.name)
        if p.name.endswith(".yaml")
    }


def load_bundled(name: str) -> Scenario:
    texts = bundled_scenarios()
    if name not in texts:
        raise KeyError(f"no bundled scenario {name!r}; have {sorted(texts)}")
    return parse_scenario(texts[name], f"{name}.yaml")


# -- adversary scripts for live runs ---------------------------------------


class DropAll(NodeScript):
    def on_receive(self, node, data, src):
        node.stats["adversary.dropped"] += 1
        return None


class SubstituteExtend(NodeScript):
    """After logging an extend honestly, forward a pseudonym the adversary
    owns instead of the client's. The successor sees a valid endorsement
    from this node, so the blame for X* stays here."""

    def __init__(self):
        self.secrets: list[int] = []

    def forward_pseudonym(self, node, circ, X):
        fake = new_pseudonym(node.net.rand_bytes(32), 1)
        self.secrets.append(fake.x)
        node.stats["adversary.substituted"] += 1
        return fake.X


class FlipRelayBit(NodeScript):
    def on_send(self, node, dst, data):
        if len(data) > 40 and data[16] == oc.CellKind.RELAY:
            b = bytearray(data)
            b[-1] ^= 1
            node.stats["adversary.tampered"] += 1
            return bytes(b)
        return data


SCRIPTS = {
    "drop": DropAll,
    "substitute-extend": SubstituteExtend,
    "flip-relay-bit": FlipRelayBit,
}


# -- running ---------------------------------------------------------------


@dataclass
class StreamOutcome:
    spec: StreamSpec
    origin: str
    ticket: StreamTicket | None = None


@dataclass
class RunSummary:
    name: str
    seed: int
    cells: dict[str, int]
    records: dict[str, int]
    streams_sent: int
    streams_delivered: int
    transcript_hash: str
    export_hashes: dict[str, str]
    verdicts: dict[str, bool] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


class RunResult:
    def __init__(self, scenario: Scenario, net: SimNet, nodes: dict, clients: dict, circuits: dict, streams: list):
        self.scenario = scenario
        self.net = net
        self.nodes: dict[str, Node] = nodes
        self.clients: dict[str, Client] = clients
        self.circuits = circuits
        self.streams: list[StreamOutcome] = streams

    @property
    def directory(self) -> Directory:
        return self.net.directory

    @property
    def isp(self) -> IspRegistry:
        return self.net.isp

    def exports(self) -> dict[str, bytes]:
        return {nid: n.log.export() for nid, n in self.nodes.items()}

    def snapshots(self, exclude=()) -> dict[str, LogView]:
        """Snapshots as a tracer on another machine would see them: parsed
        back from the exported bytes."""
        return {nid: load_export(b) for nid, b in self.exports().items() if nid not in exclude}

    def origin_of(self, req: StreamRequest) -> str | None:
        for s in self.streams:
            t = s.ticket
            if t is not None and t.request == req:
                return s.origin
        return None

    def queries(self) -> list[tuple[TraceQuery, str]]:
        """(query, true originator) for every delivered stream the
        destination logged with a request timestamp."""
        out = []
        for host, server in sorted(self.net.destinations.items()):
            for e in server.log:
                if e.ts is None:
                    continue
                exit_entry = self.directory.by_address(e.source)
                req = StreamRequest(e.host.encode(), e.port, e.ts)
                origin = self.origin_of(req)
                if exit_entry is None or origin is None:
                    continue
                out.append((TraceQuery(exit_entry.node_id, req.address, req.port, req.ts), origin))
        return out

    def trace(self, query: TraceQuery, snapshots=None, isp=None, **kw) -> TraceReport:
        kw.setdefault("circuit_length", self.scenario.circuit_length)
        kw.setdefault("window", self.scenario.timestamp_window)
        return full_trace(
            query,
            self.snapshots() if snapshots is None else snapshots,
            self.directory,
            self.isp if isp is None else isp,
            **kw,
        )

    def summary(self, verdicts: dict[str, bool] | None = None) -> RunSummary:
        cells = {
            k.split(".", 1)[1]: v for k, v in sorted(self.net.stats.items()) if k.startswith("cells.")
        }
        return RunSummary(
            self.scenario.name,
            self.net.seed,
            cells,
            {nid: len(n.log) for nid, n in self.nodes.items()},
            sum(1 for s in self.streams if s.ticket is not None),
            self.net.stats["streams.delivered"],
            self.net.transcript_hash(),
            {nid: hashlib.sha256(b).hexdigest() for nid, b in self.exports().items()},
            dict(verdicts or {}),
        )


def node_seed(seed: int, node_id: str) -> bytes:
    return f"backref-node:{seed}:{node_id}".encode()


def run_scenario(scn: Scenario, seed: int | None = None, until_ms: int | None = None) -> RunResult:
    seed = scn.seed if seed is None else seed
    net = SimNet(seed, scn.epoch, scn.latency_ms)
    nodes: dict[str, Node] = {}
    for ns in scn.nodes:
        cfg = NodeConfig(
            ns.id,
            ns.address,
            ns.roles,
            ns.whitelist,
            backref=scn.backref,
            window=scn.timestamp_window,
        )
        nodes[ns.id] = Node(cfg, net, node_seed(seed, ns.id))
    for n in nodes.values():
        n.setup()
    clients = {a: Client(a, net, scn.backref) for a in scn.clients}
    for h in scn.destinations:
        net.add_destination(DestinationServer(h))

    adv = scn.adversary
    net.isp.compromised = adv.isp
    for nid in adv.compromised:
        script = SCRIPTS[adv.scripts[nid]]() if nid in adv.scripts else None
        net.compromise(nid, script=script)
    for nid, t in adv.schedule:
        net.compromise(nid, at_ms=t)

    circuits: dict[str, Any] = {}
    proxies = {**clients, **{nid: n for nid, n in nodes.items()}}

    def build(spec: CircuitSpec):
        circuits[spec.id] = proxies[spec.proxy].create_circuit(spec.path)

    for c in scn.circuits:
        net.sched.at(c.at, build, c)

    proxy_of = {c.id: c.proxy for c in scn.circuits}
    outcomes: list[StreamOutcome] = []

    def send(o: StreamOutcome):
        s = o.spec
        circ = circuits.get(s.circuit)
        if circ is None:
            return
        o.ticket = proxies[proxy_of[s.circuit]].send_stream(
            circ.handle, s.host, s.port, s.data, s.sign
        )

    for s in scn.streams:
        p = proxy_of[s.circuit]
        o = StreamOutcome(s, nodes[p].address if p in nodes else p)
        outcomes.append(o)
        net.sched.at(s.at, send, o)

    net.run(until_ms)
    return RunResult(scn, net, nodes, clients, circuits, outcomes)


# -- random honest scenarios -----------------------------------------------


def node_address(i: int) -> str:
    return f"10.0.{100 + i}.{200 + i}"


def client_address(j: int) -> str:
    return f"192.168.{100 + j}.{200 + j}"


def random_honest(
    seed: int,
    n_nodes: int | None = None,
    n_clients: int | None = None,
    streams: tuple[int, int] = (1, 5),
    hops: int = 3,
    whitelist_prob: float = 0.0,
) -> Scenario:
    """A random all-honest scenario: each client builds one ``hops``-relay
    circuit and sends 1-5 streams over it."""
    rng = random.Random(seed)
    n_nodes = n_nodes or rng.randint(hops, hops + 4)
    n_clients = n_clients or rng.randint(1, 3)
    dests = ["example.com", "news.example.org", "mail.example.net"]
    s = Scenario(seed=seed, name=f"random-honest-{seed}", circuit_length=hops)
    s.destinations = dests
    for i in range(n_nodes):
        wl = ("news.example.org",) if rng.random() < whitelist_prob else ()
        s.nodes.append(NodeSpec(f"relay-{i:03d}", node_address(i), ROLES, wl))
    for j in range(n_clients):
        addr = client_address(j)
        s.clients.append(addr)
        path = rng.sample([n.id for n in s.nodes], hops)
        cid = f"c{j}"
        start = rng.randint(0, 50)
        s.circuits.append(CircuitSpec(cid, addr, path, start))
        for k in range(rng.randint(*streams)):
            # distinct (host, port, second) per stream keeps H(m) unique
            s.streams.append(
                StreamSpec(
                    cid,
                    rng.choice(dests),
                    rng.choice([80, 443, 8080]),
                    f"req-{j}-{k}".encode(),
                    start + 1000 * (1 + k + j * 6),
                )
            )
    return s
