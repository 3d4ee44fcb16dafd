"""The four security games as executable checks.

* backward traceability: every non-whitelisted stream in an honest run
  traces to the address that sent it
* no false accusation: an adversary holding a subset of {N1, N2, N3, ISP}
  rewrites what it controls and tries to make the trace name someone else
* anonymity swap: two users exchange messages; the adversary's view of the
  two runs may differ only inside ciphertext
* no forward traceability: logs and post-hoc secrets of a node never name
  the node it handed a circuit to
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Callable

from backref import onion as oc
from backref.evidence import ExitEvidenceRecord, LogView, RelayEvidenceRecord, load_export
from backref.pseudonym import (
    endorse_pseudonym,
    new_pseudonym,
    sign_pseudonym,
    sign_stream,
)
from backref.scenario import (
    CircuitSpec,
    NodeSpec,
    RunResult,
    Scenario,
    StreamSpec,
    client_address,
    node_address,
    run_scenario,
)
from backref.simnet import SimNet
from backref.tracer import Outcome, TraceQuery, TraceReport


@dataclass
class GameResult:
    name: str
    verdict: bool
    details: dict = field(default_factory=dict)


# -- backward traceability -------------------------------------------------


def backward_traceability(result: RunResult) -> GameResult:
    """Every delivered, non-whitelisted stream traces to its sender."""
    traced = skipped = 0
    failures = []
    for q, origin in result.queries():
        if result.nodes[q.exit_id].whitelist.allows(q.address, q.port):
            skipped += 1
            continue
        rep = result.trace(q)
        if (
            rep.outcome is Outcome.USER_IDENTIFIED
            and rep.user_address == origin
            and (rep.isp_attested or result.directory.by_address(origin) is not None)
            and rep.verify_signatures()
        ):
            traced += 1
        else:
            failures.append((q, rep.outcome.value, getattr(rep.fail_reason, "value", None)))
    expected = sum(
        1
        for s in result.streams
        if s.ticket is not None and s.ticket.reply is not None and not _whitelisted(result, s)
    )
    ok = not failures and traced == expected
    return GameResult(
        "backward-traceability",
        ok,
        {"traced": traced, "expected": expected, "whitelisted": skipped, "failures": failures},
    )


def _whitelisted(result: RunResult, s) -> bool:
    circ = result.circuits.get(s.spec.circuit)
    if circ is None:
        return False
    exit_id = circ.hops[-1].node_id
    return result.nodes[exit_id].whitelist.allows(s.spec.host, s.spec.port)


# -- no false accusation ---------------------------------------------------

PARTIES = ("N1", "N2", "N3", "ISP")
VICTIM = client_address(0)  # the real sender
INNOCENT = client_address(1)  # whom the adversary wants blamed


def two_circuit_scenario(seed: int = 11) -> Scenario:
    """Two users on the same three relays, plus a spare relay. The victim's
    stream is the one traced; the innocent user's circuit supplies material
    for splicing."""
    s = Scenario(seed=seed, name=f"two-circuit-{seed}")
    s.nodes = [NodeSpec(f"relay-{i:03d}", node_address(i)) for i in range(4)]
    s.clients = [VICTIM, INNOCENT]
    s.destinations = ["example.com", "news.example.org"]
    path = ["relay-001", "relay-002", "relay-003"]
    s.circuits = [CircuitSpec("victim", VICTIM, path, 0), CircuitSpec("innocent", INNOCENT, path, 5)]
    s.streams = [
        StreamSpec("victim", "example.com", 80, b"victim-request", 1000),
        StreamSpec("innocent", "news.example.org", 443, b"innocent-request", 2000),
    ]
    return s


@dataclass
class AttackContext:
    result: RunResult
    subset: frozenset
    query: TraceQuery
    roles: dict[str, str]  # N1/N2/N3 -> node id
    snapshots: dict[str, LogView]
    isp: object
    victim_chain: dict[str, object]  # N1/N2/N3 -> victim's record
    innocent_chain: dict[str, object]

    def controls(self, party: str) -> bool:
        return party in self.subset

    def node(self, party: str):
        return self.result.nodes[self.roles[party]]

    def replace_record(self, party: str, old, new) -> None:
        nid = self.roles[party]
        taken = set(new.indexes())
        recs = [
            new if r is old else r
            for r in self.snapshots[nid]
            if r is old or not taken & set(r.indexes())
        ]
        self.snapshots[nid] = LogView(nid, recs)

    def forge_isp(self, address: str, X: bytes) -> None:
        if self.controls("ISP"):
            self.isp.forge(address, X)


def _chain(result: RunResult, circuit: str, snapshots: dict[str, LogView]) -> dict[str, object]:
    circ = result.circuits[circuit]
    out = {}
    for i, party in enumerate(("N1", "N2", "N3")):
        X = circ.hops[i].X
        for r in snapshots[circ.hops[i].node_id]:
            if r.X_in == X:
                out[party] = r
                break
    return out


def attack_reattribute_entry(ctx: AttackContext) -> None:
    """Entry rewrites the user address on the victim's record."""
    if ctx.controls("N1"):
        rec = ctx.victim_chain["N1"]
        ctx.replace_record("N1", rec, replace(rec, pred_address=INNOCENT))
    ctx.forge_isp(INNOCENT, ctx.victim_chain["N1"].X_in)


def attack_shortcut(ctx: AttackContext) -> None:
    """The most downstream compromised relay claims it got the circuit
    straight from the innocent user."""
    for party in ("N3", "N2"):
        if ctx.controls(party):
            rec = ctx.victim_chain[party]
            ctx.replace_record(party, rec, replace(rec, inbound=None, pred_address=INNOCENT))
            ctx.forge_isp(INNOCENT, rec.X_in)
            return


def attack_splice(ctx: AttackContext) -> None:
    """Graft the innocent circuit's inbound half onto the victim's records
    at every compromised relay (the two-circuit splice)."""
    for party in ("N1", "N2", "N3"):
        if ctx.controls(party):
            v, i = ctx.victim_chain[party], ctx.innocent_chain[party]
            ctx.replace_record(
                party, v, replace(v, X_in=i.X_in, inbound=i.inbound, pred_address=i.pred_address)
            )
    if ctx.controls("ISP"):
        ctx.forge_isp(INNOCENT, ctx.victim_chain["N1"].X_in)


def attack_fabricate(ctx: AttackContext) -> None:
    """Replace the victim's chain with one built from adversary pseudonyms,
    as far upstream as the adversary controls relays. Where it reaches an
    honest relay it signs the endorsement with a key it does own."""
    if not ctx.controls("N3"):
        return
    rng = ctx.result.net.sched.rng
    parties = ["N3", "N2", "N1"]
    own = [p for p in parties if ctx.controls(p)]
    fake = {p: new_pseudonym(rng.randbytes(32), 1) for p in parties}
    exit_rec = ctx.victim_chain["N3"]
    ts = exit_rec.request.ts
    any_sk = ctx.node(own[0]).keypair.sk
    for idx, party in enumerate(parties):
        if not ctx.controls(party):
            return
        pred_party = parties[idx + 1] if idx + 1 < len(parties) else None
        X = fake[party]
        if pred_party is None:
            inbound, pred_addr = None, INNOCENT
            ctx.forge_isp(INNOCENT, X.X)
        else:
            signer = ctx.node(pred_party).keypair.sk if ctx.controls(pred_party) else any_sk
            inbound = endorse_pseudonym(signer, X.X, ts)
            pred_addr = ctx.node(pred_party).address
        old = ctx.victim_chain[party]
        if party == "N3":
            new = ExitEvidenceRecord(
                pred_addr, X.X, inbound, exit_rec.request, sign_stream(X.x, exit_rec.request), ts
            )
        else:
            succ = fake[parties[idx - 1]]
            new = RelayEvidenceRecord(pred_addr, X.X, inbound, sign_pseudonym(X.x, succ.X, ts), ts)
        ctx.replace_record(party, old, new)


def attack_frame_spare_relay(ctx: AttackContext) -> None:
    """A compromised relay names the uninvolved spare relay as its
    predecessor, endorsing with its own key."""
    spare = ctx.result.nodes["relay-000"]
    for party in ("N3", "N2", "N1"):
        if ctx.controls(party):
            rec = ctx.victim_chain[party]
            sp = endorse_pseudonym(ctx.node(party).keypair.sk, rec.X_in, rec.logged_at)
            sp = replace(sp, signer=spare.pk)
            ctx.replace_record(party, rec, replace(rec, inbound=sp, pred_address=spare.address))
            return


def attack_isp_forgery(ctx: AttackContext) -> None:
    """The ISP alone vouches for the innocent user on every pseudonym it
    can see."""
    if ctx.controls("ISP"):
        for _, X in ctx.isp.entries():
            ctx.isp.forge(INNOCENT, X)


ATTACKS: dict[str, Callable[[AttackContext], None]] = {
    "reattribute-entry": attack_reattribute_entry,
    "shortcut": attack_shortcut,
    "splice": attack_splice,
    "fabricate": attack_fabricate,
    "frame-spare-relay": attack_frame_spare_relay,
    "isp-forgery": attack_isp_forgery,
}


@dataclass
class AttackOutcome:
    subset: tuple[str, ...]
    attack: str
    outcome: str
    fail_reason: str | None
    accused: str | None

    @property
    def false_accusation(self) -> bool:
        return self.outcome == Outcome.USER_IDENTIFIED.value and self.accused != VICTIM


def run_attack(base: RunResult, subset, attack: str) -> tuple[AttackOutcome, TraceReport]:
    subset = frozenset(subset)
    circ = base.circuits["victim"]
    roles = {p: circ.hops[i].node_id for i, p in enumerate(("N1", "N2", "N3"))}
    req = base.streams[0].ticket.request
    query = TraceQuery(roles["N3"], req.address, req.port, req.ts)
    isp = base.isp.copy()
    isp.compromised = "ISP" in subset
    snaps = base.snapshots()
    ctx = AttackContext(
        base,
        subset,
        query,
        roles,
        snaps,
        isp,
        _chain(base, "victim", snaps),
        _chain(base, "innocent", snaps),
    )
    ATTACKS[attack](ctx)
    rep = base.trace(query, snapshots=ctx.snapshots, isp=ctx.isp)
    out = AttackOutcome(
        tuple(p for p in PARTIES if p in subset),
        attack,
        rep.outcome.value,
        None if rep.fail_reason is None else rep.fail_reason.value,
        rep.user_address if rep.outcome is Outcome.USER_IDENTIFIED else None,
    )
    return out, rep


def all_subsets(strict: bool = True):
    n = len(PARTIES) - (1 if strict else 0)
    for k in range(0, n + 1):
        yield from (frozenset(c) for c in itertools.combinations(PARTIES, k))


def no_false_accusation(seed: int = 11, base: RunResult | None = None) -> GameResult:
    """Every attack against every strict subset, plus total corruption."""
    base = base or run_scenario(two_circuit_scenario(seed))
    outcomes = [run_attack(base, s, a)[0] for s in all_subsets(True) for a in ATTACKS]
    total = [run_attack(base, PARTIES, a)[0] for a in ATTACKS]
    bad = [o for o in outcomes if o.false_accusation]
    return GameResult(
        "no-false-accusation",
        not bad,
        {
            "runs": len(outcomes),
            "false_accusations": [(o.subset, o.attack) for o in bad],
            "total_corruption_succeeds": any(o.false_accusation for o in total),
            "outcomes": outcomes,
            "total": total,
        },
    )


# -- anonymity swap --------------------------------------------------------

SWAP_M1 = b"message-one-AAAA"
SWAP_M2 = b"message-two-BBBB"


def swap_scenario(swapped: bool, seed: int = 5) -> Scenario:
    s = Scenario(seed=seed, name="anonymity-" + ("Q" if swapped else "P"))
    s.nodes = [NodeSpec(f"relay-{i:03d}", node_address(i)) for i in range(1, 4)]
    s.clients = [client_address(1), client_address(2)]
    s.destinations = ["example.com"]
    path = ["relay-001", "relay-002", "relay-003"]
    s.circuits = [
        CircuitSpec("u1", client_address(1), path, 0),
        CircuitSpec("u2", client_address(2), path, 0),
    ]
    m1, m2 = (SWAP_M2, SWAP_M1) if swapped else (SWAP_M1, SWAP_M2)
    s.streams = [
        StreamSpec("u1", "example.com", 80, m1, 1000),
        # one second apart: identical requests in the same second share an index
        StreamSpec("u2", "example.com", 80, m2, 2000),
    ]
    s.adversary.compromised = ["relay-001", "relay-002"]
    return s


def adversary_view(result: RunResult) -> list[tuple]:
    """What the adversary sees, with onion ciphertext replaced by its length.

    Link metadata is visible everywhere. Cells on links touching a
    compromised relay are visible in full; the adversary also strips the
    layers it holds keys for, and what remains is still ciphertext.
    """
    view = []
    for ev in result.net.adversary.taps:
        row: tuple = (ev.time_ms, ev.src, ev.dst, ev.size)
        if ev.content is not None:
            cell = oc.Cell.decode(ev.content)
            if cell.kind is oc.CellKind.RELAY:
                row += (cell.cid, int(cell.kind), ("ciphertext", len(cell.payload)))
            else:
                row += (cell.cid, int(cell.kind), cell.payload)
        view.append(row)
    for nid in sorted(result.net.adversary.compromised):
        view.append(("log", nid, result.nodes[nid].log.export()))
    return view


def _exit_plaintexts(result: RunResult, keys_from: str) -> list[bytes | None]:
    """Try to open the stream cells that reached the exit using the circuit
    keys held by ``keys_from``."""
    exit_node = result.nodes["relay-003"]
    holder = result.nodes[keys_from]
    keys = [c.key for c in holder.circuits.values()]
    out = []
    for ev in result.net.adversary.taps:
        if ev.dst != exit_node.address or ev.content is None:
            continue
        cell = oc.Cell.decode(ev.content)
        if cell.kind is not oc.CellKind.RELAY:
            continue
        opened = None
        for k in keys:
            try:
                tag, msg = oc.decode_relay(oc.unwrap_layer(cell.payload, k))
            except (oc.LayerAuthFailure, oc.MalformedCell):
                continue
            if tag is oc.RelayTag.BEGIN:
                opened = msg.data
        out.append(opened)
    return [o for o in out if o is not None] if keys_from == "relay-003" else out


def pseudonym_duplicate_scan(trials: int = 1000) -> dict:
    """Fresh pseudonyms across independent runs: derive each run's first
    pseudonym exactly as a proxy does and count repeats."""
    seen: dict[bytes, int] = {}
    dups = 0
    for t in range(trials):
        net = SimNet(seed=t)
        X = new_pseudonym(net.rand_bytes(32), 1).X
        if X in seen:
            dups += 1
        seen[X] = t
    return {"trials": trials, "duplicates": dups}


def anonymity_swap(seed: int = 5, trials: int = 1000) -> GameResult:
    P = run_scenario(swap_scenario(False, seed))
    Q = run_scenario(swap_scenario(True, seed))
    view_equal = adversary_view(P) == adversary_view(Q)
    p_exit, q_exit = _exit_plaintexts(P, "relay-003"), _exit_plaintexts(Q, "relay-003")
    swapped = p_exit == [SWAP_M1, SWAP_M2] and q_exit == [SWAP_M2, SWAP_M1]
    leaked = [
        x
        for nid in ("relay-001", "relay-002")
        for x in _exit_plaintexts(P, nid) + _exit_plaintexts(Q, nid)
        if x is not None
    ]
    scan = pseudonym_duplicate_scan(trials)
    ok = view_equal and swapped and not leaked and scan["duplicates"] == 0
    return GameResult(
        "anonymity-swap",
        ok,
        {
            "views_equal": view_equal,
            "exit_plaintexts_P": p_exit,
            "exit_plaintexts_Q": q_exit,
            "opened_by_compromised": len(leaked),
            "pseudonym_scan": scan,
        },
    )


# -- no forward traceability -----------------------------------------------


def identity_encodings(entry) -> list[bytes]:
    """Byte strings that would identify a relay if found in a log."""
    nid, addr = entry.node_id.encode(), entry.address.encode()
    return [
        nid,
        addr,
        bytes([len(nid)]) + nid,
        len(addr).to_bytes(2, "big") + addr,
        entry.pk,
    ]


def _successors(result: RunResult) -> dict[bytes, str]:
    """X_in of every relay record -> node id of that relay's successor."""
    out = {}
    for circ in result.circuits.values():
        for i, hop in enumerate(circ.hops[:-1]):
            if hop.state is not None:
                out[hop.X] = circ.hops[i + 1].node_id
    return out


def forward_scan(result: RunResult, bundles=None) -> dict:
    """Count successor identity encodings in every record and every
    post-hoc secrets bundle."""
    succ = _successors(result)
    directory = result.directory
    hits = []
    scanned = 0
    for nid, node in result.nodes.items():
        for rec in load_export(node.log.export()):
            blob = rec.encode()
            scanned += 1
            s = succ.get(rec.X_in)
            if s is None:
                continue
            for enc in identity_encodings(directory.by_id(s)):
                if enc in blob:
                    hits.append((nid, "record", s))
    for nid, b in (bundles or {}).items():
        blob = b.serialize()
        scanned += 1
        node_succ = {s for X, s in succ.items() if any(r.X_in == X for r in result.nodes[nid].log)}
        preds = {r.pred_address for r in result.nodes[nid].log}
        for s in node_succ:
            entry = directory.by_id(s)
            if entry.address in preds:
                # also a predecessor on some other circuit: only the
                # non-log parts of the bundle must be clean
                blob_chk = blob[: len(blob) - len(b.log_export)]
            else:
                blob_chk = blob
            for enc in identity_encodings(entry):
                if enc in blob_chk:
                    hits.append((nid, "bundle", s))
    return {"scanned": scanned, "hits": hits}


def no_forward_traceability(result: RunResult | None = None, scn: Scenario | None = None) -> GameResult:
    """Run (or take) a scenario, compromise every relay after its circuits
    went idle, and scan logs and bundles."""
    if result is None:
        scn = scn or two_circuit_scenario()
        timeout = 600
        scn = replace(scn, adversary=replace(scn.adversary))
        end = max([s.at for s in scn.streams] + [0])
        post = end + (timeout + 5) * 1000
        scn.adversary.schedule = [(n.id, post) for n in scn.nodes]
        result = run_scenario(scn)
    bundles = dict(result.net.adversary.bundles)
    scan = forward_scan(result, bundles)
    live = {nid: len(b.circuits) for nid, b in bundles.items()}
    ok = not scan["hits"] and not any(live.values())
    return GameResult(
        "no-forward-traceability",
        ok,
        {**scan, "live_circuits_in_bundles": live},
    )


GAMES = {
    "backward-traceability": lambda r: backward_traceability(r),
    "no-forward-traceability": lambda r: no_forward_traceability(r),
}


def evaluate(name: str, result: RunResult) -> GameResult:
    if name in GAMES:
        return GAMES[name](result)
    if name == "no-false-accusation":
        return no_false_accusation(base=result) if "victim" in result.circuits else no_false_accusation()
    if name == "anonymity-swap":
        return anonymity_swap(result.scenario.seed, trials=200)
    raise KeyError(f"unknown game {name!r}")
