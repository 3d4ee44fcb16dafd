"""Backward traceability over exported evidence logs.

Starting from a stream request seen at a destination, the tracer looks the
request up in the exit's log, checks the stream signature and the
predecessor's endorsement, then walks back one hop at a time: each relay
record must contain the pseudonym the successor was handed, signed under the
pseudonym that relay received, which in turn was endorsed by the relay's own
predecessor. The walk ends at an entry record naming a client address, which
is then checked against the ISP attestation registry.

Every signature the verdict relies on is copied into the :class:`TraceReport`
so a third party can re-check the chain from the report alone.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field
from typing import Mapping

from backref import pairing_suite as ps
from backref.evidence import ExitEvidenceRecord, LogView
from backref.pseudonym import (
    DEFAULT_WINDOW,
    SignedPseudonym,
    SignerKind,
    StreamRequest,
    check_signature,
    check_stream,
)
from backref.simnet import Directory, IspRegistry

DEFAULT_CIRCUIT_LENGTH = 3


class Outcome(str, enum.Enum):
    USER_IDENTIFIED = "user-identified"
    TRACE_FAIL = "trace-fail"
    NON_COOPERATING = "non-cooperating"


class FailReason(str, enum.Enum):
    NO_RECORD = "no-record"
    BAD_SIGNATURE = "bad-signature"
    TIMESTAMP_MISMATCH = "timestamp-mismatch"
    UNKNOWN_PREDECESSOR = "unknown-predecessor"
    NON_COOPERATING = "non-cooperating"
    ISP_UNATTESTED = "isp-unattested"
    CHAIN_LENGTH = "chain-length"
    REPEATED_NODE = "repeated-node"


EXIT_CODES = {Outcome.USER_IDENTIFIED: 0, Outcome.TRACE_FAIL: 2, Outcome.NON_COOPERATING: 3}

_DST_NAMES = {
    "pseudonym": ps.DST_PSEUDONYM,
    "endorsement": ps.DST_ENDORSE,
    "stream": ps.DST_STREAM,
}


@dataclass(frozen=True)
class TraceQuery:
    exit_id: str
    address: bytes
    port: int
    ts: int

    def __post_init__(self):
        if isinstance(self.address, str):
            object.__setattr__(self, "address", self.address.encode())

    def request(self, dt: int = 0) -> StreamRequest:
        return StreamRequest(self.address, self.port, self.ts + dt)


@dataclass(frozen=True)
class SignatureEvidence:
    """One (signer, message, sigma) triple under a named domain tag."""

    label: str
    dst: str
    signer: str
    message: str
    sigma: str

    def verify(self) -> bool:
        return ps.verify(
            bytes.fromhex(self.signer),
            bytes.fromhex(self.message),
            bytes.fromhex(self.sigma),
            _DST_NAMES[self.dst],
        )


def _evidence_sp(label: str, sp: SignedPseudonym) -> SignatureEvidence:
    dst = "pseudonym" if sp.kind is SignerKind.PSEUDONYM else "endorsement"
    return SignatureEvidence(label, dst, sp.signer.hex(), sp.message().hex(), sp.sigma.hex())


@dataclass
class HopResult:
    node_id: str
    pseudonym: str
    signatures: list[SignatureEvidence]
    predecessor: str
    predecessor_is_user: bool
    predecessor_pk: str | None = None
    outbound: str | None = None
    inbound_ts: int | None = None


@dataclass
class TraceFail:
    node_id: str
    reason: FailReason
    detail: str = ""


@dataclass
class TraceReport:
    query: TraceQuery
    hops: list[HopResult] = field(default_factory=list)
    outcome: Outcome = Outcome.TRACE_FAIL
    user_address: str | None = None
    isp_attested: bool = False
    fail_node: str | None = None
    fail_reason: FailReason | None = None
    detail: str = ""
    events: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]

    def verify_signatures(self) -> bool:
        """Re-check every signature and the chain linkage using only the report."""
        if not all(s.verify() for h in self.hops for s in h.signatures):
            return False
        for h in self.hops:
            if not h.predecessor_is_user:
                endorsement = [s for s in h.signatures if s.dst == "endorsement"]
                if not endorsement or endorsement[0].signer != h.predecessor_pk:
                    return False
        for later, earlier in zip(self.hops, self.hops[1:]):
            if earlier.outbound != later.pseudonym:
                return False
        return True

    def to_json(self) -> str:
        d = {
            "query": {
                "exit": self.query.exit_id,
                "address": self.query.address.decode("utf-8", "replace"),
                "port": self.query.port,
                "ts": self.query.ts,
            },
            "outcome": self.outcome.value,
            "user_address": self.user_address,
            "isp_attested": self.isp_attested,
            "fail_node": self.fail_node,
            "fail_reason": None if self.fail_reason is None else self.fail_reason.value,
            "detail": self.detail,
            "events": self.events,
            "hops": [
                {**asdict(h), "signatures": [asdict(s) for s in h.signatures]} for h in self.hops
            ],
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TraceReport":
        d = json.loads(text)
        q = d["query"]
        hops = []
        for h in d["hops"]:
            sigs = [SignatureEvidence(**s) for s in h.pop("signatures")]
            hops.append(HopResult(signatures=sigs, **h))
        return cls(
            TraceQuery(q["exit"], q["address"], q["port"], q["ts"]),
            hops,
            Outcome(d["outcome"]),
            d["user_address"],
            d["isp_attested"],
            d["fail_node"],
            None if d["fail_reason"] is None else FailReason(d["fail_reason"]),
            d["detail"],
            d["events"],
        )


def _check_inbound(rec, node_id: str, directory: Directory):
    """Verify the endorsement on a record's inbound pseudonym and bind its
    signer to the roster entry at the recorded predecessor address."""
    sp = rec.inbound
    if sp.kind is not SignerKind.NODE or sp.X != rec.X_in:
        return TraceFail(node_id, FailReason.BAD_SIGNATURE, "inbound is not an endorsement of X_in")
    pred = directory.by_address(rec.pred_address)
    if pred is None:
        return TraceFail(node_id, FailReason.UNKNOWN_PREDECESSOR, rec.pred_address)
    if pred.pk != sp.signer or not check_signature(sp, pred.pk):
        return TraceFail(node_id, FailReason.BAD_SIGNATURE, "endorsement does not verify")
    return pred


def trace_stream(
    query: TraceQuery,
    snapshot: LogView,
    directory: Directory,
    tolerance: int = 0,
) -> HopResult | TraceFail:
    exit_id = query.exit_id
    rec = None
    for dt in sorted(range(-tolerance, tolerance + 1), key=abs):
        rec = snapshot.lookup_stream(query.request(dt))
        if rec is not None:
            break
    if rec is None:
        same_dest = any(
            isinstance(r, ExitEvidenceRecord)
            and r.request.address == query.address
            and r.request.port == query.port
            for r in snapshot
        )
        reason = FailReason.TIMESTAMP_MISMATCH if same_dest else FailReason.NO_RECORD
        return TraceFail(exit_id, reason)
    if abs(rec.request.ts - query.ts) > tolerance:
        return TraceFail(exit_id, FailReason.TIMESTAMP_MISMATCH)
    if not check_stream(rec.X_in, rec.request, rec.stream_sigma):
        return TraceFail(exit_id, FailReason.BAD_SIGNATURE, "stream signature does not verify")
    sigs = [
        SignatureEvidence(
            "stream",
            "stream",
            rec.X_in.hex(),
            rec.request.encode().hex(),
            rec.stream_sigma.hex(),
        )
    ]
    if rec.user_origin:
        return HopResult(exit_id, rec.X_in.hex(), sigs, rec.pred_address, True)
    pred = _check_inbound(rec, exit_id, directory)
    if isinstance(pred, TraceFail):
        return pred
    sigs.append(_evidence_sp("endorsement", rec.inbound))
    return HopResult(
        exit_id, rec.X_in.hex(), sigs, pred.node_id, False, pred.pk.hex(), None, rec.inbound.ts
    )


def trace_hop(
    node_id: str,
    snapshot: LogView,
    X_next: bytes,
    ts_next: int | None,
    directory: Directory,
    window: int = DEFAULT_WINDOW,
) -> HopResult | TraceFail:
    """One backward step at ``node_id``: find the record whose outbound
    pseudonym is ``X_next`` and prove it was signed under this node's inbound
    pseudonym. ``ts_next`` is the timestamp on the successor-side endorsement
    of ``X_next``; the two must lie within ``window`` of each other."""
    rec = snapshot.lookup_outbound(X_next)
    if rec is None:
        return TraceFail(node_id, FailReason.NO_RECORD)
    out = rec.outbound
    if out.kind is not SignerKind.PSEUDONYM or out.signer != rec.X_in:
        return TraceFail(node_id, FailReason.BAD_SIGNATURE, "outbound not signed under X_in")
    if not check_signature(out, rec.X_in):
        return TraceFail(node_id, FailReason.BAD_SIGNATURE, "pseudonym signature does not verify")
    if ts_next is not None and abs(ts_next - out.ts) > window:
        return TraceFail(node_id, FailReason.TIMESTAMP_MISMATCH)
    sigs = [_evidence_sp("linkability", out)]
    if rec.user_origin:
        return HopResult(node_id, rec.X_in.hex(), sigs, rec.pred_address, True, None, X_next.hex())
    pred = _check_inbound(rec, node_id, directory)
    if isinstance(pred, TraceFail):
        return pred
    sigs.append(_evidence_sp("endorsement", rec.inbound))
    return HopResult(
        node_id,
        rec.X_in.hex(),
        sigs,
        pred.node_id,
        False,
        pred.pk.hex(),
        X_next.hex(),
        rec.inbound.ts,
    )


def attest_last_mile(isp: IspRegistry, user_address: str, X_1: bytes) -> bool:
    return isp.attests(user_address, X_1)


def _node_origin(report, nid, snap, hop, directory, window, fail) -> TraceReport:
    """The chain is full and its first relay was endorsed by relay ``nid``.

    ``nid`` is the originator unless it holds a record forwarding the first
    pseudonym, in which case the chain is longer than policy allows. The
    endorsement is already checked against ``nid``'s roster key, so an honest
    relay cannot be named without its own signature.
    """
    X_1 = bytes.fromhex(hop.pseudonym)
    onward = trace_hop(nid, snap, X_1, hop.inbound_ts, directory, window)
    if not (isinstance(onward, TraceFail) and onward.reason is FailReason.NO_RECORD):
        return fail(TraceFail(nid, FailReason.CHAIN_LENGTH, "chain longer than policy"))
    entry = directory.by_id(nid)
    if entry is None:
        return fail(TraceFail(nid, FailReason.UNKNOWN_PREDECESSOR))
    report.user_address = entry.address
    report.events.append(f"TraceUser({entry.address})")
    report.outcome = Outcome.USER_IDENTIFIED
    return report


def full_trace(
    query: TraceQuery,
    snapshots: Mapping[str, LogView],
    directory: Directory,
    isp: IspRegistry | None,
    circuit_length: int | None = DEFAULT_CIRCUIT_LENGTH,
    tolerance: int = 0,
    window: int = DEFAULT_WINDOW,
) -> TraceReport:
    """Chain :func:`trace_stream` and :func:`trace_hop` back to a user.

    ``circuit_length`` fixes how many relays a valid chain must cross. Without
    it, a single corrupt relay could present itself as the entry and hand the
    trace straight to an address of its choosing.
    """
    report = TraceReport(query)

    def fail(f: TraceFail) -> TraceReport:
        report.fail_node, report.fail_reason, report.detail = f.node_id, f.reason, f.detail
        report.outcome = (
            Outcome.NON_COOPERATING
            if f.reason is FailReason.NON_COOPERATING
            else Outcome.TRACE_FAIL
        )
        return report

    snap = snapshots.get(query.exit_id)
    report.events.append(f"Lookup({query.exit_id})")
    if snap is None:
        return fail(TraceFail(query.exit_id, FailReason.NON_COOPERATING))
    hop = trace_stream(query, snap, directory, tolerance)
    if isinstance(hop, TraceFail):
        return fail(hop)
    report.events.append("CheckSignature")
    report.hops.append(hop)
    visited = [query.exit_id]
    while not hop.predecessor_is_user:
        report.events.append(f"RevealPredecessor({hop.predecessor})")
        nid = hop.predecessor
        if nid in visited:
            return fail(TraceFail(nid, FailReason.REPEATED_NODE))
        snap = snapshots.get(nid)
        if snap is None:
            return fail(TraceFail(nid, FailReason.NON_COOPERATING))
        if circuit_length is not None and len(visited) >= circuit_length:
            return _node_origin(report, nid, snap, hop, directory, window, fail)
        visited.append(nid)
        hop = trace_hop(nid, snap, bytes.fromhex(hop.pseudonym), hop.inbound_ts, directory, window)
        if isinstance(hop, TraceFail):
            return fail(hop)
        report.hops.append(hop)
    if circuit_length is not None and len(visited) != circuit_length:
        return fail(
            TraceFail(visited[-1], FailReason.CHAIN_LENGTH, f"chain of {len(visited)} relays")
        )
    report.events.append("LookupISP")
    X_1 = bytes.fromhex(hop.pseudonym)
    report.isp_attested = isp is not None and attest_last_mile(isp, hop.predecessor, X_1)
    report.user_address = hop.predecessor
    if not report.isp_attested:
        return fail(TraceFail(visited[-1], FailReason.ISP_UNATTESTED, hop.predecessor))
    report.events.append(f"TraceUser({hop.predecessor})")
    report.outcome = Outcome.USER_IDENTIFIED
    return report
