from dataclasses import replace

from backref.evidence import LogView
from backref.scenario import CircuitSpec, NodeSpec, Scenario, StreamSpec, node_address, run_scenario
from backref.simnet import IspRegistry
from backref.tracer import (
    EXIT_CODES,
    FailReason,
    Outcome,
    TraceQuery,
    TraceReport,
    full_trace,
    trace_hop,
    trace_stream,
)

USER = "192.168.100.200"


def query_of(result, i=0):
    return result.queries()[i][0]


def test_honest_trace(honest):
    q = query_of(honest)
    rep = honest.trace(q)
    assert rep.outcome is Outcome.USER_IDENTIFIED and rep.exit_code == 0
    assert rep.user_address == USER and rep.isp_attested
    assert rep.events == [
        "Lookup(relay-003)",
        "CheckSignature",
        "RevealPredecessor(relay-002)",
        "RevealPredecessor(relay-001)",
        "LookupISP",
        f"TraceUser({USER})",
    ]
    assert [h.node_id for h in rep.hops] == ["relay-003", "relay-002", "relay-001"]
    assert rep.verify_signatures()


def test_report_json_roundtrip(honest):
    rep = honest.trace(query_of(honest))
    back = TraceReport.from_json(rep.to_json())
    assert back.to_json() == rep.to_json()
    assert back.verify_signatures()


def test_tampered_report_fails_verification(honest):
    rep = honest.trace(query_of(honest))
    h = rep.hops[1]
    sig = h.signatures[0]
    bad_sigma = ("0" if sig.sigma[0] != "0" else "1") + sig.sigma[1:]
    rep.hops[1] = replace(h, signatures=[replace(sig, sigma=bad_sigma)] + h.signatures[1:])
    assert not rep.verify_signatures()


def test_report_pk_binding_checked(honest):
    rep = honest.trace(query_of(honest))
    h = rep.hops[0]
    rep.hops[0] = replace(h, predecessor_pk=honest.nodes["relay-001"].pk.hex())
    assert not rep.verify_signatures()


def test_exit_withheld(honest):
    rep = honest.trace(query_of(honest), snapshots=honest.snapshots(exclude=("relay-003",)))
    assert rep.outcome is Outcome.NON_COOPERATING and rep.exit_code == 3


def test_middle_withheld(honest):
    rep = honest.trace(query_of(honest), snapshots=honest.snapshots(exclude=("relay-002",)))
    assert rep.outcome is Outcome.NON_COOPERATING
    assert rep.fail_node == "relay-002"
    assert rep.events[:3] == ["Lookup(relay-003)", "CheckSignature", "RevealPredecessor(relay-002)"]


def test_timestamp_tolerance(honest):
    q = query_of(honest)
    off = replace(q, ts=q.ts + 2)
    rep = honest.trace(off)
    assert rep.outcome is Outcome.TRACE_FAIL and rep.fail_reason is FailReason.TIMESTAMP_MISMATCH
    assert honest.trace(off, tolerance=1).outcome is Outcome.TRACE_FAIL
    assert honest.trace(off, tolerance=2).outcome is Outcome.USER_IDENTIFIED


def test_unknown_destination(honest):
    q = TraceQuery("relay-003", b"elsewhere.net", 80, query_of(honest).ts)
    rep = honest.trace(q)
    assert rep.fail_reason is FailReason.NO_RECORD and rep.exit_code == EXIT_CODES[Outcome.TRACE_FAIL]


def test_isp_unattested(honest):
    rep = honest.trace(query_of(honest), isp=IspRegistry())
    assert rep.outcome is Outcome.TRACE_FAIL and rep.fail_reason is FailReason.ISP_UNATTESTED


def test_splice_is_bad_signature(two_circuit):
    snaps = two_circuit.snapshots()
    victim = two_circuit.circuits["victim"]
    innocent = two_circuit.circuits["innocent"]
    # graft the innocent circuit's inbound half onto the victim's middle record
    view = snaps["relay-002"]
    v = next(r for r in view if r.X_in == victim.hops[1].X)
    i = next(r for r in view if r.X_in == innocent.hops[1].X)
    spliced = replace(v, X_in=i.X_in, inbound=i.inbound)
    snaps["relay-002"] = LogView("relay-002", [spliced])
    q = next(q for q, o in two_circuit.queries() if o == USER)
    rep = two_circuit.trace(q, snapshots=snaps)
    assert rep.outcome is Outcome.TRACE_FAIL and rep.fail_reason is FailReason.BAD_SIGNATURE
    assert rep.exit_code == 2


def test_single_steps(honest):
    q = query_of(honest)
    snaps = honest.snapshots()
    h3 = trace_stream(q, snaps["relay-003"], honest.directory)
    assert h3.predecessor == "relay-002"
    X3 = bytes.fromhex(h3.pseudonym)
    h2 = trace_hop("relay-002", snaps["relay-002"], X3, h3.inbound_ts, honest.directory)
    assert h2.predecessor == "relay-001"
    h1 = trace_hop("relay-001", snaps["relay-001"], bytes.fromhex(h2.pseudonym), h2.inbound_ts, honest.directory)
    assert h1.predecessor_is_user and h1.predecessor == USER
    miss = trace_hop("relay-001", snaps["relay-001"], X3, None, honest.directory)
    assert miss.reason is FailReason.NO_RECORD


def test_linkage_window(honest):
    q = query_of(honest)
    snaps = honest.snapshots()
    h3 = trace_stream(q, snaps["relay-003"], honest.directory)
    far = trace_hop("relay-002", snaps["relay-002"], bytes.fromhex(h3.pseudonym), h3.inbound_ts + 301, honest.directory)
    assert far.reason is FailReason.TIMESTAMP_MISMATCH


def node_origin_scenario():
    s = Scenario(seed=3, name="node-origin")
    s.nodes = [NodeSpec(f"relay-{i:03d}", node_address(i)) for i in range(4)]
    s.destinations = ["example.com"]
    s.circuits = [CircuitSpec("c", "relay-000", ["relay-001", "relay-002", "relay-003"], 0)]
    s.streams = [StreamSpec("c", "example.com", 80, b"x", 1000)]
    return s


def test_node_originated_circuit_names_the_relay():
    r = run_scenario(node_origin_scenario())
    rep = r.trace(query_of(r))
    assert rep.outcome is Outcome.USER_IDENTIFIED
    assert rep.user_address == node_address(0)
    assert not rep.isp_attested and "LookupISP" not in rep.events
    assert rep.events[-2:] == ["RevealPredecessor(relay-000)", f"TraceUser({node_address(0)})"]
    assert rep.verify_signatures()


def test_node_originator_withholding_is_non_cooperating():
    r = run_scenario(node_origin_scenario())
    snaps = r.snapshots()
    del snaps["relay-000"]
    rep = full_trace(query_of(r), snaps, r.directory, r.isp)
    assert rep.outcome is Outcome.NON_COOPERATING and rep.fail_node == "relay-000"


def test_circuit_length_policy(honest):
    q = query_of(honest)
    assert honest.trace(q, circuit_length=2).fail_reason is FailReason.CHAIN_LENGTH
    assert honest.trace(q, circuit_length=None).outcome is Outcome.USER_IDENTIFIED


def test_full_trace_without_isp(honest):
    rep = full_trace(query_of(honest), honest.snapshots(), honest.directory, None)
    assert rep.outcome is Outcome.TRACE_FAIL and rep.fail_reason is FailReason.ISP_UNATTESTED
