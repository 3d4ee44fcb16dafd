"""Accountable onion routing: pseudonym and endorsement signatures, evidence
logs, exit whitelisting and verifiable backward tracing, over a
deterministic network simulator."""

from backref.evidence import (
    ExitEvidenceRecord,
    LogStore,
    LogView,
    RelayEvidenceRecord,
    load_export,
)
from backref.pairing_suite import BLS12_381, BlsKeyPair, keygen, sign, verify
from backref.pseudonym import (
    SignedPseudonym,
    StreamRequest,
    Verdict,
    endorse_pseudonym,
    sign_pseudonym,
    sign_stream,
    verify_endorsement,
    verify_linkability,
    verify_stream,
)
from backref.scenario import RunResult, Scenario, load_bundled, load_scenario, run_scenario
from backref.simnet import Directory, IspRegistry, SimNet
from backref.tracer import FailReason, Outcome, TraceQuery, TraceReport, full_trace

__version__ = "0.1.0"

__all__ = [
    "BLS12_381",
    "BlsKeyPair",
    "Directory",
    "ExitEvidenceRecord",
    "FailReason",
    "IspRegistry",
    "LogStore",
    "LogView",
    "Outcome",
    "RelayEvidenceRecord",
    "RunResult",
    "Scenario",
    "SignedPseudonym",
    "SimNet",
    "StreamRequest",
    "TraceQuery",
    "TraceReport",
    "Verdict",
    "endorse_pseudonym",
    "full_trace",
    "keygen",
    "load_bundled",
    "load_export",
    "load_scenario",
    "run_scenario",
    "sign",
    "sign_pseudonym",
    "sign_stream",
    "verify",
    "verify_endorsement",
    "verify_linkability",
    "verify_stream",
]
