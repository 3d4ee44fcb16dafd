"""Command line front end: ``backref run|trace|bench|export-logs``.

Each command is a thin shell over library calls; all inputs and outputs are
files so a trace can be run on a different machine from the simulation.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

from backref import games
from backref import onion as oc
from backref.evidence import load_export, load_text
from backref.pairing_suite import G1_BYTES, keygen, sign, verify
from backref.pseudonym import StreamRequest, new_pseudonym, sign_stream
from backref.scenario import (
    RunResult,
    RunSummary,
    ScenarioError,
    bundled_scenarios,
    load_bundled,
    load_scenario,
    run_scenario,
)
from backref.simnet import Directory, IspRegistry
from backref.tracer import TraceQuery, full_trace

PAPER_SIGNATURE_BYTES = 32  # 256-bit group assumption
TS_BYTES = 4


@dataclass
class BenchResult:
    iterations: int
    sign_ms: dict[str, float]
    verify_ms: dict[str, float]
    signature_bytes: int
    overhead_bytes: int  # measured on an encoded stream cell
    paper_overhead_bytes: int

    @property
    def sign_faster(self) -> bool:
        return self.sign_ms["mean"] < self.verify_ms["mean"]

    def to_dict(self) -> dict:
        return {**asdict(self), "sign_faster_than_verify": self.sign_faster}


def _stats(xs: list[float]) -> dict[str, float]:
    xs = sorted(xs)
    return {
        "mean": statistics.fmean(xs),
        "median": statistics.median(xs),
        "p95": xs[min(len(xs) - 1, int(0.95 * len(xs)))],
        "min": xs[0],
        "max": xs[-1],
    }


def measure_overhead() -> int:
    """Byte difference between a signed and an unsigned stream cell."""
    req = StreamRequest(b"example.com", 80, 1_700_000_000)
    p = new_pseudonym(b"bench-overhead", 3)
    plain = oc.StreamCell(1, req.address, req.port, b"payload")
    signed = oc.StreamCell(1, req.address, req.port, b"payload", sign_stream(p.x, req), req.ts)
    cell = lambda sc: oc.Cell(b"\x01" * oc.CID_BYTES, oc.CellKind.RELAY, oc.encode_relay(oc.RelayTag.BEGIN, sc))
    return len(cell(signed).encode()) - len(cell(plain).encode())


def bench(iterations: int = 1000, seed: bytes = b"bench") -> BenchResult:
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    kp = keygen(seed)
    t_sign, t_verify = [], []
    for i in range(iterations):
        # distinct messages so no cached hash or verdict is reused
        msg = b"bench-" + i.to_bytes(4, "big") + seed
        t0 = time.perf_counter()
        sigma = sign(kp.sk, msg)
        t1 = time.perf_counter()
        ok = verify(kp.pk, msg, sigma)
        t2 = time.perf_counter()
        if not ok:
            raise RuntimeError("benchmark signature failed to verify")
        t_sign.append((t1 - t0) * 1e3)
        t_verify.append((t2 - t1) * 1e3)
    return BenchResult(
        iterations,
        _stats(t_sign),
        _stats(t_verify),
        G1_BYTES,
        measure_overhead(),
        PAPER_SIGNATURE_BYTES + TS_BYTES,
    )


# -- run / export ----------------------------------------------------------


def _load(arg: str):
    if Path(arg).exists():
        return load_scenario(arg)
    if arg in bundled_scenarios():
        return load_bundled(arg)
    raise ScenarioError(f"{arg}: no such file or bundled scenario (have {sorted(bundled_scenarios())})")


def write_outputs(result: RunResult, out: Path, text: bool = False, coarsen: int = 0) -> dict[str, Path]:
    """Per-node log exports, ISP registry, roster, destination logs and the
    transcript."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    (out / "servers").mkdir(exist_ok=True)
    files = {}
    for nid, node in sorted(result.nodes.items()):
        if text:
            p = out / "logs" / f"{nid}.txt"
            p.write_text(node.log.export_text(coarsen))
        else:
            p = out / "logs" / f"{nid}.bkrf"
            p.write_bytes(node.log.export())
        files[nid] = p
    (out / "isp.txt").write_text(result.isp.export())
    (out / "directory.json").write_text(result.directory.export())
    for host, server in sorted(result.net.destinations.items()):
        (out / "servers" / f"{host}.jsonl").write_text(server.export())
    (out / "transcript.txt").write_text("\n".join(result.net.transcript) + "\n")
    return files


def run_with_games(scn, seed=None) -> tuple[RunResult, RunSummary]:
    result = run_scenario(scn, seed)
    verdicts = {}
    if scn.game:
        verdicts[scn.game] = games.evaluate(scn.game, result).verdict
    return result, result.summary(verdicts)


def cmd_run(args) -> int:
    scn = _load(args.scenario)
    result, summary = run_with_games(scn, args.seed)
    write_outputs(result, Path(args.out))
    text = json.dumps(summary.to_dict(), indent=2, sort_keys=True)
    (Path(args.out) / "summary.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_export_logs(args) -> int:
    scn = _load(args.scenario)
    result = run_scenario(scn, args.seed)
    files = write_outputs(result, Path(args.out), text=args.text, coarsen=args.coarsen)
    for nid, p in files.items():
        print(f"{nid}\t{len(result.nodes[nid].log)}\t{p}")
    return 0


# -- trace -----------------------------------------------------------------


def load_logs(paths: list[str]) -> dict:
    snaps = {}
    for arg in paths:
        p = Path(arg)
        files = sorted(p.iterdir()) if p.is_dir() else [p]
        for f in files:
            if f.suffix == ".txt":
                view = load_text(f.read_text())
            elif f.suffix == ".bkrf":
                view = load_export(f.read_bytes())
            else:
                continue
            snaps[view.node_id] = view
    return snaps


def cmd_trace(args) -> int:
    try:
        snaps = load_logs(args.logs)
        directory = Directory.load(Path(args.directory).read_text())
        isp = IspRegistry.load(Path(args.isp).read_text()) if args.isp else IspRegistry()
    except (OSError, ValueError) as exc:
        print(f"backref trace: {exc}", file=sys.stderr)
        return 1
    for nid in args.withhold:
        snaps.pop(nid, None)
    query = TraceQuery(args.exit, args.host.encode(), args.port, args.ts)
    rep = full_trace(
        query,
        snaps,
        directory,
        isp,
        circuit_length=args.circuit_length,
        tolerance=args.tolerance,
        window=args.window,
    )
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return rep.exit_code


def cmd_bench(args) -> int:
    res = bench(args.iterations)
    text = json.dumps(res.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="backref", description="Accountable onion routing simulator.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a scenario and write all exports")
    r.add_argument("scenario", help="YAML file or bundled scenario name")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--out", default="out", help="output directory (default: out)")
    r.set_defaults(fn=cmd_run)

    e = sub.add_parser("export-logs", help="run a scenario and write only node logs")
    e.add_argument("scenario")
    e.add_argument("--seed", type=int)
    e.add_argument("--out", default="out")
    e.add_argument("--text", action="store_true", help="hex text export instead of binary")
    e.add_argument("--coarsen", type=int, default=0, help="round write times down to N seconds (text only)")
    e.set_defaults(fn=cmd_export_logs)

    t = sub.add_parser("trace", help="trace a stream back from exit-node evidence")
    t.add_argument("--exit", required=True, help="exit node id")
    t.add_argument("--host", required=True)
    t.add_argument("--port", type=int, required=True)
    t.add_argument("--ts", type=int, required=True, help="request time from the server log")
    t.add_argument("--logs", nargs="+", required=True, help="export files or directories")
    t.add_argument("--directory", required=True, help="roster JSON")
    t.add_argument("--isp", help="ISP registry export")
    t.add_argument("--withhold", nargs="*", default=[], help="treat these nodes as non-cooperating")
    t.add_argument("--tolerance", type=int, default=0, help="accept +-N seconds on the request time")
    t.add_argument("--circuit-length", type=int, default=3)
    t.add_argument("--window", type=int, default=300)
    t.add_argument("--out", help="write the report here")
    t.set_defaults(fn=cmd_trace)

    b = sub.add_parser("bench", help="time sign/verify and report per-cell overhead")
    b.add_argument("--iterations", type=int, default=1000)
    b.add_argument("--out")
    b.set_defaults(fn=cmd_bench)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ScenarioError as exc:
        print(f"backref: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
