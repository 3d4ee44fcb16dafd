import pytest

from backref.scenario import (
    ScenarioError,
    bundled_scenarios,
    load_bundled,
    parse_scenario,
    random_honest,
    run_scenario,
)

GOOD = """\
seed: 4
nodes:
  - {id: a, address: 10.0.0.1}
  - {id: b, address: 10.0.0.2}
  - {id: c, address: 10.0.0.3}
clients: [192.168.0.1]
destinations: [example.com]
circuits:
  - {id: c1, proxy: 192.168.0.1, path: [a, b, c]}
streams:
  - {circuit: c1, host: example.com, port: 80, data: hi, at: 10}
"""


def test_parse_and_dump_roundtrip():
    s = parse_scenario(GOOD, "good.yaml")
    assert s.name == "good" and s.seed == 4 and len(s.nodes) == 3
    assert parse_scenario(s.dump()) == s


@pytest.mark.parametrize(
    "patch,line,fragment",
    [
        (("  - {id: b, address: 10.0.0.2}", "  - {id: a, address: 10.0.0.2}"), 4, "duplicate node id"),
        (("path: [a, b, c]", "path: [a, b, zz]"), 9, "unknown node 'zz'"),
        (("port: 80", "port: 99999"), 11, "16 bits"),
        (("host: example.com", "host: other.com"), 11, "not a listed destination"),
        (("seed: 4", "seed: 4\nbogus: 1"), 2, "unknown field"),
    ],
)
def test_schema_errors_carry_line_numbers(patch, line, fragment):
    with pytest.raises(ScenarioError) as e:
        parse_scenario(GOOD.replace(*patch), "bad.yaml")
    msg = str(e.value)
    assert msg.startswith(f"bad.yaml:{line}:"), msg
    assert fragment in msg


def test_bundled_scenarios_parse():
    names = bundled_scenarios()
    assert {"honest-3hop", "whitelist-all", "two-circuit", "anonymity-swap"} <= set(names)
    for n in names:
        assert load_bundled(n).nodes


def test_honest_bundle_counts(honest):
    assert {n: len(x.log) for n, x in honest.nodes.items()} == {
        "relay-001": 1,
        "relay-002": 1,
        "relay-003": 1,
    }


def test_whitelist_all_bundle():
    r = run_scenario(load_bundled("whitelist-all"))
    assert len(r.nodes["relay-003"].log) == 0
    assert len(r.net.destinations["example.com"].log) == 1
    assert len(r.net.destinations["news.example.org"].log) == 1


def test_summary_reconciles_with_transcript(honest):
    s = honest.summary()
    delivered = [ln for ln in honest.net.transcript if " cell " in ln]
    assert sum(s.cells.values()) == len(delivered)
    assert s.streams_delivered == 1 and s.records == {"relay-001": 1, "relay-002": 1, "relay-003": 1}


def test_random_honest_shape():
    s = random_honest(17)
    assert all(len(c.path) == 3 for c in s.circuits)
    per_circuit = {}
    for st in s.streams:
        per_circuit[st.circuit] = per_circuit.get(st.circuit, 0) + 1
    assert all(1 <= n <= 5 for n in per_circuit.values())
    assert random_honest(17) == s
