import pytest

from backref.simnet import (
    DestinationServer,
    Directory,
    DuplicateRegistration,
    IspRegistry,
    Scheduler,
    SimNet,
)
from backref.scenario import load_bundled, run_scenario


def test_scheduler_orders_by_time_then_insertion():
    s = Scheduler(0)
    seen = []
    s.at(5, seen.append, "b")
    s.at(1, seen.append, "a")
    s.at(5, seen.append, "c")
    s.after(0, seen.append, "first")
    s.run()
    assert seen == ["first", "a", "b", "c"]
    assert s.now_ms == 5


def test_scheduler_until():
    s = Scheduler(0)
    seen = []
    s.at(10, seen.append, 1)
    s.at(20, seen.append, 2)
    s.run(until_ms=15)
    assert seen == [1] and s.now_ms == 15 and s.pending() == 1


def test_scheduler_rng_seeded():
    assert Scheduler(3).rand_bytes(16) == Scheduler(3).rand_bytes(16)
    assert Scheduler(3).rand_bytes(16) != Scheduler(4).rand_bytes(16)


def test_directory_first_write_wins():
    d = Directory()
    d.register("a", "1.1.1.1", b"\x01" * 96)
    with pytest.raises(DuplicateRegistration):
        d.register("a", "2.2.2.2", b"\x02" * 96)
    with pytest.raises(DuplicateRegistration):
        d.register("b", "1.1.1.1", b"\x02" * 96)
    assert d.by_id("a").pk == b"\x01" * 96
    assert Directory.load(d.export()).roster() == d.roster()


def test_isp_forge_requires_compromise():
    isp = IspRegistry()
    isp.observe("u", b"X")
    with pytest.raises(PermissionError):
        isp.forge("v", b"X")
    isp.compromised = True
    isp.forge("v", b"X")
    assert isp.attests("v", b"X") and isp.attests("u", b"X")
    assert IspRegistry.load(isp.export()).entries() == isp.entries()


def test_destination_logs_and_echoes():
    srv = DestinationServer("example.com")
    assert srv.handle("10.0.0.1", 80, 17, b"hi", 18) == b"echo:hi"
    assert srv.log[0].ts == 17 and srv.log[0].source == "10.0.0.1"


def test_clock_is_epoch_plus_seconds():
    net = SimNet(0, epoch=1000)
    net.sched.at(2500, lambda: None)
    net.run()
    assert net.now() == 1002


def test_transcript_deterministic():
    a = run_scenario(load_bundled("honest-3hop"))
    b = run_scenario(load_bundled("honest-3hop"))
    assert a.net.transcript == b.net.transcript
    c = run_scenario(load_bundled("honest-3hop"), seed=999)
    assert c.net.transcript_hash() != a.net.transcript_hash()


def test_isp_sees_client_creates(honest):
    circ = honest.circuits["c1"]
    assert honest.isp.attests("192.168.100.200", circ.hops[0].X)
    assert len(honest.isp) == 1


def test_taps_only_carry_content_for_compromised_links():
    r = run_scenario(load_bundled("anonymity-swap"))
    bad = {"10.0.101.201", "10.0.102.202"}
    for ev in r.net.adversary.taps:
        assert (ev.content is not None) == (ev.src in bad or ev.dst in bad)
