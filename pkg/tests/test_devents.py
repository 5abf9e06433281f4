import hashlib
import math

import pytest

from earlyqnet.devents import Simulator, stream_key
from earlyqnet.netmodel import CONTROLLER, default_topology


def test_events_run_in_time_order():
    sim = Simulator()
    seen = []
    for t in (3.0, 1.0, 2.0):
        sim.schedule(t, lambda t=t: seen.append(t))
    sim.run_until()
    assert seen == [1.0, 2.0, 3.0]


def test_simultaneous_events_first_scheduled_first():
    sim = Simulator()
    seen = []
    for name in "abcde":
        sim.schedule(1.0, lambda n=name: seen.append(n))
    sim.run_until()
    assert seen == list("abcde")


def test_events_scheduled_during_run_keep_order():
    sim = Simulator()
    seen = []
    sim.schedule(1.0, lambda: sim.schedule(1.0, lambda: seen.append("child")))
    sim.schedule(1.0, lambda: seen.append("sibling"))
    sim.run_until()
    assert seen == ["sibling", "child"]


def test_scheduling_in_the_past_raises():
    sim = Simulator()
    sim.schedule(2.0, lambda: None)
    sim.run_until()
    with pytest.raises(ValueError):
        sim.schedule(1.0, lambda: None)
    with pytest.raises(ValueError):
        sim.schedule(math.nan, lambda: None)


def test_run_until_deadline_is_inclusive():
    sim = Simulator()
    seen = []
    for t in (1.0, 2.5, 3.0):
        sim.schedule(t, lambda t=t: seen.append(t))
    sim.run_until(2.5)
    assert seen == [1.0, 2.5]
    assert sim.now == 2.5
    assert sim.pending() == 1


def test_cancel_and_stop():
    sim = Simulator()
    seen = []
    ev = sim.schedule(1.0, lambda: seen.append(1))
    sim.schedule(2.0, lambda: (seen.append(2), sim.stop()))
    sim.schedule(3.0, lambda: seen.append(3))
    ev.cancel()
    sim.run_until()
    assert seen == [2]
    sim.run_until()
    assert seen == [2, 3]


def _random_workload(seed: int) -> str:
    sim = Simulator(seed, trace=True)

    def spawn(depth):
        if depth < 6:
            r = sim.rng("work", depth)
            for _ in range(int(r.integers(1, 3))):
                sim.schedule_in(float(r.exponential()), lambda: spawn(depth + 1), f"d{depth}")

    sim.schedule(0.0, lambda: spawn(0), "root")
    sim.run_until()
    return hashlib.sha256(repr(sim.trace).encode()).hexdigest()


def test_same_seed_same_trace():
    assert _random_workload(5) == _random_workload(5)
    assert _random_workload(5) != _random_workload(6)


def test_streams_independent_of_call_order():
    a, b = Simulator(9), Simulator(9)
    a.rng("x").random()
    xa = a.rng("y").random(3)
    xb = b.rng("y").random(3)
    assert (xa == xb).all()
    assert a.rng("y") is a.rng("y")
    assert stream_key("gen", 1, 2) == stream_key("gen", 1, 2) != stream_key("gen", 2, 1)


def test_classical_delays_on_default_topology():
    topo = default_topology()
    sim = Simulator(distance=topo.classical_distance)
    assert sim.classical_delay(CONTROLLER, 1) == pytest.approx(5e-4, rel=1e-12)
    assert sim.classical_delay(11, 1) == pytest.approx(5e-6, rel=1e-12)
    assert sim.classical_delay(7, 7) == 0.0
    with pytest.raises(ValueError, match="unknown classical endpoint"):
        sim.classical_delay(CONTROLLER, 99)


def test_send_classical_delivers_after_delay():
    topo = default_topology()
    sim = Simulator(distance=topo.classical_distance)
    got = []
    sim.send_classical(CONTROLLER, 3, "hello", got.append)
    sim.run_until()
    assert got[0].payload == "hello" and sim.now == pytest.approx(5e-4)
