import pytest

from hetflow.cluster import ConcurrencyCaps, SlotLedger, reference_cluster
from hetflow.engine import Acquire, Poll, SimBackend, ThreadBackend, Timeout, make_backend
from hetflow.kinds import T1, T2


def ledger(caps=(3, 2), n=4):
    return SlotLedger(reference_cluster(n), ConcurrencyCaps(*caps))


def test_timeouts_advance_clock():
    sim = SimBackend(ledger())
    seen = []

    def proc(name, delays):
        for d in delays:
            yield Timeout(d)
            seen.append((sim.now(), name))

    sim.spawn(proc("a", [1, 2]))
    sim.spawn(proc("b", [1.5]))
    assert sim.run() == 3
    assert seen == [(1, "a"), (1.5, "b"), (3, "a")]


def test_acquire_fifo_and_lowest_node():
    sim = SimBackend(ledger(caps=(1, 1), n=2))
    log = []

    def job(name, hold):
        node = yield Acquire(T1)
        log.append((sim.now(), name, node))
        yield Timeout(hold)
        sim.release(node, T1)

    for i, hold in enumerate([5, 3, 1, 1]):
        sim.spawn(job(f"j{i}", hold))
    sim.run()
    assert log == [(0, "j0", "node0"), (0, "j1", "node1"), (3, "j2", "node1"), (4, "j3", "node1")]


def test_simultaneous_releases_served_lowest_index_first():
    sim = SimBackend(ledger(caps=(1, 1), n=2))
    log = []

    def holder(node, hold):
        got = yield Acquire(T1, node)
        yield Timeout(hold)
        sim.release(got, T1)

    def waiter():
        yield Timeout(0.5)
        node = yield Acquire(T1)
        log.append((sim.now(), node))

    sim.spawn(holder("node1", 2))  # node1 frees first in event order
    sim.spawn(holder("node0", 2))
    sim.spawn(waiter())
    sim.run()
    assert log == [(2, "node0")]


def test_pinned_acquire_waits_for_its_node():
    sim = SimBackend(ledger(caps=(1, 1), n=2))
    log = []

    def first():
        node = yield Acquire(T2, "node0")
        yield Timeout(4)
        sim.release(node, T2)

    def second():
        node = yield Acquire(T2, "node0")
        log.append((sim.now(), node))
        sim.release(node, T2)

    sim.spawn(first())
    sim.spawn(second())
    sim.run()
    assert log == [(4, "node0")]


def test_deadlock_detected():
    sim = SimBackend(ledger(caps=(1, 1), n=1))

    def hog():
        yield Acquire(T1)

    sim.spawn(hog())
    sim.spawn(hog())
    with pytest.raises(RuntimeError, match="deadlocked"):
        sim.run()


def test_bad_command():
    sim = SimBackend(ledger())

    def bad():
        yield "nope"

    sim.spawn(bad())
    with pytest.raises(TypeError):
        sim.run()


def test_thread_backend_runs_and_scales_time():
    led = ledger(caps=(1, 1), n=1)
    tb = ThreadBackend(led, time_scale=1e-3)
    out = []

    def job():
        node = yield Acquire(T1)
        yield Timeout(20)  # 20 ms wall
        yield Poll(0.001)
        out.append(tb.now())
        tb.release(node, T1)

    tb.spawn(job())
    tb.spawn(job())
    tb.run()
    assert len(out) == 2 and max(out) >= 40
    assert led.busy("node0", T1) == 0


def test_thread_backend_surfaces_errors():
    tb = ThreadBackend(ledger())

    def bad():
        yield Timeout(1)
        raise ValueError("inside")

    tb.spawn(bad())
    with pytest.raises(ValueError, match="inside"):
        tb.run()


def test_make_backend():
    assert make_backend("sim", ledger()).name == "sim"
    assert make_backend("realtime", ledger()).name == "realtime"
    with pytest.raises(ValueError):
        make_backend("gpu", ledger())
