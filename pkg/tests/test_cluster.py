import random
import threading

import pytest

from hetflow.cluster import (ClusterSpec, ConcurrencyCaps, NodeSpec, SlotLedger, load_cluster_config,
                             reference_cluster, theoretical_max_utilization)
from hetflow.errors import ConfigurationError, InputError, LedgerError
from hetflow.kinds import T1, T2


@pytest.fixture
def ledger():
    return SlotLedger(reference_cluster(), ConcurrencyCaps(3, 2))


def test_reference_cluster_totals():
    cl = reference_cluster()
    assert cl.n == 4 and cl.total_cpus == 128 and cl.total_gpus == 8
    assert cl.homogeneous


def test_node_invariants():
    with pytest.raises(ConfigurationError):
        NodeSpec("a", 2, 3, 10)
    with pytest.raises(ConfigurationError):
        NodeSpec("a", 0, 0, 10)
    with pytest.raises(ConfigurationError):
        ClusterSpec((NodeSpec("a", 2, 1, 1), NodeSpec("a", 2, 1, 1)))


def test_caps_validation():
    node = NodeSpec("n", 32, 2, 128)
    with pytest.raises(ConfigurationError):
        ConcurrencyCaps(3, 3).validate_for(node)
    with pytest.raises(ConfigurationError):
        ConcurrencyCaps(3, 2, mem_per_t1_gb=40, mem_per_t2_gb=10).validate_for(node)
    ConcurrencyCaps(3, 2, mem_per_t1_gb=30, mem_per_t2_gb=10).validate_for(node)


def test_t1_cap(ledger):
    assert [ledger.try_acquire("node0", T1) for _ in range(4)] == [True, True, True, False]


def test_t2_cap(ledger):
    assert [ledger.try_acquire("node0", T2) for _ in range(3)] == [True, True, False]


def test_reuse_after_release(ledger):
    for _ in range(3):
        ledger.try_acquire("node0", T1)
    assert not ledger.try_acquire("node0", T1)
    ledger.release("node0", T1)
    assert ledger.try_acquire("node0", T1)


def test_release_underflow(ledger):
    ledger.try_acquire("node0", T1)
    ledger.release("node0", T1)
    assert ledger.busy("node0", T1) == 0
    with pytest.raises(LedgerError):
        ledger.release("node0", T1)


def test_unknown_node(ledger):
    with pytest.raises(InputError):
        ledger.try_acquire("nope", T1)


def test_trace_replay_oracle(ledger):
    rng = random.Random(4)
    held = {(n, k): 0 for n in ledger.cluster.node_ids for k in (T1, T2)}
    for _ in range(2000):
        node, kind = rng.choice(list(held))
        if rng.random() < 0.55:
            granted = ledger.try_acquire(node, kind)
            assert granted == (held[(node, kind)] < ledger.caps.cap(kind))
            held[(node, kind)] += granted
        elif held[(node, kind)]:
            ledger.release(node, kind)
            held[(node, kind)] -= 1
        for (n, k), count in held.items():
            assert ledger.busy(n, k) == count
    assert ledger.grants - ledger.releases == sum(held.values())


def test_acquire_any_prefers_lowest_index(ledger):
    got = [ledger.try_acquire_any(T1) for _ in range(13)]
    assert got == ["node0"] * 3 + ["node1"] * 3 + ["node2"] * 3 + ["node3"] * 3 + [None]


def test_concurrent_acquire_never_exceeds_cap(ledger):
    peak = {"v": 0}
    lock = threading.Lock()

    def worker():
        for _ in range(200):
            node = ledger.acquire(T2, "node1", timeout=5)
            with lock:
                peak["v"] = max(peak["v"], ledger.busy(node, T2))
            ledger.release(node, T2)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak["v"] <= 2
    assert ledger.busy("node1", T2) == 0


def test_theoretical_max():
    cl = reference_cluster()
    assert theoretical_max_utilization(cl, ConcurrencyCaps(3, 2)) == (0.09375, 1.0)
    assert theoretical_max_utilization(cl, ConcurrencyCaps(32, 2)) == (1.0, 1.0)
    assert theoretical_max_utilization(cl, ConcurrencyCaps(3, 1))[1] == 0.5


def test_theoretical_max_heterogeneous():
    cl = ClusterSpec((NodeSpec("a", 32, 2, 128), NodeSpec("b", 16, 2, 128)))
    with pytest.raises(ConfigurationError):
        theoretical_max_utilization(cl, ConcurrencyCaps(3, 2))


def test_load_cluster_config():
    cl, caps = load_cluster_config({
        "nodes": [{"id": "a", "cpu_cores": 8, "gpus": 1, "memory_gb": 16}],
        "caps": {"max_t1_per_node": 2, "max_t2_per_node": 1},
    })
    assert cl.node_ids == ["a"] and caps.max_t1_per_node == 2
    with pytest.raises(ConfigurationError):
        load_cluster_config({"nodes": [{"id": "a", "cpu_cores": 8, "gpus": 1, "memory_gb": 16}]})
    with pytest.raises(ConfigurationError):
        load_cluster_config({"nodes": [{"id": "a"}]})
