"""Nodes, per-node concurrency caps and the slot ledger."""
from __future__ import annotations

import threading
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from .errors import ConfigurationError, InputError, LedgerError
from .kinds import TaskKind


@dataclass(frozen=True)
class NodeSpec:
    id: str
    cpu_cores: int
    gpus: int
    memory_gb: float

    def __post_init__(self):
        if self.cpu_cores <= 0:
            raise ConfigurationError(f"node {self.id}: cpu_cores must be > 0")
        if self.gpus < 0:
            raise ConfigurationError(f"node {self.id}: gpus must be >= 0")
        if self.gpus > self.cpu_cores:
            raise ConfigurationError(f"node {self.id}: gpus ({self.gpus}) exceed cpu_cores ({self.cpu_cores})")
        if not self.memory_gb > 0:
            raise ConfigurationError(f"node {self.id}: memory_gb must be > 0")


@dataclass(frozen=True)
class ConcurrencyCaps:
    max_t1_per_node: int = 3
    max_t2_per_node: int = 2
    mem_per_t1_gb: float = 0.0
    mem_per_t2_gb: float = 0.0

    def cap(self, kind: TaskKind) -> int:
        return self.max_t1_per_node if kind is TaskKind.TILING else self.max_t2_per_node

    def validate_for(self, node: NodeSpec) -> None:
        if self.max_t1_per_node < 1 or self.max_t2_per_node < 1:
            raise ConfigurationError("caps must allow at least one task of each kind per node")
        if self.max_t2_per_node > node.gpus:
            raise ConfigurationError(
                f"node {node.id}: max_t2_per_node={self.max_t2_per_node} exceeds its {node.gpus} GPUs")
        if self.max_t1_per_node > node.cpu_cores:
            raise ConfigurationError(
                f"node {node.id}: max_t1_per_node={self.max_t1_per_node} exceeds its {node.cpu_cores} cores")
        need = self.max_t1_per_node * self.mem_per_t1_gb + self.max_t2_per_node * self.mem_per_t2_gb
        if need > node.memory_gb:
            raise ConfigurationError(f"node {node.id}: caps need {need} GB but node has {node.memory_gb} GB")


@dataclass(frozen=True)
class ClusterSpec:
    nodes: tuple[NodeSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        if not self.nodes:
            raise ConfigurationError("cluster has no nodes")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigurationError(f"duplicate node ids in {ids}")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def total_cpus(self) -> int:
        return sum(n.cpu_cores for n in self.nodes)

    @property
    def total_gpus(self) -> int:
        return sum(n.gpus for n in self.nodes)

    @property
    def homogeneous(self) -> bool:
        first = self.nodes[0]
        return all((n.cpu_cores, n.gpus, n.memory_gb) == (first.cpu_cores, first.gpus, first.memory_gb)
                   for n in self.nodes)

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise InputError(f"unknown node {node_id!r}")

    def to_json(self) -> dict:
        return {"nodes": [asdict(n) for n in self.nodes]}


def reference_cluster(n_nodes: int = 4) -> ClusterSpec:
    """Four nodes with 32 cores, 2 GPUs and 128 GB each."""
    return ClusterSpec(tuple(NodeSpec(f"node{i}", 32, 2, 128.0) for i in range(n_nodes)))


def load_cluster_config(data: Mapping) -> tuple[ClusterSpec, ConcurrencyCaps]:
    """Parse ``{nodes:[{id,cpu_cores,gpus,memory_gb}], caps:{...}}``."""
    try:
        nodes = tuple(
            NodeSpec(str(n["id"]), int(n["cpu_cores"]), int(n["gpus"]), float(n["memory_gb"]))
            for n in data["nodes"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"bad cluster config: {exc}") from exc
    cluster = ClusterSpec(nodes)
    caps = ConcurrencyCaps(**dict(data.get("caps") or {}))
    for node in cluster.nodes:
        caps.validate_for(node)
    return cluster, caps


def theoretical_max_utilization(cluster: ClusterSpec, caps: ConcurrencyCaps) -> tuple[float, float]:
    """Best achievable (cpu, gpu) busy fraction per node under the caps."""
    if not cluster.homogeneous:
        raise ConfigurationError("theoretical maximum utilization needs a homogeneous cluster")
    node = cluster.nodes[0]
    if node.gpus == 0:
        raise ConfigurationError("cluster has no GPUs")
    return caps.max_t1_per_node / node.cpu_cores, caps.max_t2_per_node / node.gpus


class SlotLedger:
    """Per-node busy-slot counts for both task kinds.

    All mutations go through one lock, so acquire/release are linearizable
    under concurrent callers. :meth:`acquire` blocks; :meth:`try_acquire`
    does not.
    """

    def __init__(self, cluster: ClusterSpec, caps: ConcurrencyCaps):
        self.cluster = cluster
        self.caps = caps
        self._order = cluster.node_ids
        self._busy = {nid: {TaskKind.TILING: 0, TaskKind.COUNTING: 0} for nid in self._order}
        self._cond = threading.Condition()
        self.grants = 0
        self.releases = 0

    def _check_node(self, node_id: str) -> None:
        if node_id not in self._busy:
            raise InputError(f"unknown node {node_id!r}")

    def busy(self, node_id: str, kind: TaskKind) -> int:
        self._check_node(node_id)
        return self._busy[node_id][kind]

    def total_busy(self, kind: TaskKind) -> int:
        return sum(b[kind] for b in self._busy.values())

    def _grant_locked(self, node_id: str, kind: TaskKind) -> bool:
        counts = self._busy[node_id]
        if counts[kind] >= self.caps.cap(kind):
            return False
        counts[kind] += 1
        self.grants += 1
        return True

    def try_acquire(self, node_id: str, kind: TaskKind) -> bool:
        kind = TaskKind.parse(kind)
        self._check_node(node_id)
        with self._cond:
            return self._grant_locked(node_id, kind)

    def try_acquire_any(self, kind: TaskKind, candidates: Sequence[str] | None = None) -> str | None:
        """Grant on the first candidate node (cluster order) with a free slot."""
        kind = TaskKind.parse(kind)
        with self._cond:
            for nid in candidates if candidates is not None else self._order:
                self._check_node(nid)
                if self._grant_locked(nid, kind):
                    return nid
        return None

    def acquire(self, kind: TaskKind, node_id: str | None = None, timeout: float | None = None) -> str:
        """Block until a slot is granted; returns the node it was granted on."""
        kind = TaskKind.parse(kind)
        if node_id is not None:
            self._check_node(node_id)
        candidates = self._order if node_id is None else (node_id,)
        with self._cond:
            while True:
                for nid in candidates:
                    if self._grant_locked(nid, kind):
                        return nid
                if not self._cond.wait(timeout):
                    raise TimeoutError(f"no {kind.value} slot became free within {timeout}s")

    def release(self, node_id: str, kind: TaskKind) -> None:
        kind = TaskKind.parse(kind)
        self._check_node(node_id)
        with self._cond:
            counts = self._busy[node_id]
            if counts[kind] <= 0:
                raise LedgerError(f"release of {kind.value} on {node_id} without a matching acquire")
            counts[kind] -= 1
            self.releases += 1
            self._cond.notify_all()
