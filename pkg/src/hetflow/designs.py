"""The three workflow architectures and the balanced partitioner.

* Design 1: one pipeline per image (tiling stage, then counting stage). The
  tiling task goes to the first node with a free CPU slot; the counting task
  is pinned to that same node, even if GPUs elsewhere are idle.
* Design 2: long-running workers. Tiling workers on every node pull images
  from one global queue and push tile descriptors to their own node's queue;
  counting workers drain only their node's queue.
* Design 2.A: like Design 2, but images are bound to nodes up front by a
  balanced partition and each node pulls from its own image queue.

Every design runs on either backend (see :mod:`hetflow.engine`) and returns a
:class:`~hetflow.trace.Trace` that has passed :func:`~hetflow.audit.audit_trace`.
"""
from __future__ import annotations

import heapq
import json
import threading
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .audit import audit_trace
from .cluster import ClusterSpec, ConcurrencyCaps, SlotLedger, load_cluster_config, reference_cluster
from .engine import Acquire, Timeout, make_backend
from .errors import ConfigurationError
from .kinds import T1, T2, Design, TaskKind
from .perfmodel import ExecTimeModel, ModelRegistry, default_registry, predict_mean, sample_duration
from .protocol import TaskQueue, receiver
from .trace import Interval, RunManifest, TaskRecord, Trace
from .workload import ImageSpec, workload_digest


@dataclass(frozen=True)
class OverheadConfig:
    """Injected overhead constants in model seconds.

    ``None`` picks the design default: setup 30 s for Design 2 only,
    distributing 7.5 s for Design 2.A only. On the realtime backend the
    defaults are zero and the phases are measured instead.
    """

    discovery_per_image_s: float | None = None
    setup_s: float | None = None
    distributing_s: float | None = None
    client_submission_s: float | None = None
    teardown_s: float | None = None
    worker_bootstrap_s: float | None = None

    def resolve(self, design: Design, backend: str) -> dict[str, float]:
        sim = backend == "sim"
        defaults = {
            "discovery_per_image_s": 0.001 if sim else 0.0,
            "setup_s": 30.0 if (sim and design is Design.D2) else 0.0,
            "distributing_s": 7.5 if (sim and design is Design.D2A) else 0.0,
            "client_submission_s": 0.0,
            "teardown_s": 0.0,
            "worker_bootstrap_s": 0.0,
        }
        out = {}
        for name, default in defaults.items():
            value = getattr(self, name)
            value = default if value is None else float(value)
            if value < 0:
                raise ConfigurationError(f"overhead {name} must be >= 0")
            out[name] = value
        return out


@dataclass(frozen=True)
class DesignConfig:
    design: Design = Design.D1
    caps: ConcurrencyCaps = field(default_factory=ConcurrencyCaps)
    poll_interval_s: float = 1.0
    seed: int = 0
    # node id -> factor, or node id -> {"t1": factor, "t2": factor}; >1 is faster
    speed_multipliers: Mapping = field(default_factory=dict)
    overheads: OverheadConfig = field(default_factory=OverheadConfig)
    partition_strategy: str = "lpt"
    time_scale: float = 1e-3
    audit: bool = True

    def __post_init__(self):
        object.__setattr__(self, "design", Design.parse(self.design))
        if not self.poll_interval_s > 0:
            raise ConfigurationError("poll_interval_s must be positive")
        if self.partition_strategy not in PARTITION_STRATEGIES:
            raise ConfigurationError(f"unknown partition strategy {self.partition_strategy!r}")

    def speed(self, node_id: str, kind: TaskKind) -> float:
        m = self.speed_multipliers.get(node_id, 1.0)
        if isinstance(m, Mapping):
            m = m.get(kind.value, 1.0)
        m = float(m)
        if not m > 0:
            raise ConfigurationError(f"speed multiplier for {node_id} must be positive")
        return m

    def to_json(self) -> dict:
        return {
            "design": self.design.value,
            "caps": asdict(self.caps),
            "poll_interval_s": self.poll_interval_s,
            "seed": self.seed,
            "speed_multipliers": {k: (dict(v) if isinstance(v, Mapping) else v)
                                  for k, v in self.speed_multipliers.items()},
            "overheads": {k: v for k, v in asdict(self.overheads).items() if v is not None},
            "partition_strategy": self.partition_strategy,
            "time_scale": self.time_scale,
        }


# --- partitioning ----------------------------------------------------------

def _partition_lpt(workload, n_nodes, model):
    """Longest processing time first: biggest predicted job to the least loaded node."""
    order = sorted(range(len(workload)),
                   key=lambda i: (-predict_mean(model, workload[i].size_mb), i))
    heap = [(0.0, k) for k in range(n_nodes)]
    owner = {}
    for i in order:
        load, k = heapq.heappop(heap)
        owner[i] = k
        heapq.heappush(heap, (load + predict_mean(model, workload[i].size_mb), k))
    parts: list[list[ImageSpec]] = [[] for _ in range(n_nodes)]
    for i in range(len(workload)):  # each node keeps workload order
        parts[owner[i]].append(workload[i])
    return parts


def _partition_stratified(workload, n_nodes, model):
    """Sort by size and deal in snake order so every node gets a similar size mix."""
    order = sorted(range(len(workload)), key=lambda i: (-workload[i].size_mb, i))
    owner = {}
    for rank, i in enumerate(order):
        rnd, pos = divmod(rank, n_nodes)
        owner[i] = pos if rnd % 2 == 0 else n_nodes - 1 - pos
    parts: list[list[ImageSpec]] = [[] for _ in range(n_nodes)]
    for i in range(len(workload)):
        parts[owner[i]].append(workload[i])
    return parts


PARTITION_STRATEGIES = {"lpt": _partition_lpt, "stratified": _partition_stratified}


def partition_balanced(workload: Sequence[ImageSpec], n_nodes: int, model: ExecTimeModel,
                       strategy: str = "lpt") -> list[list[ImageSpec]]:
    if n_nodes < 1:
        raise ConfigurationError(f"n_nodes must be >= 1, got {n_nodes}")
    try:
        fn = PARTITION_STRATEGIES[strategy]
    except KeyError:
        raise ConfigurationError(f"unknown partition strategy {strategy!r}") from None
    return fn(list(workload), n_nodes, model)


def partition_loads(parts, model: ExecTimeModel) -> list[float]:
    return [sum(predict_mean(model, img.size_mb) for img in p) for p in parts]


def combined_model(models: ModelRegistry, design: Design) -> ExecTimeModel:
    """Tiling plus counting time for one image, used to balance node payloads."""
    a, b = models.get_model(design, T1), models.get_model(design, T2)
    return ExecTimeModel(a.alpha + b.alpha, a.beta + b.beta, 0.0, design)


# --- shared run machinery --------------------------------------------------

def _encode(img: ImageSpec) -> bytes:
    return json.dumps({"image_id": img.id, "size_mb": img.size_mb}).encode()


def _decode(payload: bytes) -> ImageSpec:
    d = json.loads(payload)
    return ImageSpec(d["image_id"], float(d["size_mb"]))


class _Run:
    """State of one design execution: backend, ledger, records, intervals."""

    def __init__(self, design: Design, cluster: ClusterSpec, workload, models: ModelRegistry,
                 backend: str, config: DesignConfig):
        if not workload:
            raise ConfigurationError("workload is empty")
        for node in cluster.nodes:
            config.caps.validate_for(node)
        self.design = design
        self.cluster = cluster
        self.workload = list(workload)
        self.config = config
        self.models = {k: models.get_model(design, k) for k in (T1, T2)}
        self.ledger = SlotLedger(cluster, config.caps)
        self.backend = make_backend(backend, self.ledger, config.time_scale)
        self.overheads = config.overheads.resolve(design, self.backend.name)
        self.index = {img.id: i for i, img in enumerate(self.workload)}
        self.records: list[TaskRecord] = []
        self.intervals: list[Interval] = []
        self.stats: dict = {}
        self._lock = threading.Lock()

    def now(self) -> float:
        return self.backend.now()

    def duration(self, kind: TaskKind, node: str, image: ImageSpec) -> float:
        # one stream per (seed, image, kind): draws do not depend on scheduling order
        rng = np.random.default_rng([self.config.seed, self.index[image.id], 1 if kind is T1 else 2])
        return sample_duration(self.models[kind], image.size_mb, rng) / self.config.speed(node, kind)

    def execute(self, kind: TaskKind, image: ImageSpec, node: str | None = None):
        """Acquire a slot, run the task, release. Returns the node used."""
        node = yield Acquire(kind, node)
        try:
            dur = self.duration(kind, node, image)
            start = self.now()
            yield Timeout(dur)
            end = self.now()
            rec = TaskRecord(f"{image.id}.{kind.value}", kind, image.id, node, start, end)
            with self._lock:
                self.records.append(rec)
        finally:
            self.backend.release(node, kind)
        return node

    def phase(self, label: str, start: float, injected: float):
        if injected > 0:
            yield Timeout(injected)
        end = self.now()
        self.intervals.append(Interval(label, start, end))

    def finish(self, collect_stats=None) -> Trace:
        self.backend.run()
        if collect_stats is not None:
            collect_stats()
        records = sorted(self.records, key=lambda r: (r.start, r.node_id, r.task_id))
        last_end = max(r.end for r in records)
        if self.backend.name == "sim":
            run_end = last_end + self.overheads["teardown_s"]
        else:
            run_end = max(last_end, self.now())
        self.intervals.append(Interval("teardown", last_end, run_end))
        manifest = RunManifest(
            design=self.design.value,
            backend=self.backend.name,
            seed=self.config.seed,
            run_start=0.0,
            run_end=run_end,
            intervals=list(self.intervals),
            n_images=len(self.workload),
            workload_digest=workload_digest(self.workload),
            cluster=self.cluster.to_json(),
            caps=asdict(self.config.caps),
            config=self.config.to_json(),
            stats=self.stats,
        )
        trace = Trace(records, manifest)
        if self.config.audit:
            audit_trace(trace, self.cluster, self.config.caps, self.workload)
        return trace


def _workers(run: _Run, node_queues: Mapping[str, TaskQueue], image_queue_for):
    """Spawn tiling and counting workers on every node (Designs 2 and 2.A)."""
    caps = run.config.caps
    poll = run.config.poll_interval_s
    reports = []

    def tiler(node, wid):
        out_q = node_queues[node]

        def handle(payload):
            img = _decode(payload)
            yield from run.execute(T1, img, node)
            out_q.push(wid, payload)

        report = yield from receiver(image_queue_for(node), wid, handle, poll)
        out_q.sender_close(wid)
        reports.append(report)

    def counter(node, wid):
        def handle(payload):
            yield from run.execute(T2, _decode(payload), node)

        report = yield from receiver(node_queues[node], wid, handle, poll)
        reports.append(report)

    for node in run.cluster.node_ids:
        tiler_ids = [f"{node}.t1w{j}" for j in range(caps.max_t1_per_node)]
        # register every tiler before any counter can pull, or a counter could see EMPTY
        for wid in tiler_ids:
            node_queues[node].sender_register(wid)
        for wid in tiler_ids:
            run.backend.spawn(tiler(node, wid))
        for j in range(caps.max_t2_per_node):
            run.backend.spawn(counter(node, f"{node}.t2w{j}"))
    return reports


def _queue_stats(run: _Run, node_queues, reports) -> None:
    run.stats["queue2"] = {
        node: {"pushed": q.pushed, "delivered": q.delivered, "peak_backlog": q.peak_backlog}
        for node, q in node_queues.items()
    }
    run.stats["receivers"] = {
        "count": len(reports),
        "waits": sum(r.waits for r in reports),
        "failed": sum(r.failed for r in reports),
    }


# --- designs ---------------------------------------------------------------

def run_design1(cluster: ClusterSpec, workload, models: ModelRegistry, backend: str = "sim",
                config: DesignConfig | None = None) -> Trace:
    config = replace(config or DesignConfig(), design=Design.D1)
    run = _Run(Design.D1, cluster, workload, models, backend, config)
    oh = run.overheads

    def pipeline(img):
        node = yield from run.execute(T1, img)
        # tagged scheduling: counting stays on the tiling node
        yield from run.execute(T2, img, node)

    def driver():
        t0 = run.now()
        images = list(run.workload)
        yield from run.phase("dataset_discovery", t0, oh["discovery_per_image_s"] * len(images))
        t1 = run.now()
        pipelines = [pipeline(img) for img in images]
        yield from run.phase("client_submission", t1, oh["client_submission_s"])
        for p in pipelines:
            run.backend.spawn(p)

    run.backend.spawn(driver())
    return run.finish()


def run_design2(cluster: ClusterSpec, workload, models: ModelRegistry, backend: str = "sim",
                config: DesignConfig | None = None) -> Trace:
    config = replace(config or DesignConfig(), design=Design.D2)
    run = _Run(Design.D2, cluster, workload, models, backend, config)
    oh = run.overheads
    box = {}

    def driver():
        t0 = run.now()
        q1 = TaskQueue("queue1")
        q1.sender_register("dataset")
        for img in run.workload:
            q1.push("dataset", _encode(img))
        q1.sender_close("dataset")
        yield from run.phase("dataset_discovery", t0, oh["discovery_per_image_s"] * len(run.workload))
        t1 = run.now()
        node_queues = {node: TaskQueue(f"queue2.{node}") for node in run.cluster.node_ids}
        yield from run.phase("setup", t1, oh["setup_s"] + oh["worker_bootstrap_s"])
        box["q2"] = node_queues
        box["reports"] = _workers(run, node_queues, lambda node: q1)

    run.backend.spawn(driver())
    return run.finish(lambda: _queue_stats(run, box["q2"], box["reports"]))


def run_design2a(cluster: ClusterSpec, workload, models: ModelRegistry, backend: str = "sim",
                 config: DesignConfig | None = None) -> Trace:
    config = replace(config or DesignConfig(), design=Design.D2A)
    run = _Run(Design.D2A, cluster, workload, models, backend, config)
    oh = run.overheads
    box = {}

    def driver():
        t0 = run.now()
        images = list(run.workload)
        yield from run.phase("dataset_discovery", t0, oh["discovery_per_image_s"] * len(images))
        t1 = run.now()
        parts = partition_balanced(images, run.cluster.n, combined_model(models, Design.D2A),
                                   config.partition_strategy)
        image_queues = {}
        for node, part in zip(run.cluster.node_ids, parts):
            q = TaskQueue(f"images.{node}")
            q.sender_register("distributor")
            for img in part:
                q.push("distributor", _encode(img))
            q.sender_close("distributor")
            image_queues[node] = q
        run.stats["partition"] = {node: len(p) for node, p in zip(run.cluster.node_ids, parts)}
        yield from run.phase("distributing", t1, oh["distributing_s"])
        t2 = run.now()
        node_queues = {node: TaskQueue(f"queue2.{node}") for node in run.cluster.node_ids}
        yield from run.phase("setup", t2, oh["setup_s"] + oh["worker_bootstrap_s"])
        box["q2"] = node_queues
        box["reports"] = _workers(run, node_queues, image_queues.__getitem__)

    run.backend.spawn(driver())
    return run.finish(lambda: _queue_stats(run, box["q2"], box["reports"]))


RUNNERS = {Design.D1: run_design1, Design.D2: run_design2, Design.D2A: run_design2a}


def run_design(design, cluster: ClusterSpec, workload, models: ModelRegistry | None = None,
               backend: str = "sim", config: DesignConfig | None = None) -> Trace:
    design = Design.parse(design)
    models = models if models is not None else default_registry()
    config = replace(config or DesignConfig(), design=design)
    return RUNNERS[design](cluster, workload, models, backend, config)


# --- run config files ------------------------------------------------------

@dataclass
class RunConfig:
    design: Design
    cluster: ClusterSpec
    config: DesignConfig
    models: ModelRegistry
    backend: str = "sim"


def load_run_config(data: Mapping, **overrides) -> RunConfig:
    """Parse a run config; keyword overrides (e.g. from CLI flags) win over file values."""
    data = {**data, **{k: v for k, v in overrides.items() if v is not None}}
    design = Design.parse(data.get("design", "d1"))
    if "cluster" in data:
        cluster_data = dict(data["cluster"])
        if "caps" in data:
            cluster_data["caps"] = data["caps"]
        cluster, caps = load_cluster_config(cluster_data)
    else:
        cluster = reference_cluster()
        caps = ConcurrencyCaps(**dict(data.get("caps") or {}))
        for node in cluster.nodes:
            caps.validate_for(node)
    models = ModelRegistry.from_json(data["models"]) if data.get("models") else default_registry()
    if data.get("noise_std") is not None:
        models = models.with_noise(float(data["noise_std"]))
    known = set(OverheadConfig.__dataclass_fields__)
    oh = dict(data.get("overheads") or {})
    unknown = set(oh) - known
    if unknown:
        raise ConfigurationError(f"unknown overhead keys {sorted(unknown)}")
    config = DesignConfig(
        design=design,
        caps=caps,
        poll_interval_s=float(data.get("poll_interval_s", 1.0)),
        seed=int(data.get("seed", 0)),
        speed_multipliers=dict(data.get("speed_multipliers") or {}),
        overheads=OverheadConfig(**oh),
        partition_strategy=data.get("partition_strategy", "lpt"),
        time_scale=float(data.get("time_scale", 1e-3)),
    )
    unknown_nodes = set(config.speed_multipliers) - set(cluster.node_ids)
    if unknown_nodes:
        raise ConfigurationError(f"speed multipliers for unknown nodes {sorted(unknown_nodes)}")
    backend = data.get("backend", "sim")
    if backend not in ("sim", "realtime"):
        raise ConfigurationError(f"unknown backend {backend!r}")
    return RunConfig(design, cluster, config, models, backend)
