"""Trace audit: exactly-once, data affinity, precedence and cap compliance."""
from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable

from .cluster import ClusterSpec, ConcurrencyCaps
from .errors import AuditError
from .kinds import T1, T2, TaskKind
from .trace import TaskRecord, Trace

EPS = 1e-9


def peak_concurrency(records: Iterable[TaskRecord]) -> int:
    """Maximum number of overlapping records; a record ending at t frees its slot
    before one starting at t takes it."""
    events = []
    for r in records:
        events.append((r.start, 1))
        events.append((r.end, -1))
    events.sort()  # -1 sorts before +1 at equal times
    busy = peak = 0
    for _, delta in events:
        busy += delta
        peak = max(peak, busy)
    return peak


def cap_violations(records: Iterable[TaskRecord], caps: ConcurrencyCaps) -> list[str]:
    groups: dict[tuple[str, TaskKind], list[TaskRecord]] = defaultdict(list)
    for r in records:
        groups[(r.node_id, r.kind)].append(r)
    problems = []
    for (node, kind), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        peak = peak_concurrency(recs)
        if peak > caps.cap(kind):
            problems.append(f"{node}: {peak} concurrent {kind.value} tasks exceed cap {caps.cap(kind)}")
    return problems


def audit_trace(trace: Trace, cluster: ClusterSpec, caps: ConcurrencyCaps, workload=None) -> None:
    problems: list[str] = []
    nodes = set(cluster.node_ids)
    by_image: dict[str, dict[TaskKind, list[TaskRecord]]] = defaultdict(lambda: {T1: [], T2: []})
    for r in trace.records:
        if r.end < r.start:
            problems.append(f"{r.task_id}: ends before it starts")
        if r.node_id not in nodes:
            problems.append(f"{r.task_id}: unknown node {r.node_id!r}")
        by_image[r.image_id][r.kind].append(r)

    if workload is not None:
        expected = Counter(img.id for img in workload)
        for image_id in expected:
            if image_id not in by_image:
                problems.append(f"image {image_id}: never processed")
        for image_id in by_image:
            if image_id not in expected:
                problems.append(f"image {image_id}: not in the workload")

    for image_id, kinds in by_image.items():
        t1s, t2s = kinds[T1], kinds[T2]
        if len(t1s) != 1 or len(t2s) != 1:
            problems.append(f"image {image_id}: {len(t1s)} t1 and {len(t2s)} t2 records, expected one each")
            continue
        a, b = t1s[0], t2s[0]
        if a.node_id != b.node_id:
            problems.append(f"image {image_id}: t1 on {a.node_id} but t2 on {b.node_id}")
        if b.start < a.end - EPS:
            problems.append(f"image {image_id}: t2 starts at {b.start} before t1 ends at {a.end}")

    problems.extend(cap_violations(trace.records, caps))
    if problems:
        shown = "\n  ".join(problems[:20])
        more = f"\n  ... and {len(problems) - 20} more" if len(problems) > 20 else ""
        raise AuditError(f"trace audit failed ({len(problems)} problems):\n  {shown}{more}")
