"""Utilization, time-to-completion, overheads and cross-design comparison."""
from __future__ import annotations

import csv
import io
import math
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .audit import audit_trace, cap_violations
from .cluster import ClusterSpec, ConcurrencyCaps
from .errors import AuditError, InputError
from .kinds import T1, T2, TaskKind
from .trace import RunManifest, Trace

OVERHEAD_LABELS = ("dataset_discovery", "setup", "distributing", "client_submission", "teardown")
RESOURCE_NAMES = {T1: "cpu", T2: "gpu"}

log = logging.getLogger(__name__)


@dataclass
class UtilizationTimeline:
    """Busy-slot count as a step function: ``busy[i]`` holds on ``[times[i], times[i+1])``."""

    kind: TaskKind
    times: np.ndarray
    busy: np.ndarray
    total_slots: int  # every core (t1) or GPU (t2) in the cluster
    cap_slots: int  # slots the per-node caps allow

    @property
    def resource(self) -> str:
        return RESOURCE_NAMES[self.kind]

    @property
    def percent(self) -> np.ndarray:
        return 100.0 * self.busy / self.total_slots

    @property
    def cap_percent(self) -> np.ndarray:
        return 100.0 * self.busy / self.cap_slots

    def busy_integral(self, start: float | None = None, end: float | None = None) -> float:
        if self.times.size < 2:
            return 0.0
        t = self.times
        lo = t[0] if start is None else start
        hi = t[-1] if end is None else end
        seg_lo = np.clip(t[:-1], lo, hi)
        seg_hi = np.clip(t[1:], lo, hi)
        return float(np.sum(self.busy[:-1] * (seg_hi - seg_lo)))

    def mean_percent(self, start: float, end: float, cap_relative: bool = False) -> float:
        """Time-weighted mean utilization over ``[start, end]``."""
        if end <= start:
            return 0.0
        slots = self.cap_slots if cap_relative else self.total_slots
        return 100.0 * self.busy_integral(start, end) / ((end - start) * slots)

    @property
    def peak_percent(self) -> float:
        return float(self.percent.max()) if self.busy.size else 0.0


def _timeline(records, kind, total, cap_total) -> UtilizationTimeline:
    deltas: dict[float, int] = defaultdict(int)
    for r in records:
        deltas[r.start] += 1
        deltas[r.end] -= 1
    times = np.array(sorted(deltas), dtype=float)
    busy = np.cumsum([deltas[t] for t in times]).astype(float) if times.size else np.empty(0)
    return UtilizationTimeline(kind, times, busy, total, cap_total)


def compute_utilization(trace: Trace, cluster: ClusterSpec, caps: ConcurrencyCaps) -> dict[TaskKind, UtilizationTimeline]:
    problems = cap_violations(trace.records, caps)
    if problems:
        raise AuditError("; ".join(problems))
    return {
        T1: _timeline(trace.of_kind(T1), T1, cluster.total_cpus, cluster.n * caps.max_t1_per_node),
        T2: _timeline(trace.of_kind(T2), T2, cluster.total_gpus, cluster.n * caps.max_t2_per_node),
    }


def format_utilization_csv(timelines: dict[TaskKind, UtilizationTimeline]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t_s", "kind", "busy", "percent"])
    for kind in (T1, T2):
        tl = timelines[kind]
        for t, b, p in zip(tl.times, tl.busy, tl.percent):
            w.writerow([f"{t:.6f}", tl.resource, int(b), f"{p:.4f}"])
    return buf.getvalue()


def _span(trace: Trace, manifest: RunManifest | None) -> tuple[float, float]:
    if not trace.records:
        raise InputError("trace is empty")
    start = min(r.start for r in trace.records)
    end = max(r.end for r in trace.records)
    if manifest is not None:
        start = min(start, manifest.run_start, *(i.start for i in manifest.intervals))
        end = max(end, manifest.run_end, *(i.end for i in manifest.intervals))
    return start, end


def compute_ttc(trace: Trace, manifest: RunManifest | None = None) -> float:
    """Run start (before discovery/setup) to the last task end plus teardown."""
    start, end = _span(trace, manifest if manifest is not None else trace.manifest)
    return end - start


@dataclass
class OverheadBreakdown:
    dataset_discovery: float = 0.0
    setup: float = 0.0
    distributing: float = 0.0
    client_submission: float = 0.0
    teardown: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def total(self) -> float:
        return sum(getattr(self, k) for k in OVERHEAD_LABELS)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in OVERHEAD_LABELS}
        d["total"] = self.total
        d["warnings"] = list(self.warnings)
        return d


def compute_overheads(manifest: RunManifest, trace: Trace | None = None,
                      gap_tolerance_s: float = 1.0) -> OverheadBreakdown:
    """Sum labelled intervals; warn when the run has unlabelled time before the
    first task that exceeds ``gap_tolerance_s``."""
    out = OverheadBreakdown()
    for iv in manifest.intervals:
        if iv.label not in OVERHEAD_LABELS:
            out.warnings.append(f"unknown overhead label {iv.label!r}")
            continue
        if iv.length < 0:
            raise InputError(f"interval {iv.label} has negative length")
        setattr(out, iv.label, getattr(out, iv.label) + iv.length)
    if trace is not None and trace.records:
        first = min(r.start for r in trace.records)
        pre = [iv for iv in manifest.intervals if iv.label != "teardown"]
        labelled_until = max((iv.end for iv in pre), default=manifest.run_start)
        gap = first - labelled_until
        if gap > gap_tolerance_s:
            out.warnings.append(f"{gap:.3f} s unlabelled between last overhead and first task")
    for msg in out.warnings:
        log.warning(msg)
    return out


@dataclass
class RunReport:
    design: str
    seed: int
    ttc: float
    utilization: dict
    overheads: OverheadBreakdown
    node_images: dict[str, int]
    node_mb: dict[str, float]
    total_mb: float
    workload_digest: str = ""
    cluster_digest: str = ""

    @property
    def balance_ratio(self) -> float:
        """Max over min processed MB per node (1.0 is perfect balance)."""
        vals = list(self.node_mb.values())
        if not vals or min(vals) == 0:
            return math.inf
        return max(vals) / min(vals)

    @property
    def overhead_fraction(self) -> float:
        return self.overheads.total / self.ttc

    def to_json(self) -> dict:
        d = asdict(self)
        d["overheads"] = self.overheads.to_dict()
        d["balance_ratio"] = self.balance_ratio
        d["overhead_fraction"] = self.overhead_fraction
        return d


def build_report(trace: Trace, cluster: ClusterSpec, caps: ConcurrencyCaps, workload) -> RunReport:
    manifest = trace.manifest
    if manifest is None:
        raise InputError("report needs a run manifest")
    audit_trace(trace, cluster, caps, workload)
    sizes = {img.id: img.size_mb for img in workload}
    timelines = compute_utilization(trace, cluster, caps)
    start, end = _span(trace, manifest)
    util = {}
    for kind, tl in timelines.items():
        util[tl.resource] = {
            "mean_pct": tl.mean_percent(start, end),
            "mean_cap_pct": tl.mean_percent(start, end, cap_relative=True),
            "peak_pct": tl.peak_percent,
            "busy_s": tl.busy_integral(),
        }
    node_images = {nid: 0 for nid in cluster.node_ids}
    node_mb = {nid: 0.0 for nid in cluster.node_ids}
    for r in trace.of_kind(T1):
        node_images[r.node_id] += 1
        node_mb[r.node_id] += sizes[r.image_id]
    return RunReport(
        design=manifest.design,
        seed=manifest.seed,
        ttc=compute_ttc(trace, manifest),
        utilization=util,
        overheads=compute_overheads(manifest, trace),
        node_images=node_images,
        node_mb=node_mb,
        total_mb=sum(node_mb.values()),
        workload_digest=manifest.workload_digest,
        cluster_digest=repr(sorted(manifest.cluster.get("nodes", []), key=lambda n: n["id"])),
    )


COMPARE_COLUMNS = ("design", "seed", "ttc_s", "ttc_delta_s", "cpu_mean_pct", "cpu_peak_pct",
                   "gpu_mean_pct", "gpu_peak_pct", "overhead_s", "overhead_frac", "balance_ratio")


def compare_designs(reports: Sequence[RunReport]) -> list[dict]:
    """One row per report; deltas are relative to the first report."""
    if len(reports) < 1:
        raise InputError("nothing to compare")
    ref = reports[0]
    for r in reports[1:]:
        if r.workload_digest != ref.workload_digest or r.cluster_digest != ref.cluster_digest:
            raise InputError(f"report {r.design}/seed {r.seed} ran on a different workload or cluster")
    rows = []
    for r in reports:
        rows.append({
            "design": r.design,
            "seed": r.seed,
            "ttc_s": r.ttc,
            "ttc_delta_s": r.ttc - ref.ttc,
            "cpu_mean_pct": r.utilization["cpu"]["mean_pct"],
            "cpu_peak_pct": r.utilization["cpu"]["peak_pct"],
            "gpu_mean_pct": r.utilization["gpu"]["mean_pct"],
            "gpu_peak_pct": r.utilization["gpu"]["peak_pct"],
            "overhead_s": r.overheads.total,
            "overhead_frac": r.overhead_fraction,
            "balance_ratio": r.balance_ratio,
        })
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def format_comparison_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COMPARE_COLUMNS)
    for row in rows:
        w.writerow([_cell(row[c]) for c in COMPARE_COLUMNS])
    return buf.getvalue()


def format_comparison_text(rows: Sequence[dict]) -> str:
    table = [list(COMPARE_COLUMNS)] + [[_cell(row[c]) for c in COMPARE_COLUMNS] for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(COMPARE_COLUMNS))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
