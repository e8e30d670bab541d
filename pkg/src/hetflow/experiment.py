"""Experiment plans: run designs over seeds and collect reports."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .designs import RunConfig, load_run_config, run_design
from .io import atomic_write_text, write_json
from .kinds import Design
from .metrics import RunReport, build_report, compare_designs, compute_utilization, format_utilization_csv
from .trace import Trace
from .workload import ImageSpec, WorkloadSpec, generate_workload, load_workload, write_manifest


@dataclass
class ExperimentPlan:
    designs: list[Design] = field(default_factory=lambda: [Design.D1, Design.D2, Design.D2A])
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    workload: WorkloadSpec | None = field(default_factory=lambda: WorkloadSpec(200))
    manifest: Path | None = None
    run: dict = field(default_factory=dict)
    backend: str = "sim"
    out_dir: Path | None = None

    def __post_init__(self):
        self.designs = [Design.parse(d) for d in self.designs]
        if not self.designs:
            raise ValueError("plan needs at least one design")
        if not self.seeds:
            raise ValueError("plan needs at least one seed")

    def workload_for(self, seed: int) -> list[ImageSpec]:
        """A manifest is reused for every seed; a spec is re-drawn per seed."""
        if self.manifest is not None:
            return load_workload(self.manifest)
        return generate_workload(replace(self.workload, seed=seed))

    def run_config(self, design: Design, seed: int) -> RunConfig:
        return load_run_config(self.run, design=design.value, seed=seed, backend=self.backend)


def reference_plan(**changes) -> ExperimentPlan:
    """200 images, four 32-core/2-GPU nodes, caps (3, 2), reference models, 10 seeds."""
    return replace(ExperimentPlan(), **changes)


@dataclass
class RunOutcome:
    design: Design
    seed: int
    trace: Trace
    report: RunReport


def execute(cfg: RunConfig, workload: Sequence[ImageSpec]) -> RunOutcome:
    trace = run_design(cfg.design, cfg.cluster, workload, cfg.models, cfg.backend, cfg.config)
    report = build_report(trace, cfg.cluster, cfg.config.caps, workload)
    return RunOutcome(cfg.design, cfg.config.seed, trace, report)


def write_outcome(outcome: RunOutcome, cfg: RunConfig, workload, directory) -> dict[str, Path]:
    directory = Path(directory)
    trace_csv, manifest_json = outcome.trace.write(directory)
    timelines = compute_utilization(outcome.trace, cfg.cluster, cfg.config.caps)
    return {
        "trace": trace_csv,
        "manifest": manifest_json,
        "report": write_json(directory / "report.json", outcome.report.to_json()),
        "utilization": atomic_write_text(directory / "utilization.csv", format_utilization_csv(timelines)),
        "workload": write_manifest(workload, directory / "workload.csv"),
    }


@dataclass
class Comparison:
    outcomes: list[RunOutcome]
    rows: list[dict]
    wins: Counter
    mean_ttc: dict[str, float]

    def by_seed(self, seed: int) -> dict[str, RunOutcome]:
        return {o.design.value: o for o in self.outcomes if o.seed == seed}


def run_comparison(plan: ExperimentPlan, keep_traces: bool = True) -> Comparison:
    outcomes: list[RunOutcome] = []
    rows: list[dict] = []
    wins: Counter = Counter()
    for seed in plan.seeds:
        workload = plan.workload_for(seed)
        per_seed = []
        for design in plan.designs:
            cfg = plan.run_config(design, seed)
            outcome = execute(cfg, workload)
            if plan.out_dir is not None:
                write_outcome(outcome, cfg, workload, Path(plan.out_dir) / f"{design.value}-seed{seed}")
            if not keep_traces:
                outcome.trace = Trace([], outcome.trace.manifest)
            per_seed.append(outcome)
        rows.extend(compare_designs([o.report for o in per_seed]))
        wins[min(per_seed, key=lambda o: o.report.ttc).design.value] += 1
        outcomes.extend(per_seed)
    mean_ttc = {}
    for design in plan.designs:
        ttcs = [o.report.ttc for o in outcomes if o.design is design]
        mean_ttc[design.value] = sum(ttcs) / len(ttcs)
    return Comparison(outcomes, rows, wins, mean_ttc)
