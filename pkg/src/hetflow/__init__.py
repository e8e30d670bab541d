"""Simulate and compare task-parallel designs for two-stage CPU/GPU image workflows."""
from .cluster import ClusterSpec, ConcurrencyCaps, NodeSpec, SlotLedger, reference_cluster, theoretical_max_utilization
from .designs import (DesignConfig, OverheadConfig, partition_balanced, run_design, run_design1, run_design2,
                      run_design2a)
from .kinds import Design, TaskKind
from .metrics import build_report, compare_designs, compute_overheads, compute_ttc, compute_utilization
from .perfmodel import ExecTimeModel, FitResult, default_registry, fit_linear, predict_mean, sample_duration
from .protocol import Outcome, PullResult, TaskQueue, receive_loop
from .trace import TaskRecord, Trace
from .workload import ImageSpec, WorkloadSpec, generate_workload, load_workload

__version__ = "0.1.0"
