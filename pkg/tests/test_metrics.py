import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetflow.cluster import ConcurrencyCaps, reference_cluster
from hetflow.designs import DesignConfig, run_design
from hetflow.errors import AuditError, InputError
from hetflow.kinds import T1, T2
from hetflow.metrics import (build_report, compare_designs, compute_overheads, compute_ttc, compute_utilization,
                             format_comparison_csv, format_comparison_text, format_utilization_csv)
from hetflow.trace import Interval, RunManifest, TaskRecord, Trace
from hetflow.workload import ImageSpec, WorkloadSpec, generate_workload

CL = reference_cluster()
CAPS = ConcurrencyCaps(3, 2)


def rec(i, kind, node, start, end):
    return TaskRecord(f"{i}.{kind.value}", kind, str(i), node, start, end)


def test_single_gpu_task_is_one_eighth():
    tl = compute_utilization(Trace([rec("a", T2, "node0", 5, 15)]), CL, CAPS)[T2]
    assert list(tl.times) == [5, 15]
    assert tl.percent[0] == 12.5 and tl.percent[-1] == 0
    assert tl.mean_percent(0, 20) == pytest.approx(12.5 * 10 / 20)


def test_saturation():
    records = []
    for n in CL.node_ids:
        records += [rec(f"{n}c{k}", T1, n, 0, 10) for k in range(3)]
        records += [rec(f"{n}g{k}", T2, n, 0, 10) for k in range(2)]
    util = compute_utilization(Trace(records), CL, CAPS)
    assert util[T2].peak_percent == 100
    assert util[T1].peak_percent == pytest.approx(100 * 12 / 128)
    assert util[T1].mean_percent(0, 10, cap_relative=True) == pytest.approx(100)


def test_cap_violation_is_audit_error():
    records = [rec(k, T2, "node0", 0, 1) for k in range(3)]
    with pytest.raises(AuditError):
        compute_utilization(Trace(records), CL, CAPS)


@st.composite
def slot_traces(draw):
    """Back-to-back tasks on each slot, so caps hold by construction."""
    records = []
    for node in CL.node_ids:
        for kind, cap in ((T1, 3), (T2, 2)):
            for slot in range(draw(st.integers(0, cap))):
                t = draw(st.floats(0, 50))
                for k in range(draw(st.integers(0, 5))):
                    d = draw(st.floats(0.001, 100))
                    gap = draw(st.floats(0, 10))
                    records.append(rec(f"{node}{kind.value}{slot}_{k}", kind, node, t, t + d))
                    t += d + gap
    return records


@settings(max_examples=80, deadline=None)
@given(slot_traces())
def test_busy_time_conservation(records):
    util = compute_utilization(Trace(records), CL, CAPS)
    for kind in (T1, T2):
        expected = sum(r.end - r.start for r in records if r.kind is kind)
        assert util[kind].busy_integral() == pytest.approx(expected, rel=1e-9, abs=1e-9)
        assert np.all(util[kind].percent <= 100 + 1e-12)
        assert np.all(util[kind].cap_percent <= 100 + 1e-12)
        assert np.all(util[kind].busy >= 0)


def test_ttc_includes_discovery():
    trace = Trace([rec("a", T1, "node0", 10, 20)],
                  RunManifest("d1", run_start=8, run_end=20,
                              intervals=[Interval("dataset_discovery", 8, 10)]))
    assert compute_ttc(trace) == 12


def test_ttc_spans_disjoint_tasks():
    assert compute_ttc(Trace([rec("a", T1, "node0", 0, 5), rec("b", T1, "node1", 50, 60)])) == 60
    with pytest.raises(InputError):
        compute_ttc(Trace([]))


def test_overheads_breakdown():
    m = RunManifest("d2a", intervals=[Interval("dataset_discovery", 0, 0.2),
                                      Interval("distributing", 0.2, 7.7), Interval("teardown", 100, 100)])
    ob = compute_overheads(m)
    assert ob.distributing == pytest.approx(7.5)
    assert ob.setup == 0 and ob.total == pytest.approx(7.7)
    assert compute_overheads(RunManifest("d1")).total == 0


def test_design1_has_no_setup_or_distributing():
    wl = generate_workload(WorkloadSpec(10, seed=0))
    ob = compute_overheads(run_design("d1", CL, wl).manifest)
    assert ob.setup == 0 and ob.distributing == 0
    assert ob.dataset_discovery == pytest.approx(0.01)


def test_unlabelled_gap_warns(caplog):
    m = RunManifest("d2", intervals=[Interval("setup", 0, 5)])
    with caplog.at_level(logging.WARNING):
        ob = compute_overheads(m, Trace([rec("a", T1, "node0", 20, 30)]))
    assert ob.warnings and "unlabelled" in ob.warnings[0]
    assert "unlabelled" in caplog.text


def test_reference_ttc_ordering_and_report():
    wl = generate_workload(WorkloadSpec(200, seed=0))
    reports = [build_report(run_design(d, CL, wl, config=DesignConfig(seed=0)), CL, CAPS, wl)
               for d in ("d1", "d2", "d2a")]
    ttc = {r.design: r.ttc for r in reports}
    assert ttc["d2a"] < ttc["d2"] < ttc["d1"]
    for r in reports:
        assert sum(r.node_images.values()) == 200
        assert r.total_mb == pytest.approx(sum(i.size_mb for i in wl))
        assert r.utilization["cpu"]["peak_pct"] <= 100 * 3 / 32 + 1e-9
    rows = compare_designs(reports)
    assert [row["design"] for row in rows] == ["d1", "d2", "d2a"]
    assert rows[2]["ttc_delta_s"] < 0
    assert min(rows, key=lambda r: r["ttc_s"])["design"] == "d2a"
    assert max(rows, key=lambda r: r["gpu_mean_pct"])["design"] == "d2a"


def test_compare_identical_and_mismatched():
    wl = generate_workload(WorkloadSpec(20, seed=0))
    r = build_report(run_design("d2", CL, wl), CL, CAPS, wl)
    rows = compare_designs([r, r])
    assert rows[1]["ttc_delta_s"] == 0 and rows[0] == rows[1]
    other = generate_workload(WorkloadSpec(20, seed=1))
    r2 = build_report(run_design("d2", CL, other), CL, CAPS, other)
    with pytest.raises(InputError):
        compare_designs([r, r2])
    text = format_comparison_text(rows)
    assert text.splitlines()[0].split()[0] == "design"
    assert format_comparison_csv(rows).splitlines()[0].startswith("design,seed,ttc_s")


def test_utilization_csv():
    tl = compute_utilization(Trace([rec("a", T2, "node0", 5, 15), rec("a", T1, "node0", 0, 5)]), CL, CAPS)
    lines = format_utilization_csv(tl).splitlines()
    assert lines[0] == "t_s,kind,busy,percent"
    assert "5.000000,gpu,1,12.5000" in lines
    assert "0.000000,cpu,1,0.7812" in lines


def test_balance_ratio():
    wl = [ImageSpec("a", 100), ImageSpec("b", 300)]
    trace = run_design("d2a", reference_cluster(2), wl)
    r = build_report(trace, reference_cluster(2), CAPS, wl)
    assert r.balance_ratio == pytest.approx(3.0)
