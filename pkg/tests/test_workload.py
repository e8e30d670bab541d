import math

import numpy as np
import pytest

from hetflow.errors import ConfigurationError, InputError
from hetflow.workload import (ImageSpec, WorkloadSpec, format_manifest, generate_workload, load_workload,
                              parse_manifest, workload_digest, write_manifest)


def test_reference_distribution_mean_within_2_percent():
    images = generate_workload(WorkloadSpec(3097, 1304.85, 512.68, 50, 2770, seed=0))
    assert len(images) == 3097
    mean = np.mean([i.size_mb for i in images])
    assert abs(mean - 1304.85) / 1304.85 < 0.02


def test_sizes_respect_bounds_and_ids_unique():
    images = generate_workload(WorkloadSpec(5000, 1304.85, 512.68, 50, 2770, seed=3))
    sizes = np.array([i.size_mb for i in images])
    assert sizes.min() >= 50 and sizes.max() <= 2770
    assert len({i.id for i in images}) == len(images)


def test_rejection_not_clamping():
    # a narrow window around a wide normal: clamping would pile mass on the edges
    images = generate_workload(WorkloadSpec(2000, 1000, 500, 900, 1100, seed=1))
    sizes = np.array([i.size_mb for i in images])
    assert np.sum(sizes == 900) == 0 and np.sum(sizes == 1100) == 0


def test_degenerate_distribution():
    (img,) = generate_workload(WorkloadSpec(1, 1000, 1e-9, 50, 2770, seed=0))
    assert img.size_mb == pytest.approx(1000, abs=1e-6)


def test_deterministic_for_seed():
    spec = WorkloadSpec(200, seed=42)
    assert format_manifest(generate_workload(spec)) == format_manifest(generate_workload(spec))
    assert generate_workload(spec) != generate_workload(WorkloadSpec(200, seed=43))


def test_large_sample_mean_within_three_standard_errors():
    # truncation at [50, 2770] is ~2.4 sigma below the mean and ~2.9 above, so the
    # truncated mean is close to 1304.85; the 3 sigma/sqrt(n) band is 27.6 MB at n=3097
    n, std = 3097, 512.68
    for seed in range(5):
        sizes = [i.size_mb for i in generate_workload(WorkloadSpec(n, 1304.85, std, 50, 2770, seed=seed))]
        assert abs(np.mean(sizes) - 1304.85) <= 3 * std / math.sqrt(n)


@pytest.mark.parametrize("kwargs", [
    dict(count=3, min_mb=100, max_mb=100),
    dict(count=3, min_mb=100, max_mb=50),
    dict(count=3, std_mb=0),
    dict(count=-1),
])
def test_invalid_spec(kwargs):
    with pytest.raises(ConfigurationError):
        generate_workload(WorkloadSpec(**kwargs))


def test_zero_count():
    assert generate_workload(WorkloadSpec(0)) == []


def test_load_manifest_in_order(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("id,size_mb\na,100\nb,200\n")
    assert load_workload(p) == [ImageSpec("a", 100.0), ImageSpec("b", 200.0)]


def test_duplicate_id_rejected(tmp_path):
    p = tmp_path / "w.csv"
    p.write_text("id,size_mb\na,100\na,200\n")
    with pytest.raises(InputError, match="duplicate"):
        load_workload(p)


@pytest.mark.parametrize("text", ["", "id,size_mb\n"])
def test_empty_manifest(tmp_path, text):
    p = tmp_path / "w.csv"
    p.write_text(text)
    assert load_workload(p) == []


@pytest.mark.parametrize("body", ["a,0", "a,-5", "a,abc", "a,1,2"])
def test_bad_rows(body):
    with pytest.raises(InputError):
        parse_manifest(f"id,size_mb\n{body}\n")


def test_bad_header():
    with pytest.raises(InputError):
        parse_manifest("name,size\na,1\n")


def test_manifest_round_trip(tmp_path):
    images = generate_workload(WorkloadSpec(50, seed=9))
    path = write_manifest(images, tmp_path / "sub" / "w.csv")
    back = load_workload(path)
    assert back == images
    assert workload_digest(back) == workload_digest(images)
