import pytest

from slim3d.bench import CSV_HEADER, bench_csv, bench_one, bench_scene, run_bench
from slim3d.masks import MaskStrategy


@pytest.mark.parametrize("N", [1, 3, 17, 64, 100])
def test_bench_scene_has_exact_size(N):
    assert bench_scene(N).N == N


@pytest.mark.parametrize("N", [64, 128])
def test_geo_density_bounded_by_budget(N):
    row = bench_one(N, MaskStrategy("geo"), trials=2, warmup=0)
    # self plus at most k_max = 10 neighbours per row
    assert row.density <= 11 / N
    assert row.max_abs_diff < 1e-12


def test_full_is_dense_and_sparse_agrees():
    row = bench_one(32, MaskStrategy("full"), trials=2, warmup=0)
    assert row.density == 1.0
    assert row.max_abs_diff < 1e-12


def test_csv_layout():
    rows = run_bench(sizes=(16,), strategies=[MaskStrategy("geo"), MaskStrategy("fixedn")], trials=1, warmup=0)
    lines = bench_csv(rows).splitlines()
    assert lines[0] == CSV_HEADER
    assert [l.split(",")[1] for l in lines[1:]] == ["geo", "fixedn:5"]
    assert all(len(l.split(",")) == 6 for l in lines)
