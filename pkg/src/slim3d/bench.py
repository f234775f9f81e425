"""Dense vs sparse-gather attention timing over synthetic scenes."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .attention import SparsePattern, masked_attention, sparse_masked_attention
from .masks import MaskStrategy, compose, sparsity_stats
from .scene import TokenLayout
from .scene_gen import SceneRecipe, generate_scene

CSV_HEADER = "N,strategy,object_block_density,dense_seconds,sparse_seconds,max_abs_diff"


@dataclass(frozen=True)
class BenchRow:
    N: int
    strategy: str
    density: float
    dense_seconds: float
    sparse_seconds: float
    max_abs_diff: float

    def csv(self) -> str:
        return (f"{self.N},{self.strategy},{self.density:.6g},{self.dense_seconds:.6g},"
                f"{self.sparse_seconds:.6g},{self.max_abs_diff:.3g}")


def bench_scene(N: int, seed: int = 0):
    """A clustered scene with exactly ``N`` objects."""
    if N < 4:
        recipe = SceneRecipe(n_clusters=1, objects_per_cluster=(N, N), outlier_count=0, seed=seed)
    else:
        n_out = max(1, N // 16)
        C = max(1, min(8, N // 8))
        per = N - n_out
        recipe = SceneRecipe(n_clusters=C, objects_per_cluster=(max(1, per // C - per // (3 * C)),
                                                                per // C + per // (3 * C) + 1),
                             outlier_count=n_out, n_objects=N, seed=seed)
    return generate_scene(recipe)


def _median_time(fn, trials, warmup):
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(trials):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def bench_one(N: int, strategy: MaskStrategy, trials: int = 20, warmup: int = 3,
              d: int = 32, seed: int = 0) -> BenchRow:
    """Time one attention layer over the object segment alone (``tokens_per_object=1``)."""
    scene = bench_scene(N, seed)
    layout = TokenLayout(n_system=0, n_objects=N, tokens_per_object=1)
    mask = compose(scene, layout, strategy)
    density = sparsity_stats(mask)["object_block_density"]
    rng = np.random.default_rng([seed, N])
    Q, K, V = rng.normal(size=(3, N, d))
    pattern = SparsePattern(mask)
    dense = masked_attention(Q, K, V, mask.allow)
    sparse = sparse_masked_attention(Q, K, V, pattern)
    t_dense = _median_time(lambda: masked_attention(Q, K, V, mask.allow), trials, warmup)
    t_sparse = _median_time(lambda: sparse_masked_attention(Q, K, V, pattern), trials, warmup)
    return BenchRow(N, strategy.name, density, t_dense, t_sparse, float(np.abs(dense - sparse).max()))


def run_bench(sizes=(64, 128, 256, 512), strategies=None, trials: int = 20, warmup: int = 3,
              seed: int = 0) -> list:
    if strategies is None:
        strategies = [MaskStrategy("geo"), MaskStrategy("fixedn"), MaskStrategy("full")]
    return [bench_one(N, s, trials, warmup, seed=seed) for N in sizes for s in strategies]


def bench_csv(rows) -> str:
    return "\n".join([CSV_HEADER] + [r.csv() for r in rows]) + "\n"
