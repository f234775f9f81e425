"""One test per acceptance criterion; each prints a PASS/FAIL line with its numbers."""

import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from slim3d.attention import SparsePattern, attention_weights, masked_attention, sparse_masked_attention
from slim3d.bench import run_bench
from slim3d.checks import CHECK_STRATEGIES, gradient_suite, random_layout, random_scene
from slim3d.cli import run_ablation
from slim3d.decoder import DecoderConfig, DecoderParams, SequenceBatch, decoder_forward
from slim3d.geo import GeoParams, density_profile, geo_neighbors, round_half_away
from slim3d.masks import MaskStrategy, compose, parse_strategy, sparsity_stats
from slim3d.oracle import oracle_strategy_mask
from slim3d.scene import TokenLayout, segment_spans
from slim3d.train import TrainConfig

ABLATION_SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def corpus(cases=1000, seed=0):
    """Random tie-free scenes with N in [1, 64], a layout and a strategy per case."""
    rng = np.random.default_rng([seed, 100])
    for case in range(cases):
        N = int(rng.integers(1, 65))
        scene = random_scene(rng, N)
        layout = random_layout(rng, N)
        k_min = int(rng.integers(0, 4))
        spec = CHECK_STRATEGIES[case % len(CHECK_STRATEGIES)]
        yield scene, layout, parse_strategy(spec, k_min=k_min, k_max=k_min + int(rng.integers(0, 12)))


def test_criterion_1_oracle_equivalence(report):
    t0 = time.perf_counter()
    n = mismatches = 0
    for scene, layout, strategy in corpus():
        n += 1
        mismatches += compose(scene, layout, strategy) != oracle_strategy_mask(scene, layout, strategy)
    elapsed = time.perf_counter() - t0
    report(1, mismatches == 0 and n >= 1000 and elapsed < 60,
           f"{n} scenes, {len(CHECK_STRATEGIES)} strategies, {mismatches} mismatches, {elapsed:.1f}s (< 60s)")


def test_criterion_2_density_normalization(report):
    worst = 0.0
    checked = 0
    for scene, _layout, _strategy in corpus():
        if scene.N < 2:
            continue
        prof = density_profile(scene)
        if np.ptp(prof.rho) == 0:
            continue
        checked += 1
        r = prof.rho_norm
        worst = max(worst, abs(r.min()), abs(r.max() - 1))
    report(2, worst <= 1e-12, f"{checked} scenes, max deviation from [0,1] with min 0 and max 1: {worst:.1e} (<= 1e-12)")


def test_criterion_3_geometric_invariance(report):
    rng = np.random.default_rng(3)
    worst, changed = 0.0, 0
    layout_of = {}
    for _ in range(200):
        N = int(rng.integers(2, 65))
        scene = random_scene(rng, N)
        R = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
        s = float(np.exp(rng.uniform(np.log(0.1), np.log(10))))
        moved = scene.transformed(R, rng.normal(size=3) * 50, s)
        worst = max(worst, np.abs(density_profile(scene).rho_norm - density_profile(moved).rho_norm).max())
        layout = layout_of.setdefault(N, TokenLayout(n_system=1, n_objects=N, n_instruction=2, n_response=1))
        changed += compose(scene, layout, MaskStrategy("geo")) != compose(moved, layout, MaskStrategy("geo"))
    report(3, worst <= 1e-9 and changed == 0,
           f"200 rotation+translation+scale cases, max rho~ change {worst:.1e} (<= 1e-9), {changed} masks changed")


def _decoder_pair(spec, object_positions, seed=11):
    rng = np.random.default_rng(seed)
    N = 8
    layout = TokenLayout(n_system=2, n_objects=N, n_instruction=3, n_response=2)
    cfg = DecoderConfig(vocab_size=30, d_model=16, n_heads=2, d_head=8, n_layers=2, d_ff=32,
                        max_positions=layout.n, feature_dim=3, object_positions=object_positions)
    params = DecoderParams.init(cfg, seed=seed)
    scene = random_scene(rng, N)
    obj = segment_spans(layout).object_segment
    perm = rng.permutation(N)
    ids = rng.integers(0, 30, size=layout.n)
    ids_p = ids.copy()
    ids_p[obj.start:obj.stop] = ids[obj.start:obj.stop][perm]
    strategy = parse_strategy(spec)

    def run(sc, tok):
        feats = np.zeros((layout.n, 3))
        feats[obj.start:obj.stop] = sc.centers / 4.0
        return decoder_forward(params, SequenceBatch(tok, layout, compose(sc, layout, strategy), feats))

    a, b = run(scene, ids), run(scene.permuted(perm), ids_p)
    resp = segment_spans(layout).response
    return a, b, obj, perm, resp


def test_criterion_4_permutation_equivariance(report):
    rng = np.random.default_rng(4)
    bad = 0
    for _ in range(200):
        N = int(rng.integers(2, 41))
        scene = random_scene(rng, N)
        layout = TokenLayout(n_system=2, n_objects=N, n_instruction=3, n_response=1)
        perm = rng.permutation(N)
        obj = segment_spans(layout).object_segment
        full = np.arange(layout.n)
        full[obj.start:obj.stop] = obj.start + perm
        m0 = compose(scene, layout, parse_strategy("geo+inst")).allow
        m1 = compose(scene.permuted(perm), layout, parse_strategy("geo+inst")).allow
        bad += not np.array_equal(m1, m0[np.ix_(full, full)])
    a, b, obj, perm, resp = _decoder_pair("geo+inst", "shared")
    geo_dev = max(np.abs(b[obj.start:obj.stop] - a[obj.start:obj.stop][perm]).max(),
                  np.abs(b[resp.start:resp.stop] - a[resp.start:resp.stop]).max())
    a, b, _obj, _perm, resp = _decoder_pair("causal", "per_token")
    causal_dev = np.abs(b[resp.start:resp.stop] - a[resp.start:resp.stop]).max()
    report(4, bad == 0 and geo_dev <= 1e-12 and causal_dev > 1e-9,
           f"200 permutations, {bad} mask mismatches; decoder geo+inst deviation {geo_dev:.1e}, "
           f"causal per-token deviation {causal_dev:.2e} (must differ)")


BOUNDS = ((0, 5), (0, 10), (2, 10), (2, 20))


def test_criterion_5_neighbor_bounds(report):
    rng = np.random.default_rng(5)
    violations = nonmono = 0
    mean_density = {b: 0.0 for b in BOUNDS}
    for _ in range(100):
        N = int(rng.integers(2, 65))
        scene = random_scene(rng, N)
        layout = TokenLayout(n_objects=N)
        dens = {}
        for k_min, k_max in BOUNDS:
            prof = density_profile(scene, GeoParams(k_min, k_max))
            expect = np.clip(round_half_away((k_max - k_min) * prof.rho_norm + k_min), 0, N - 1)
            lo, hi = min(k_min, N - 1), min(k_max, N - 1)
            violations += int(not np.array_equal(prof.k, expect) or prof.k.min() < lo or prof.k.max() > hi)
            dens[k_min, k_max] = sparsity_stats(compose(scene, layout, MaskStrategy("geo", geo=GeoParams(k_min, k_max))))[
                "object_block_density"]
            mean_density[k_min, k_max] += dens[k_min, k_max] / 100
        nonmono += dens[0, 5] > dens[0, 10] or dens[2, 10] > dens[2, 20]
    mono = mean_density[0, 5] <= mean_density[0, 10] and mean_density[2, 10] <= mean_density[2, 20]
    table = ", ".join(f"({a},{b}) {mean_density[a, b]:.3f}" for a, b in BOUNDS)
    report(5, violations == 0 and nonmono == 0 and mono,
           f"100 scenes, {violations} clamp violations, {nonmono} non-monotone scenes; mean density {table}")


def test_criterion_6_attention_correctness(report):
    rng = np.random.default_rng(6)
    row_err = blocked = diff = 0.0
    for _ in range(100):
        N = int(rng.integers(1, 41))
        scene = random_scene(rng, N)
        layout = random_layout(rng, N)
        mask = compose(scene, layout, parse_strategy(CHECK_STRATEGIES[int(rng.integers(len(CHECK_STRATEGIES)))]))
        Q, K, V = rng.normal(size=(3, layout.n, 16)) * 3
        A = attention_weights(Q, K, mask)
        row_err = max(row_err, np.abs(A.sum(axis=-1) - 1).max())
        blocked = max(blocked, np.abs(A[~mask.allow]).max(initial=0.0))
        dense = masked_attention(Q, K, V, mask)
        diff = max(diff, np.abs(dense - sparse_masked_attention(Q, K, V, SparsePattern(mask))).max())
    report(6, row_err <= 1e-9 and blocked == 0.0 and diff <= 1e-12,
           f"100 masks: max |row sum - 1| {row_err:.1e} (<= 1e-9), max blocked weight {blocked}, "
           f"dense vs sparse {diff:.1e} (<= 1e-12)")


def test_criterion_7_gradient_check(report):
    t0 = time.perf_counter()
    result = gradient_suite(seed=0, tolerance=1e-4, epsilon=1e-5, strategies=CHECK_STRATEGIES)
    elapsed = time.perf_counter() - t0
    report(7, result.passed and elapsed < 120,
           f"{result.n_cases} strategies, {result.detail}, {elapsed:.1f}s (< 120s)")


def test_criterion_8_directional_ablation(report):
    rows = ("causal", "fixedn:5", "geo", "geo+inst")
    t0 = time.perf_counter()
    cells = run_ablation(ABLATION_SEEDS, TrainConfig(), rows)
    elapsed = time.perf_counter() - t0
    acc = {r: 100 * np.mean([c[2] for c in cells if c[0] == r]) for r in rows}
    ok = (acc["geo+inst"] >= acc["geo"] >= acc["fixedn:5"] and acc["geo+inst"] >= acc["causal"]
          and acc["geo+inst"] - acc["causal"] >= 2.0 and elapsed < 1800)
    per_seed = "; ".join(f"{r} " + " ".join(f"{100 * c[2]:.1f}" for c in cells if c[0] == r) for r in rows)
    means = ", ".join(f"{r} {acc[r]:.2f}" for r in rows)
    report(8, ok, f"mean accuracy % {means}; gap geo+inst - causal {acc['geo+inst'] - acc['causal']:.2f} (>= 2); "
                  f"{elapsed:.0f}s (< 1800s); per seed: {per_seed}")


def test_criterion_9_bench(report):
    rows = run_bench(sizes=(64, 128, 256, 512), strategies=[MaskStrategy("geo")], trials=20, warmup=3)
    dense_ok = all(r.density <= 11 / r.N for r in rows)
    fast_ok = all(r.sparse_seconds < r.dense_seconds for r in rows if r.N >= 256)
    detail = ", ".join(f"N={r.N} density {r.density:.3f}/{11 / r.N:.3f} sparse {1e3 * r.sparse_seconds:.2f}ms "
                       f"dense {1e3 * r.dense_seconds:.2f}ms" for r in rows)
    report(9, dense_ok and fast_ok, detail)
