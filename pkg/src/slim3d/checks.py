"""Verification suites: oracle equivalence, geometric invariances, gradients.

Each suite returns a :class:`SuiteResult`; a failing case carries enough
text (scene file, layout, strategy, seed) to replay it by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import (DecoderConfig, DecoderParams, SequenceBatch, corrupt_gradient,
                      grad_check)
from .geo import GeoParams, geo_neighbors, geo_object_mask
from .masks import MaskStrategy, compose, parse_strategy
from .oracle import oracle_strategy_mask
from .scene import SceneObjects, TokenLayout, format_layout, format_scene, segment_spans

CHECK_STRATEGIES = ("causal", "fullall", "full", "diag", "fixedn:5", "geo",
                    "causal+inst", "full+inst", "diag+inst", "fixedn:5+inst", "geo+inst")


@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_cases: int
    detail: str = ""
    replay: str = ""

    def line(self) -> str:
        status = "ok" if self.passed else "FAILED"
        return f"{self.name}: {status} ({self.n_cases} cases){' ' + self.detail if self.detail else ''}"


@dataclass
class CheckReport:
    suites: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def text(self) -> str:
        lines = [s.line() for s in self.suites]
        for s in self.suites:
            if not s.passed and s.replay:
                lines += [f"-- replay for {s.name} --", s.replay.rstrip()]
        lines.append("all suites passed" if self.passed else "verification FAILED")
        return "\n".join(lines) + "\n"


def random_scene(rng, N: int) -> SceneObjects:
    """Gaussian blobs of varying spread; continuous coordinates make distance ties a null event."""
    n_blobs = int(rng.integers(1, 5))
    anchors = rng.normal(size=(n_blobs, 3)) * rng.uniform(2.0, 10.0)
    which = rng.integers(0, n_blobs, size=N)
    spread = rng.uniform(0.2, 2.0, size=n_blobs)[which, None]
    centers = anchors[which] + rng.normal(size=(N, 3)) * spread
    return SceneObjects([f"o{i}" for i in range(N)], centers)


def random_layout(rng, N: int) -> TokenLayout:
    return TokenLayout(n_system=int(rng.integers(0, 4)), n_objects=N,
                       tokens_per_object=int(rng.integers(1, 3)),
                       n_instruction=int(rng.integers(0, 5)), n_response=int(rng.integers(0, 3)))


def _replay(scene, layout, strategy, seed, case):
    return (f"seed={seed} case={case} strategy={strategy.name} "
            f"kmin={strategy.geo.k_min} kmax={strategy.geo.k_max}\n"
            + format_layout(layout) + format_scene(scene))


def oracle_suite(cases: int = 1000, seed: int = 0, max_objects: int = 64) -> SuiteResult:
    """``compose`` against the entrywise oracle, cycling through every strategy."""
    rng = np.random.default_rng([seed, 1])
    for case in range(cases):
        N = int(rng.integers(1, max_objects + 1))
        scene = random_scene(rng, N)
        layout = random_layout(rng, N)
        spec = CHECK_STRATEGIES[case % len(CHECK_STRATEGIES)]
        k_min = int(rng.integers(0, 4))
        strategy = parse_strategy(spec, k_min=k_min, k_max=k_min + int(rng.integers(0, 12)))
        if compose(scene, layout, strategy) != oracle_strategy_mask(scene, layout, strategy):
            return SuiteResult("oracle", False, case + 1, "mask differs from oracle",
                               _replay(scene, layout, strategy, seed, case))
    return SuiteResult("oracle", True, cases)


def invariance_suite(cases: int = 200, seed: int = 0, max_objects: int = 40) -> SuiteResult:
    """Neighbor sets survive rigid motion and scaling; masks permute with the objects."""
    from scipy.spatial.transform import Rotation

    rng = np.random.default_rng([seed, 2])
    params = GeoParams()
    for case in range(cases):
        N = int(rng.integers(2, max_objects + 1))
        scene = random_scene(rng, N)
        R = Rotation.random(random_state=int(rng.integers(2**31))).as_matrix()
        moved = scene.transformed(R, rng.normal(size=3) * 20, float(np.exp(rng.uniform(np.log(0.1), np.log(10)))))
        p0, o0 = geo_neighbors(scene, params)
        p1, o1 = geo_neighbors(moved, params)
        if o0 != o1 or not np.allclose(p0.rho_norm, p1.rho_norm, rtol=0, atol=1e-9):
            return SuiteResult("invariance", False, case + 1, "rigid/scale motion changed neighbors",
                               _replay(scene, TokenLayout(n_objects=N), MaskStrategy("geo"), seed, case))
        perm = rng.permutation(N)
        m0 = geo_object_mask(o0, N)
        m1 = geo_object_mask(geo_neighbors(scene.permuted(perm), params)[1], N)
        if not np.array_equal(m1, m0[np.ix_(perm, perm)]):
            return SuiteResult("invariance", False, case + 1, "mask not permutation equivariant",
                               _replay(scene, TokenLayout(n_objects=N), MaskStrategy("geo"), seed, case))
    return SuiteResult("invariance", True, cases)


def tiny_problem(strategy: MaskStrategy, seed: int = 0, n_objects: int = 5, d_model: int = 8,
                 n_heads: int = 2, n_layers: int = 2, batch: int = 2):
    """A small decoder and batch for gradient checks under ``strategy``."""
    rng = np.random.default_rng([seed, 3])
    layout = TokenLayout(n_system=1, n_objects=n_objects, tokens_per_object=1,
                         n_instruction=2, n_response=2)
    vocab = 12
    cfg = DecoderConfig(vocab_size=vocab, d_model=d_model, n_heads=n_heads, d_head=d_model // n_heads,
                        n_layers=n_layers, d_ff=2 * d_model, max_positions=layout.n, feature_dim=3)
    params = DecoderParams.init(cfg, seed=seed)
    allow, ids, feats = [], [], []
    obj = segment_spans(layout).object_segment
    for _ in range(batch):
        scene = random_scene(rng, n_objects)
        allow.append(compose(scene, layout, strategy).allow)
        ids.append(rng.integers(0, vocab, size=layout.n))
        f = np.zeros((layout.n, 3))
        f[obj.start:obj.stop] = scene.centers / 5.0
        feats.append(f)
    targets = rng.integers(0, vocab, size=(batch, layout.n_response))
    return params, SequenceBatch(np.array(ids), layout, np.array(allow), np.array(feats), targets)


def gradient_suite(seed: int = 0, inject_fault: bool = False, tolerance: float = 1e-4,
                   epsilon: float = 1e-5, strategies=CHECK_STRATEGIES) -> SuiteResult:
    worst = 0.0
    for spec in strategies:
        strategy = parse_strategy(spec)
        params, batch = tiny_problem(strategy, seed)
        corrupt = corrupt_gradient("l0.Wv") if inject_fault else None
        report = grad_check(params, batch, epsilon=epsilon, tolerance=tolerance,
                            max_per_param=None, seed=seed, corrupt=corrupt, strict=False)
        worst = max(worst, report.max_error)
        if not report.passed:
            return SuiteResult("gradient", False, len(strategies),
                               f"under {spec}", f"seed={seed} strategy={spec}\n" + report.summary())
    return SuiteResult("gradient", True, len(strategies), f"max rel err {worst:.2e}")


def run_checks(seed: int = 0, cases: int = 1000, inject_fault: bool = False) -> CheckReport:
    report = CheckReport()
    report.suites.append(oracle_suite(cases, seed))
    report.suites.append(invariance_suite(max(1, cases // 5), seed))
    report.suites.append(gradient_suite(seed, inject_fault))
    return report
