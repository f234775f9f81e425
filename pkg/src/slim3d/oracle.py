"""Naive reference construction of attention masks.

Deliberately written with scalar loops and full sorts, sharing no code with
``geo`` or ``masks``; it exists only to be compared against them.
"""

import math

from .masks import AttentionMask


def _distance(a, b):
    s = 0.0
    for u, v in zip(a, b):
        s += (float(u) - float(v)) ** 2
    return math.sqrt(s)


def oracle_distances(centers):
    n = len(centers)
    return [[0.0 if i == j else _distance(centers[i], centers[j]) for j in range(n)]
            for i in range(n)]


def oracle_density(centers):
    n = len(centers)
    d = oracle_distances(centers)
    if n == 1:
        return [1.0], [1.0]
    rho = []
    for i in range(n):
        total = 0.0
        for j in range(n):
            if j != i:
                total += d[i][j]
        rho.append(1.0 - total / (n - 1))
    lo, hi = min(rho), max(rho)
    if lo == hi:
        return rho, [1.0] * n
    return rho, [(r - lo) / (hi - lo) for r in rho]


def oracle_neighbor_counts(centers, k_min, k_max):
    n = len(centers)
    _, rho_norm = oracle_density(centers)
    ks = []
    for r in rho_norm:
        x = (k_max - k_min) * r + k_min
        k = math.floor(x + 0.5)  # x >= 0, so this is half-away-from-zero
        ks.append(max(0, min(k, n - 1)))
    return ks


def oracle_nearest(centers, i, k, d=None):
    if d is None:
        d = oracle_distances(centers)
    others = [j for j in range(len(centers)) if j != i]
    others.sort(key=lambda j: (d[i][j], j))
    return set(others[:k])


def oracle_object_rules(variant, centers, k_min, k_max, n_fixed):
    """``allowed[i][j]`` for every object pair under a non-causal variant."""
    n = len(centers)
    d = oracle_distances(centers)
    if variant == "full":
        return [[True] * n for _ in range(n)]
    if variant == "diag":
        return [[i == j for j in range(n)] for i in range(n)]
    if variant == "fixedn":
        ks = [min(n_fixed, n - 1)] * n
    elif variant == "geo":
        ks = oracle_neighbor_counts(centers, k_min, k_max)
    else:
        raise ValueError(variant)
    table = []
    for i in range(n):
        near = oracle_nearest(centers, i, ks[i], d)
        table.append([i == j or j in near for j in range(n)])
    return table


def oracle_mask(scene, layout, variant="geo", inst=False, k_min=2, k_max=10, n_fixed=5):
    """Reference mask evaluated entry by entry from the masking rules."""
    n = layout.n_system + layout.n_objects * layout.tokens_per_object \
        + layout.n_instruction + layout.n_response
    obj_start = layout.n_system
    obj_stop = obj_start + layout.n_objects * layout.tokens_per_object
    inst_stop = obj_stop + layout.n_instruction
    centers = [] if scene is None else [tuple(c) for c in scene.centers]

    rules = None
    if variant not in ("causal", "fullall") and centers:
        rules = oracle_object_rules(variant, centers, k_min, k_max, n_fixed)
    t = layout.tokens_per_object

    rows = []
    for p in range(n):
        row = []
        for q in range(n):
            if variant == "fullall":
                ok = True
            else:
                ok = q <= p
                p_obj = obj_start <= p < obj_stop
                q_obj = obj_start <= q < obj_stop
                if p_obj and q_obj and variant != "causal":
                    ok = rules[(p - obj_start) // t][(q - obj_start) // t]
                if inst and p_obj and obj_stop <= q < inst_stop:
                    ok = True
            row.append(ok)
        rows.append(row)
    return AttentionMask(rows, layout)


def oracle_geo_mask(scene, layout, params):
    """Geo + Inst reference mask with bounds ``params.k_min``/``params.k_max``."""
    return oracle_mask(scene, layout, "geo", inst=True, k_min=params.k_min, k_max=params.k_max)


def oracle_strategy_mask(scene, layout, strategy):
    return oracle_mask(scene, layout, strategy.variant, strategy.inst,
                       strategy.geo.k_min, strategy.geo.k_max, strategy.n_fixed)
