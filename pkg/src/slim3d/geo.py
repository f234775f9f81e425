"""Density-adaptive neighborhoods between objects (the Geo mask).

Every object gets a local density from its mean distance to all other
objects. Densities are min-max normalised over the scene and mapped linearly
onto a neighbor budget in ``[k_min, k_max]``; an object then attends to
itself plus its ``k_i`` nearest objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .scene import SceneObjects


@dataclass(frozen=True)
class GeoParams:
    k_min: int = 2
    k_max: int = 10

    def __post_init__(self):
        if self.k_min < 0 or self.k_max < 0:
            raise ConfigurationError("neighbor bounds must be nonnegative")
        if self.k_min > self.k_max:
            raise ConfigurationError(f"k_min={self.k_min} exceeds k_max={self.k_max}")


@dataclass(frozen=True)
class DensityProfile:
    rho: np.ndarray
    rho_norm: np.ndarray
    k: np.ndarray
    pairwise_d: np.ndarray


def pairwise_distances(scene_or_centers) -> np.ndarray:
    """Euclidean distance matrix between object centers."""
    c = getattr(scene_or_centers, "centers", scene_or_centers)
    c = np.asarray(c, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    # exact symmetry regardless of rounding in the subtraction
    d = np.minimum(d, d.T)
    np.fill_diagonal(d, 0.0)
    return d


def local_density(d: np.ndarray):
    """Return ``(rho, rho_norm)`` for a pairwise distance matrix.

    ``rho_i = 1 - mean_{j != i} d_ij``. When all densities coincide (which
    includes a single object) ``rho_norm`` is 1 everywhere, so a uniform scene
    receives the widest neighborhood allowed.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if n == 1:
        return np.ones(1), np.ones(1)
    rho = 1.0 - (d.sum(axis=1) - np.diagonal(d)) / (n - 1)
    lo, hi = rho.min(), rho.max()
    if hi == lo:
        return rho, np.ones(n)
    rho_norm = (rho - lo) / (hi - lo)
    return rho, np.clip(rho_norm, 0.0, 1.0)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def adaptive_k(rho_norm, params: GeoParams, N: int) -> np.ndarray:
    """Per-object neighbor budget, clamped to the ``N - 1`` available objects."""
    raw = (params.k_max - params.k_min) * np.asarray(rho_norm, dtype=np.float64) + params.k_min
    return np.clip(round_half_away(raw), 0, max(N - 1, 0)).astype(np.int64)


def topk_neighbors(d: np.ndarray, k) -> list:
    """Indices of the ``k[i]`` nearest other objects for each row.

    Ties in distance go to the lower object index.
    """
    d = np.array(d, dtype=np.float64)
    n = d.shape[0]
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), (n,))
    if np.any(k > n - 1) or np.any(k < 0):
        raise ConfigurationError(f"neighbor counts must lie in [0, {n - 1}]")
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=1, kind="stable")
    return [frozenset(order[i, :k[i]].tolist()) for i in range(n)]


def geo_object_mask(omega, N: int) -> np.ndarray:
    """Object-level allow matrix: self plus the neighbor set of each row."""
    allow = np.eye(N, dtype=bool)
    for i, nbrs in enumerate(omega):
        if nbrs:
            allow[i, list(nbrs)] = True
    return allow


def density_profile(scene: SceneObjects, params: GeoParams = GeoParams()) -> DensityProfile:
    d = pairwise_distances(scene)
    rho, rho_norm = local_density(d)
    k = adaptive_k(rho_norm, params, scene.N)
    return DensityProfile(rho=rho, rho_norm=rho_norm, k=k, pairwise_d=d)


def geo_neighbors(scene: SceneObjects, params: GeoParams = GeoParams()):
    prof = density_profile(scene, params)
    return prof, topk_neighbors(prof.pairwise_d, prof.k)


def knn_object_mask(scene: SceneObjects, k) -> np.ndarray:
    """Plain k-nearest-neighbor object mask with a constant ``k`` (clamped to N-1)."""
    n = scene.N
    kk = min(int(k), n - 1)
    return geo_object_mask(topk_neighbors(pairwise_distances(scene), np.full(n, kk)), n)
