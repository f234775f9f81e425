"""Synthetic clustered scenes and a desk-scale grounding task on top of them.

Two arrangements are available. ``ring`` spreads equally ranked clusters
around a circle. ``hub`` puts one large dense cluster in the middle with
small satellite clusters around it, which gives the scene the mix of dense
and sparse regions that the density-adaptive mask reacts to. Either way the
object order is shuffled so that it carries no geometric signal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GenerationError, SceneFormatError
from .masks import MaskStrategy, compose
from .scene import SceneObjects, TokenLayout, segment_spans

# quasi-irrational jitter steps; make exact distance ties a measure-zero event
_JITTER_STEPS = np.array([math.sqrt(2.0) - 1.0, math.sqrt(3.0) - 1.0, math.sqrt(5.0) - 2.0])

ARRANGEMENTS = ("ring", "hub")

# squared distances must stay finite
_MAX_EXTENT = 1e150


@dataclass(frozen=True)
class SceneRecipe:
    n_clusters: int = 3
    objects_per_cluster: tuple = (3, 8)
    cluster_radius: float = 1.0
    cluster_spacing: float = 6.0
    outlier_count: int = 2
    seed: int = 0
    # when set, the total object count is fixed: in a ring the cluster sizes are
    # redrawn until they fit, in a hub the central cluster takes the remainder
    n_objects: int | None = None
    z_extent: float = 0.5
    arrangement: str = "ring"
    # the whole scene is shifted by a uniform offset in [-translation, translation] along x and y
    translation: float = 0.0
    # explicit ring cluster sizes, placed around the ring in random order; overrides objects_per_cluster
    cluster_sizes: tuple | None = None

    def __post_init__(self):
        lo, hi = self.objects_per_cluster
        if self.arrangement not in ARRANGEMENTS:
            raise ConfigurationError(f"unknown arrangement {self.arrangement!r}")
        if self.n_clusters < 1 and self.outlier_count < 1:
            raise ConfigurationError("recipe produces no objects")
        if self.n_clusters < 0 or self.outlier_count < 0 or self.translation < 0:
            raise ConfigurationError("counts and translation must be nonnegative")
        if not 1 <= lo <= hi:
            raise ConfigurationError("objects_per_cluster must be a range 1 <= lo <= hi")
        if self.cluster_radius <= 0 or self.cluster_spacing <= 0:
            raise ConfigurationError("cluster_radius and cluster_spacing must be positive")
        if self.cluster_sizes is not None:
            if self.arrangement != "ring" or len(self.cluster_sizes) != self.n_clusters:
                raise ConfigurationError("cluster_sizes needs a ring with one size per cluster")
            if min(self.cluster_sizes, default=1) < 1:
                raise ConfigurationError("cluster sizes must be positive")
            if self.n_objects is not None and self.n_objects != sum(self.cluster_sizes) + self.outlier_count:
                raise ConfigurationError("n_objects disagrees with cluster_sizes plus outliers")
        elif self.n_objects is not None:
            n = self.n_objects - self.outlier_count
            if self.arrangement == "hub":
                ok = self.n_clusters >= 1 and n - (self.n_clusters - 1) * hi >= 1
            else:
                ok = self.n_clusters * lo <= n <= self.n_clusters * hi
            if not ok:
                raise ConfigurationError(
                    f"n_objects={self.n_objects} unreachable with {self.n_clusters} clusters of {lo}..{hi}")
        elif self.arrangement == "hub":
            raise ConfigurationError("a hub arrangement needs n_objects")

    def with_seed(self, seed: int) -> "SceneRecipe":
        return SceneRecipe(**{**self.__dict__, "seed": seed})


@dataclass(frozen=True)
class GeneratedScene:
    scene: SceneObjects
    labels: np.ndarray  # cluster index per object, -1 for outliers
    anchors: np.ndarray
    recipe: SceneRecipe

    @property
    def N(self) -> int:
        return self.scene.N


def _cluster_sizes(recipe: SceneRecipe, rng) -> list:
    lo, hi = recipe.objects_per_cluster
    if recipe.cluster_sizes is not None:
        return [int(x) for x in rng.permutation(np.array(recipe.cluster_sizes))]
    if recipe.arrangement == "hub":
        satellites = rng.integers(lo, hi + 1, size=recipe.n_clusters - 1)
        return [recipe.n_objects - recipe.outlier_count - int(satellites.sum())] + satellites.tolist()
    if recipe.n_objects is None:
        return [int(rng.integers(lo, hi + 1)) for _ in range(recipe.n_clusters)]
    target = recipe.n_objects - recipe.outlier_count
    for _ in range(1000):
        sizes = rng.integers(lo, hi + 1, size=recipe.n_clusters)
        if sizes.sum() == target:
            return sizes.tolist()
    # rejection failed; distribute deterministically around the mean
    sizes = np.full(recipe.n_clusters, lo)
    for i in rng.permutation(np.repeat(np.arange(recipe.n_clusters), hi - lo))[: target - sizes.sum()]:
        sizes[i] += 1
    return sizes.tolist()


def _ball(rng, n, radius, z_frac):
    out = np.empty((n, 3))
    i = 0
    while i < n:
        p = rng.uniform(-1.0, 1.0, 3)
        if p @ p <= 1.0:
            out[i] = p
            i += 1
    out[:, 2] *= z_frac
    return out * radius


def _ring_anchors(recipe, rng):
    C = recipe.n_clusters
    # ring radius keeps neighboring anchors >= cluster_spacing apart under the angle jitter
    ring = 1.25 * recipe.cluster_spacing / (2 * math.sin(math.pi / C)) if C > 1 else 0.0
    ring = max(ring, recipe.cluster_spacing)
    jitter = 0.08 * (2 * math.pi / max(C, 1))
    anchors = []
    for c in range(C):
        theta = 2 * math.pi * c / C + rng.uniform(-jitter, jitter)
        r = ring * rng.uniform(1.0, 1.15)
        anchors.append([r * math.cos(theta), r * math.sin(theta), 0.0])
    return np.array(anchors).reshape(-1, 3), ring


def _hub_anchors(recipe, rng):
    S = recipe.n_clusters - 1
    spacing = recipe.cluster_spacing
    # satellites around the hub; the circle is widened when they would crowd each other
    radius = max(spacing, 1.25 * spacing / (2 * math.sin(math.pi / S)) if S > 1 else spacing)
    base = rng.uniform(0, 2 * math.pi)
    jitter = 0.2 * (2 * math.pi / max(S, 1)) / 2
    anchors = [[0.0, 0.0, 0.0]]
    for s in range(S):
        theta = base + 2 * math.pi * s / S + rng.uniform(-jitter, jitter)
        r = radius * rng.uniform(1.0, 1.3)
        anchors.append([r * math.cos(theta), r * math.sin(theta), 0.0])
    return np.array(anchors), radius * 1.3


def generate_labeled_scene(recipe: SceneRecipe) -> GeneratedScene:
    rng = np.random.default_rng(recipe.seed)
    C = recipe.n_clusters
    extent = 4.0 * (max(C, 1) + 2) * (recipe.cluster_spacing + recipe.cluster_radius) + recipe.translation
    if not extent < _MAX_EXTENT:
        raise GenerationError(f"recipe needs coordinates around {extent:.3g}, beyond the supported range")
    sizes = _cluster_sizes(recipe, rng)
    anchors, ring = (_hub_anchors if recipe.arrangement == "hub" else _ring_anchors)(recipe, rng)
    if C > 1:
        da = np.linalg.norm(anchors[:, None] - anchors[None], axis=-1)
        np.fill_diagonal(da, np.inf)
        if da.min() < recipe.cluster_spacing:
            raise GenerationError("anchors closer than the requested spacing")

    pts, labels = [], []
    for c, size in enumerate(sizes):
        pts.append(anchors[c] + _ball(rng, size, recipe.cluster_radius, recipe.z_extent))
        labels += [c] * size
    # outliers: beyond the clusters, away from every anchor
    far = ring + recipe.cluster_spacing if C else recipe.cluster_spacing
    for _ in range(recipe.outlier_count):
        for _attempt in range(1000):
            theta = rng.uniform(0, 2 * math.pi)
            r = rng.uniform(far, far + recipe.cluster_spacing)
            p = np.array([r * math.cos(theta), r * math.sin(theta),
                          rng.uniform(-1, 1) * recipe.cluster_radius * recipe.z_extent])
            if C == 0 or np.linalg.norm(anchors - p, axis=1).min() >= recipe.cluster_spacing:
                break
        else:
            raise GenerationError("could not place an outlier far from every anchor")
        pts.append(p[None])
        labels.append(-1)
    centers = np.concatenate(pts)
    labels = np.array(labels)
    if not np.all(np.isfinite(centers)):
        raise GenerationError("cluster spacing is too large for floating point coordinates")
    n = len(centers)
    centers = centers + 1e-9 * np.mod(np.arange(1, n + 1)[:, None] * _JITTER_STEPS, 1.0)
    if recipe.translation > 0:
        shift = np.zeros(3)
        shift[:2] = rng.uniform(-recipe.translation, recipe.translation, 2)
        centers = centers + shift
        anchors = anchors + shift
    order = rng.permutation(n)
    ids = [f"OBJ{i:03d}" for i in range(n)]
    return GeneratedScene(SceneObjects(ids, centers[order]), labels[order], anchors, recipe)


def generate_scene(recipe: SceneRecipe) -> SceneObjects:
    return generate_labeled_scene(recipe).scene


# -- recipe files -------------------------------------------------------------

def parse_recipe(text: str) -> SceneRecipe:
    """``key=value`` lines; ``objects_per_cluster`` is written ``lo..hi`` or ``lo,hi``,
    ``cluster_sizes`` as a comma-separated list."""
    kinds = {f.name: f.type for f in fields(SceneRecipe)}
    values = {}
    for lineno, ln in enumerate(text.splitlines(), 1):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, sep, val = ln.partition("=")
        key, val = key.strip(), val.strip()
        if not sep or key not in kinds:
            raise SceneFormatError(f"unexpected recipe entry {ln!r}", line=lineno)
        try:
            if key == "objects_per_cluster":
                lo, hi = val.replace("..", ",").split(",")
                values[key] = (int(lo), int(hi))
            elif key in ("cluster_radius", "cluster_spacing", "z_extent", "translation"):
                values[key] = float(val)
            elif key == "cluster_sizes":
                values[key] = None if val.lower() in ("", "none") else tuple(int(x) for x in val.split(","))
            elif key == "arrangement":
                values[key] = val
            elif key == "n_objects":
                values[key] = None if val.lower() in ("", "none") else int(val)
            else:
                values[key] = int(val)
        except ValueError:
            raise SceneFormatError(f"bad value {val!r}", line=lineno, field=key) from None
    return SceneRecipe(**values)


def format_recipe(recipe: SceneRecipe) -> str:
    lo, hi = recipe.objects_per_cluster
    lines = [f"n_clusters={recipe.n_clusters}", f"objects_per_cluster={lo}..{hi}",
             f"cluster_radius={recipe.cluster_radius!r}", f"cluster_spacing={recipe.cluster_spacing!r}",
             f"outlier_count={recipe.outlier_count}", f"seed={recipe.seed}",
             f"n_objects={'none' if recipe.n_objects is None else recipe.n_objects}",
             f"z_extent={recipe.z_extent!r}", f"arrangement={recipe.arrangement}",
             f"translation={recipe.translation!r}",
             "cluster_sizes=" + ("none" if recipe.cluster_sizes is None
                                 else ",".join(str(x) for x in recipe.cluster_sizes))]
    return "\n".join(lines) + "\n"


def load_recipe(path) -> SceneRecipe:
    return parse_recipe(Path(path).read_text(encoding="utf-8"))


# -- grounding task -----------------------------------------------------------

TASK_KINDS = ("salient", "anchor")


@dataclass(frozen=True)
class Vocab:
    """Token ids: system, answer cue, object identifiers, cluster and rank words."""

    max_objects: int
    n_clusters: int
    ranks: tuple = (0,)
    n_system: int = 1

    @property
    def sys0(self):
        return 0

    @property
    def answer(self):
        return self.n_system

    def obj(self, i):
        return self.n_system + 1 + i

    def cluster(self, c):
        return self.n_system + 1 + self.max_objects + c

    def rank(self, r):
        return self.n_system + 1 + self.max_objects + self.n_clusters + self.ranks.index(r)

    @property
    def size(self):
        return self.n_system + 1 + self.max_objects + self.n_clusters + len(self.ranks)


@dataclass(frozen=True)
class GroundingTask:
    """One referring-expression example: which object does ``(cluster, rank)`` denote?

    Clusters are named by category: each one holds a single landmark object
    carrying its category, and ``labels`` are given in category ids. ``keys``
    order the members of a cluster, rank 0 first and rank -1 last.
    """

    scene: SceneObjects
    labels: np.ndarray
    cluster: int
    rank: int
    target: int
    seed: int
    landmarks: np.ndarray  # category id of each landmark object, -1 elsewhere
    salience: np.ndarray
    keys: np.ndarray
    kind: str = "salient"

    def layout(self, vocab: Vocab) -> TokenLayout:
        return TokenLayout(n_system=vocab.n_system, n_objects=self.scene.N,
                           tokens_per_object=1, n_instruction=2, n_response=1)

    def token_ids(self, vocab: Vocab) -> np.ndarray:
        return np.array([vocab.sys0 + i for i in range(vocab.n_system)]
                        + [vocab.obj(i) for i in range(self.scene.N)]
                        + [vocab.cluster(self.cluster), vocab.rank(self.rank), vocab.answer])


def resolve_descriptor(keys, labels, cluster, rank, margin=0.0):
    """Index of the object a ``(cluster, rank)`` descriptor denotes, or ``None`` if ambiguous.

    Members of ``cluster`` are sorted by ``keys`` in ascending order. The
    descriptor is ambiguous when the chosen member is not separated from its
    neighbors in that order by more than ``margin``.
    """
    keys = np.asarray(keys, dtype=np.float64)
    members = np.flatnonzero(np.asarray(labels) == cluster)
    if members.size == 0:
        return None
    order = np.argsort(keys[members], kind="stable")
    pos = rank if rank >= 0 else members.size + rank
    if not 0 <= pos < members.size:
        return None
    k_sorted = keys[members][order]
    gaps = [np.inf]
    if pos > 0:
        gaps.append(k_sorted[pos] - k_sorted[pos - 1])
    if pos < members.size - 1:
        gaps.append(k_sorted[pos + 1] - k_sorted[pos])
    if min(gaps) <= margin:
        return None
    return int(members[order[pos]])


def landmark_indices(centers, labels, anchors) -> dict:
    """Cluster label -> index of the member nearest that cluster's anchor."""
    centers = np.asarray(centers, dtype=np.float64)
    out = {}
    for c in sorted(set(np.asarray(labels)[np.asarray(labels) >= 0].tolist())):
        members = np.flatnonzero(labels == c)
        out[c] = int(members[np.argmin(np.linalg.norm(centers[members] - anchors[c], axis=1))])
    return out


def _annotate(scene_obj, labels, anchors, kind, rng, decoys=0):
    """Rename clusters by a random category permutation, pick landmarks and salient members.

    The landmark of a cluster is its member nearest the anchor. For
    ``salient`` tasks the salient member is the one farthest from the
    landmark, so in a large cluster the cue sits several neighbors away.
    ``decoys`` clusters, drawn from those smaller than the largest, keep a
    salient member but lose their landmark and category, so a salient object
    with no landmark nearby is not automatically in the largest cluster.
    """
    n_clusters = len(anchors)
    perm = rng.permutation(n_clusters)
    cat_labels = np.where(labels >= 0, perm[np.maximum(labels, 0)], -1)
    landmarks = np.full(scene_obj.N, -1)
    salience = np.zeros(scene_obj.N)
    hidden = set()
    if decoys:
        sizes = np.bincount(labels[labels >= 0], minlength=n_clusters)
        small = np.flatnonzero(sizes < sizes.max())
        if small.size < decoys:
            raise ConfigurationError(f"{decoys} decoys need as many clusters below the largest size")
        hidden = set(rng.choice(small, size=decoys, replace=False).tolist())
        cat_labels[np.isin(labels, list(hidden))] = -1
    for c, idx in landmark_indices(scene_obj.centers, labels, anchors).items():
        if c not in hidden:
            landmarks[idx] = perm[c]
        others = np.flatnonzero((labels == c) & (np.arange(scene_obj.N) != idx))
        if kind == "salient" and others.size:
            dist = np.linalg.norm(scene_obj.centers[others] - scene_obj.centers[idx], axis=1)
            salience[others[np.argmax(dist)]] = 1.0
    if kind == "salient":
        keys = -salience
    else:
        own = np.where(labels >= 0, np.maximum(labels, 0), 0)
        keys = np.linalg.norm(scene_obj.centers - np.asarray(anchors)[own], axis=1)
    return cat_labels, landmarks, salience, keys


def generate_grounding_task(scene, seed: int, labels=None, ranks=(0,), margin=None,
                            recipe: SceneRecipe | None = None, max_tries: int = 100,
                            kind: str = "salient", anchors=None, decoys: int = 0) -> GroundingTask:
    """Draw a descriptor for ``scene`` whose answer is unique.

    ``kind="salient"`` asks for the most salient member of a cluster (one
    member per cluster, the one farthest from its landmark, is marked salient). ``kind="anchor"`` ranks members by
    distance to their cluster anchor, so ``(0, 0)`` means the object nearest
    to anchor 0.

    ``scene`` is a :class:`GeneratedScene` or a plain :class:`SceneObjects`;
    for the latter ``labels`` default to one cluster and ``anchors`` to the
    cluster centroids. ``decoys`` clusters lose their landmark and category
    (see :func:`_annotate`). If every descriptor is ambiguous and a ``recipe``
    is known, a fresh scene is drawn from the next seed.
    """
    if kind not in TASK_KINDS:
        raise ConfigurationError(f"unknown task kind {kind!r}")
    if isinstance(scene, GeneratedScene):
        labels = scene.labels if labels is None else labels
        anchors = scene.anchors if anchors is None else anchors
        recipe = recipe or scene.recipe
        scene_obj = scene.scene
    else:
        scene_obj = scene
    if scene_obj.N < 2:
        raise ConfigurationError("a grounding task needs at least two objects")
    labels = np.zeros(scene_obj.N, dtype=np.int64) if labels is None else np.asarray(labels)

    def centroids(lab):
        return np.array([scene_obj.centers[lab == c].mean(axis=0) for c in range(lab.max() + 1)])

    anchors = centroids(labels) if anchors is None else np.asarray(anchors, dtype=np.float64)
    if margin is None:
        margin = 0.05 * (recipe.cluster_radius if recipe else 1.0)
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        cat_labels, landmarks, salience, keys = _annotate(scene_obj, labels, anchors, kind, rng, decoys)
        clusters = sorted(set(cat_labels[cat_labels >= 0].tolist()))
        c = int(rng.choice(clusters))
        r = int(rng.choice(ranks))
        target = resolve_descriptor(keys, cat_labels, c, r, margin)
        if target is not None and (kind == "anchor" or landmarks[target] < 0):
            return GroundingTask(scene_obj, cat_labels, c, r, target, seed, landmarks, salience, keys, kind)
        if recipe is not None and attempt % 4 == 3:
            g = generate_labeled_scene(recipe.with_seed(recipe.seed + 7919 * (attempt + 1)))
            scene_obj, labels, anchors = g.scene, g.labels, g.anchors
    raise GenerationError("no unambiguous descriptor found")


@dataclass
class TaskSet:
    tasks: list
    vocab: Vocab
    layout: TokenLayout
    token_ids: np.ndarray
    features: np.ndarray
    targets: np.ndarray
    candidates: np.ndarray
    _masks: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.tasks)

    def masks(self, strategy: MaskStrategy) -> np.ndarray:
        key = strategy.name, strategy.geo
        if key not in self._masks:
            self._masks[key] = np.stack(
                [compose(t.scene, self.layout, strategy).allow for t in self.tasks])
        return self._masks[key]


def object_features(task: GroundingTask, scale: float, n_categories: int) -> np.ndarray:
    """Per-object input vector: scaled center, salience, one-hot landmark category."""
    N = task.scene.N
    out = np.zeros((N, 4 + n_categories))
    out[:, :3] = task.scene.centers / scale
    out[:, 3] = task.salience
    is_land = task.landmarks >= 0
    out[np.flatnonzero(is_land), 4 + task.landmarks[is_land]] = 1.0
    return out


def build_task_set(recipe: SceneRecipe, n_tasks: int, seed: int, ranks=(0,),
                   feature_scale: float | None = None, kind: str = "salient", decoys: int = 0) -> TaskSet:
    """Generate ``n_tasks`` grounding examples from ``recipe`` with scene seeds derived from ``seed``."""
    if recipe.n_objects is None:
        raise ConfigurationError("task sets need a recipe with a fixed n_objects")
    tasks = []
    for i in range(n_tasks):
        g = generate_labeled_scene(recipe.with_seed(int(np.random.default_rng([seed, i]).integers(2**31))))
        tasks.append(generate_grounding_task(g, seed=seed * 1_000_003 + i, ranks=ranks, kind=kind,
                                             decoys=decoys))
    N = recipe.n_objects
    vocab = Vocab(max_objects=N, n_clusters=recipe.n_clusters, ranks=tuple(ranks))
    layout = tasks[0].layout(vocab)
    spans = segment_spans(layout)
    obj = spans.object_segment
    word = spans.instruction.start  # the cluster word shares the landmark category channels
    token_ids = np.stack([t.token_ids(vocab) for t in tasks])
    scale = recipe.cluster_spacing if feature_scale is None else feature_scale
    features = np.zeros((n_tasks, layout.n, 4 + recipe.n_clusters))
    for b, t in enumerate(tasks):
        features[b, obj.start:obj.stop] = object_features(t, scale, recipe.n_clusters)
        features[b, word, 4 + t.cluster] = 1.0
    targets = np.array([[vocab.obj(t.target)] for t in tasks])
    candidates = np.array([vocab.obj(i) for i in range(N)])
    return TaskSet(tasks, vocab, layout, token_ids, features, targets, candidates)


# one dense central cluster with three-object satellites: the adaptive budget
# is large in the hub and small in the satellites
DEFAULT_TASK_RECIPE = SceneRecipe(n_clusters=4, objects_per_cluster=(3, 3), cluster_radius=1.0,
                                  cluster_spacing=6.0, outlier_count=0, n_objects=20,
                                  arrangement="hub", translation=6.0)
