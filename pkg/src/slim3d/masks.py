"""Full-sequence attention masks and the masking strategies compared in the ablation.

A mask is a boolean allow-matrix: ``True`` is an additive 0, ``False`` an
additive ``-inf``. Every strategy starts from the causal mask and only
rewrites the object-object block (and, with ``inst``, the
object-instruction block). ``fullall`` is the exception and opens the
whole matrix.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SceneFormatError
from .geo import GeoParams, geo_neighbors, geo_object_mask, knn_object_mask
from .scene import SceneObjects, TokenLayout, segment_spans

MASK_MAGIC = "SLIMMASK"

VARIANTS = ("causal", "fullall", "full", "diag", "fixedn", "geo")

# Table row labels used in ablation output
ROW_LABELS = {
    "causal": "A0",
    "fullall": "B0",
    "full": "C0",
    "diag": "C1",
    "fixedn": "D0",
    "geo": "D1",
}


@dataclass(frozen=True)
class MaskStrategy:
    variant: str = "geo"
    inst: bool = False
    n_fixed: int = 5
    geo: GeoParams = field(default_factory=GeoParams)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown mask variant {self.variant!r}")
        if self.variant == "fixedn" and self.n_fixed < 1:
            raise ConfigurationError("fixedn needs a positive neighbor count")

    @property
    def name(self) -> str:
        base = f"fixedn:{self.n_fixed}" if self.variant == "fixedn" else self.variant
        return base + ("+inst" if self.inst else "")

    @property
    def label(self) -> str:
        return ROW_LABELS[self.variant] + ("+I" if self.inst else "")

    def __str__(self):
        return self.name


def parse_strategy(spec: str, k_min: int = 2, k_max: int = 10, n_fixed: int = 5) -> MaskStrategy:
    """Parse ``causal | fullall | full | diag | fixedn:<k> | geo`` with optional ``+inst``."""
    text = spec.strip().lower()
    inst = False
    if text.endswith("+inst"):
        inst, text = True, text[: -len("+inst")]
    if text.startswith("fixedn"):
        _, sep, arg = text.partition(":")
        if sep:
            try:
                n_fixed = int(arg)
            except ValueError:
                raise ConfigurationError(f"bad fixedn count in {spec!r}") from None
        return MaskStrategy("fixedn", inst=inst, n_fixed=n_fixed)
    if text not in VARIANTS:
        raise ConfigurationError(
            f"cannot parse strategy {spec!r}; expected causal|fullall|full|diag|fixedn:<k>|geo[+inst]")
    return MaskStrategy(text, inst=inst, geo=GeoParams(k_min, k_max))


@dataclass(frozen=True, eq=False)
class AttentionMask:
    allow: np.ndarray
    layout: TokenLayout | None = None

    def __post_init__(self):
        a = np.array(self.allow, dtype=bool)
        if a.ndim != 2:
            raise ConfigurationError("mask must be a 2-D matrix")
        if self.layout is not None and a.shape != (self.layout.n, self.layout.n):
            raise ConfigurationError(f"mask shape {a.shape} does not match layout n={self.layout.n}")
        a.setflags(write=False)
        object.__setattr__(self, "allow", a)

    @property
    def n(self) -> int:
        return self.allow.shape[0]

    def additive(self) -> np.ndarray:
        """Float form: 0 where allowed, ``-inf`` where blocked."""
        return np.where(self.allow, 0.0, -np.inf)

    def __eq__(self, other):
        if not isinstance(other, AttentionMask):
            return NotImplemented
        return np.array_equal(self.allow, other.allow)

    def __hash__(self):
        return hash(self.allow.tobytes())


def causal_mask(n: int, layout: TokenLayout | None = None) -> AttentionMask:
    if n < 1:
        raise ConfigurationError("sequence length must be >= 1")
    return AttentionMask(np.tri(n, dtype=bool), layout)


def object_block(scene: SceneObjects, strategy: MaskStrategy) -> np.ndarray | None:
    """Object-granularity allow matrix for ``strategy``; ``None`` for causal."""
    n = scene.N
    v = strategy.variant
    if v in ("causal", "fullall"):
        return None
    if v == "full":
        return np.ones((n, n), dtype=bool)
    if v == "diag":
        return np.eye(n, dtype=bool)
    if v == "fixedn":
        return knn_object_mask(scene, strategy.n_fixed)
    _, omega = geo_neighbors(scene, strategy.geo)
    return geo_object_mask(omega, n)


def compose(scene: SceneObjects | None, layout: TokenLayout, strategy: MaskStrategy) -> AttentionMask:
    """Build the full ``n x n`` mask for a scene laid out as ``layout``."""
    if layout.n_objects > 0:
        if scene is None:
            raise ConfigurationError("layout has objects but no scene was given")
        layout.check_scene(scene)
    n = layout.n
    if strategy.variant == "fullall":
        return AttentionMask(np.ones((n, n), dtype=bool), layout)
    allow = np.tri(n, dtype=bool)
    if layout.n_objects == 0:
        return AttentionMask(allow, layout)
    spans = segment_spans(layout)
    seg = spans.object_segment
    obj = object_block(scene, strategy)
    if obj is not None:
        t = layout.tokens_per_object
        block = np.kron(obj | np.eye(layout.n_objects, dtype=bool), np.ones((t, t), dtype=bool))
        allow[seg.start:seg.stop, seg.start:seg.stop] = block
    if strategy.inst and len(spans.instruction):
        allow[seg.start:seg.stop, spans.instruction.start:spans.instruction.stop] = True
    return AttentionMask(allow, layout)


# -- statistics -------------------------------------------------------------

SEGMENTS = ("sys", "obj", "inst", "resp")


def sparsity_stats(mask: AttentionMask) -> dict:
    """Allowed-entry counts per segment block plus object-block density.

    ``neighbor_hist`` counts, for each object, how many *other* objects its
    first token may attend to (``k_i`` under the Geo strategy).
    """
    a = mask.allow
    layout = mask.layout or TokenLayout(n_system=0, n_objects=0, n_instruction=mask.n)
    spans = segment_spans(layout)
    ranges = dict(zip(SEGMENTS, (spans.system, spans.object_segment, spans.instruction, spans.response)))
    blocks = {}
    for rname, r in ranges.items():
        for cname, c in ranges.items():
            blocks[f"{rname}->{cname}"] = int(a[r.start:r.stop, c.start:c.stop].sum())
    seg = ranges["obj"]
    n_obj = layout.n_objects
    stats = {
        "n": mask.n,
        "total_allowed": int(a.sum()),
        "density": float(a.sum()) / mask.n ** 2,
        "blocks": blocks,
        "object_block_allowed": blocks["obj->obj"],
        "object_block_density": (blocks["obj->obj"] / len(seg) ** 2) if len(seg) else 0.0,
        "neighbor_hist": {},
    }
    if n_obj:
        t = layout.tokens_per_object
        firsts = np.arange(seg.start, seg.stop, t)
        obj_level = a[np.ix_(firsts, firsts)]
        k = obj_level.sum(axis=1) - np.diagonal(obj_level)
        stats["neighbor_hist"] = dict(sorted(Counter(k.tolist()).items()))
        stats["mean_k"] = float(k.mean())
    return stats


def format_stats_line(stats: dict) -> str:
    hist = " ".join(f"{k}:{v}" for k, v in stats["neighbor_hist"].items())
    return (f"n={stats['n']} allowed={stats['total_allowed']} density={stats['density']:.4f} "
            f"obj_allowed={stats['object_block_allowed']} "
            f"obj_density={stats['object_block_density']:.4f} k_hist=[{hist}]")


# -- SLIMMASK files ---------------------------------------------------------

def format_mask(mask: AttentionMask) -> str:
    rows, cols = mask.allow.shape
    lines = [f"{MASK_MAGIC} v1 {rows} {cols}"]
    table = np.array(["0", "1"])
    lines.extend("".join(table[row.astype(np.int8)]) for row in mask.allow)
    return "\n".join(lines) + "\n"


def parse_mask(text: str, layout: TokenLayout | None = None) -> AttentionMask:
    lines = text.splitlines()
    if not lines:
        raise SceneFormatError("empty mask file", line=1)
    head = lines[0].split()
    if len(head) != 4 or head[0] != MASK_MAGIC or head[1] != "v1":
        raise SceneFormatError(f"expected header '{MASK_MAGIC} v1 <rows> <cols>'", line=1)
    try:
        rows, cols = int(head[2]), int(head[3])
    except ValueError:
        raise SceneFormatError("mask dimensions must be integers", line=1) from None
    body = lines[1:1 + rows]
    if len(body) != rows:
        raise SceneFormatError(f"expected {rows} mask rows, found {len(body)}", line=len(lines))
    allow = np.zeros((rows, cols), dtype=bool)
    for i, ln in enumerate(body):
        if len(ln) != cols or set(ln) - {"0", "1"}:
            raise SceneFormatError(f"row must be {cols} characters of 0/1", line=i + 2)
        allow[i] = np.frombuffer(ln.encode("ascii"), dtype=np.uint8) == ord("1")
    return AttentionMask(allow, layout)


def save_mask(mask: AttentionMask, path):
    Path(path).write_text(format_mask(mask), encoding="utf-8", newline="\n")


def load_mask(path, layout: TokenLayout | None = None) -> AttentionMask:
    return parse_mask(Path(path).read_text(encoding="utf-8"), layout)
