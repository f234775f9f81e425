"""Scene and token-layout types plus their text file formats.

Scene file::

    SLIMSCENE v1 <N>
    <object_id> <x> <y> <z>
    ...

Layout file::

    SLIMLAYOUT v1
    system=<int>
    tokens_per_object=<int>
    objects=<int>
    instruction=<int>
    response=<int>
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import (
    ConfigurationError,
    DuplicateObjectError,
    NonFiniteCoordinateError,
    SceneFormatError,
)

SCENE_MAGIC = "SLIMSCENE"
LAYOUT_MAGIC = "SLIMLAYOUT"
FORMAT_VERSION = "v1"


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float

    def __post_init__(self):
        for name in ("x", "y", "z"):
            if not math.isfinite(getattr(self, name)):
                raise NonFiniteCoordinateError("non-finite coordinate", field=name)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)


class SceneObjects:
    """Ordered, immutable list of objects with 3D centers.

    The list order is the order in which object tokens appear in the
    decoder sequence; it carries no geometric meaning.
    """

    __slots__ = ("_ids", "_centers")

    def __init__(self, ids, centers):
        ids = tuple(str(i) for i in ids)
        centers = np.array(centers, dtype=np.float64).reshape(-1, 3)
        if len(ids) < 1:
            raise ConfigurationError("a scene needs at least one object")
        if len(ids) != centers.shape[0]:
            raise ConfigurationError(
                f"{len(ids)} ids but {centers.shape[0]} centers")
        seen = set()
        for oid in ids:
            if oid in seen:
                raise DuplicateObjectError(f"duplicate object id {oid!r}")
            if not oid or any(c.isspace() for c in oid):
                raise SceneFormatError(f"invalid object id {oid!r}")
            seen.add(oid)
        if not np.all(np.isfinite(centers)):
            raise NonFiniteCoordinateError("non-finite coordinate in centers")
        centers.setflags(write=False)
        self._ids = ids
        self._centers = centers

    @classmethod
    def from_points(cls, objects) -> "SceneObjects":
        """Build from an iterable of ``(object_id, Point3)`` pairs."""
        objects = list(objects)
        return cls([o for o, _ in objects], [p.as_array() for _, p in objects])

    @property
    def ids(self) -> tuple:
        return self._ids

    @property
    def centers(self) -> np.ndarray:
        return self._centers

    @property
    def N(self) -> int:
        return len(self._ids)

    @property
    def objects(self) -> list:
        return [(oid, Point3(*map(float, c))) for oid, c in zip(self._ids, self._centers)]

    def __len__(self):
        return self.N

    def __eq__(self, other):
        if not isinstance(other, SceneObjects):
            return NotImplemented
        return self._ids == other._ids and np.array_equal(self._centers, other._centers)

    def __repr__(self):
        return f"SceneObjects(N={self.N})"

    def permuted(self, perm) -> "SceneObjects":
        """Scene whose position ``p`` holds object ``perm[p]`` of this scene."""
        perm = np.asarray(perm)
        return SceneObjects([self._ids[i] for i in perm], self._centers[perm])

    def transformed(self, rotation=None, translation=None, scale=1.0) -> "SceneObjects":
        c = self._centers
        if rotation is not None:
            c = c @ np.asarray(rotation).T
        c = c * scale
        if translation is not None:
            c = c + np.asarray(translation)
        return SceneObjects(self._ids, c)


@dataclass(frozen=True)
class TokenLayout:
    """Segment sizes of the multi-modal sequence.

    Segments are always laid out as system, objects, instruction, response.
    ``n_objects`` counts objects; each contributes ``tokens_per_object``
    contiguous tokens.
    """

    n_system: int = 0
    n_objects: int = 1
    tokens_per_object: int = 1
    n_instruction: int = 0
    n_response: int = 0

    def __post_init__(self):
        for name in ("n_system", "n_objects", "n_instruction", "n_response"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 0:
                raise ConfigurationError(f"{name} must be a nonnegative integer, got {v!r}")
        if not isinstance(self.tokens_per_object, (int, np.integer)) or self.tokens_per_object < 1:
            raise ConfigurationError("tokens_per_object must be a positive integer")
        if self.n < 1:
            raise ConfigurationError("layout describes an empty sequence")

    @property
    def n_object_tokens(self) -> int:
        return self.n_objects * self.tokens_per_object

    @property
    def n(self) -> int:
        return self.n_system + self.n_object_tokens + self.n_instruction + self.n_response

    def check_scene(self, scene: SceneObjects):
        if scene.N != self.n_objects:
            raise ConfigurationError(
                f"layout expects {self.n_objects} objects, scene has {scene.N}")


class Spans(NamedTuple):
    system: range
    objects: list
    instruction: range
    response: range

    @property
    def object_segment(self) -> range:
        if not self.objects:
            return range(self.system.stop, self.system.stop)
        return range(self.objects[0].start, self.objects[-1].stop)


def segment_spans(layout: TokenLayout) -> Spans:
    """Half-open index ranges of every segment; together they partition [0, n)."""
    pos = layout.n_system
    system = range(0, pos)
    objects = []
    for _ in range(layout.n_objects):
        objects.append(range(pos, pos + layout.tokens_per_object))
        pos += layout.tokens_per_object
    instruction = range(pos, pos + layout.n_instruction)
    pos += layout.n_instruction
    response = range(pos, pos + layout.n_response)
    return Spans(system, objects, instruction, response)


def object_index_of_tokens(layout: TokenLayout) -> np.ndarray:
    """Object index for each token position, -1 outside the object segment."""
    out = np.full(layout.n, -1, dtype=np.int64)
    start = layout.n_system
    out[start:start + layout.n_object_tokens] = np.repeat(
        np.arange(layout.n_objects), layout.tokens_per_object)
    return out


# -- scene files ------------------------------------------------------------

def _parse_float(tok, line, field):
    try:
        v = float(tok)
    except ValueError:
        raise SceneFormatError(f"cannot parse {tok!r} as a real", line=line, field=field) from None
    if not math.isfinite(v):
        raise NonFiniteCoordinateError(f"non-finite coordinate {tok!r}", line=line, field=field)
    return v


def parse_scene(text: str) -> SceneObjects:
    lines = text.splitlines()
    if not lines:
        raise SceneFormatError("empty scene file", line=1)
    header = lines[0].split()
    if len(header) != 3 or header[0] != SCENE_MAGIC or header[1] != FORMAT_VERSION:
        raise SceneFormatError(
            f"expected header '{SCENE_MAGIC} {FORMAT_VERSION} <N>'", line=1)
    try:
        n = int(header[2])
    except ValueError:
        raise SceneFormatError("object count is not an integer", line=1, field="N") from None
    if n < 1:
        raise SceneFormatError("object count must be >= 1", line=1, field="N")
    body = [(i + 2, ln) for i, ln in enumerate(lines[1:]) if ln.strip()]
    if len(body) != n:
        raise SceneFormatError(f"header declares {n} objects, found {len(body)}",
                               line=len(lines))
    ids, centers, seen = [], [], {}
    for lineno, ln in body:
        parts = ln.split()
        if len(parts) != 4:
            raise SceneFormatError("expected '<object_id> <x> <y> <z>'", line=lineno)
        oid = parts[0]
        if oid in seen:
            raise DuplicateObjectError(
                f"duplicate object id {oid!r} (first on line {seen[oid]})",
                line=lineno, field="object_id")
        seen[oid] = lineno
        ids.append(oid)
        centers.append([_parse_float(t, lineno, f) for t, f in zip(parts[1:], "xyz")])
    return SceneObjects(ids, centers)


def format_scene(scene: SceneObjects) -> str:
    out = [f"{SCENE_MAGIC} {FORMAT_VERSION} {scene.N}"]
    for oid, c in zip(scene.ids, scene.centers):
        # repr gives the shortest string that round-trips exactly
        out.append(f"{oid} {float(c[0])!r} {float(c[1])!r} {float(c[2])!r}")
    return "\n".join(out) + "\n"


def load_scene(path) -> SceneObjects:
    return parse_scene(Path(path).read_text(encoding="utf-8"))


def save_scene(scene: SceneObjects, path):
    Path(path).write_text(format_scene(scene), encoding="utf-8")


# -- layout files -----------------------------------------------------------

_LAYOUT_KEYS = {
    "system": "n_system",
    "tokens_per_object": "tokens_per_object",
    "objects": "n_objects",
    "instruction": "n_instruction",
    "response": "n_response",
}


def parse_layout(text: str) -> TokenLayout:
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(text.splitlines())]
    lines = [(i, ln) for i, ln in lines if ln]
    if not lines or lines[0][1].split() != [LAYOUT_MAGIC, FORMAT_VERSION]:
        raise SceneFormatError(f"expected header '{LAYOUT_MAGIC} {FORMAT_VERSION}'", line=1)
    values = {}
    for lineno, ln in lines[1:]:
        key, sep, val = ln.partition("=")
        key = key.strip()
        if not sep or key not in _LAYOUT_KEYS:
            raise SceneFormatError(f"unexpected layout entry {ln!r}", line=lineno)
        if key in values:
            raise SceneFormatError("repeated key", line=lineno, field=key)
        try:
            values[key] = int(val.strip())
        except ValueError:
            raise SceneFormatError("value is not an integer", line=lineno, field=key) from None
    missing = sorted(set(_LAYOUT_KEYS) - set(values))
    if missing:
        raise SceneFormatError(f"missing layout keys: {', '.join(missing)}")
    try:
        return TokenLayout(**{_LAYOUT_KEYS[k]: v for k, v in values.items()})
    except ConfigurationError as exc:
        raise SceneFormatError(str(exc)) from None


def format_layout(layout: TokenLayout) -> str:
    return (f"{LAYOUT_MAGIC} {FORMAT_VERSION}\n"
            f"system={layout.n_system}\n"
            f"tokens_per_object={layout.tokens_per_object}\n"
            f"objects={layout.n_objects}\n"
            f"instruction={layout.n_instruction}\n"
            f"response={layout.n_response}\n")


def load_layout(path) -> TokenLayout:
    return parse_layout(Path(path).read_text(encoding="utf-8"))


def save_layout(layout: TokenLayout, path):
    Path(path).write_text(format_layout(layout), encoding="utf-8")
