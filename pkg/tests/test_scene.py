import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slim3d.errors import (
    ConfigurationError,
    DuplicateObjectError,
    NonFiniteCoordinateError,
    SceneFormatError,
)
from slim3d.scene import (
    Point3,
    SceneObjects,
    TokenLayout,
    format_layout,
    load_layout,
    load_scene,
    parse_layout,
    parse_scene,
    save_layout,
    save_scene,
    segment_spans,
)


def test_load_scene_preserves_order(tmp_path):
    p = tmp_path / "s.scn"
    p.write_text("SLIMSCENE v1 2\nB 1 0 0\nA 0 0 0\n")
    scene = load_scene(p)
    assert scene.N == 2
    assert scene.ids == ("B", "A")
    np.testing.assert_array_equal(scene.centers, [[1, 0, 0], [0, 0, 0]])


def test_duplicate_id_rejected():
    with pytest.raises(DuplicateObjectError) as exc:
        parse_scene("SLIMSCENE v1 2\nOBJ000 0 0 0\nOBJ000 1 0 0\n")
    assert exc.value.line == 3


@pytest.mark.parametrize("bad", ["NaN", "inf", "-Infinity"])
def test_non_finite_coordinate_rejected(bad):
    with pytest.raises(NonFiniteCoordinateError) as exc:
        parse_scene(f"SLIMSCENE v1 1\nOBJ000 0 {bad} 0\n")
    assert exc.value.line == 2
    assert exc.value.field == "y"


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("SLIMSCENE v2 1\nA 0 0 0\n", 1),
    ("SLIMSCENE v1 2\nA 0 0 0\n", 2),
    ("SLIMSCENE v1 1\nA 0 zero 0\n", 2),
    ("SLIMSCENE v1 1\nA 0 0\n", 2),
])
def test_parse_errors_carry_line(text, line):
    with pytest.raises(SceneFormatError) as exc:
        parse_scene(text)
    assert exc.value.line == line


def test_point3_rejects_nan():
    with pytest.raises(NonFiniteCoordinateError):
        Point3(0.0, float("nan"), 0.0)


def test_scene_needs_an_object():
    with pytest.raises(ConfigurationError):
        SceneObjects([], np.zeros((0, 3)))


@given(st.lists(st.tuples(*[st.floats(-1e6, 1e6, allow_nan=False)] * 3), min_size=1, max_size=20))
@settings(max_examples=50, deadline=None)
def test_scene_round_trip(tmp_path_factory, coords):
    scene = SceneObjects([f"o{i}" for i in range(len(coords))], coords)
    path = tmp_path_factory.mktemp("rt") / "s.scn"
    save_scene(scene, path)
    assert load_scene(path) == scene


def test_from_points_round_trip():
    pts = [("a", Point3(0.0, 1.0, 2.0)), ("b", Point3(-1.5, 0.25, 3.0))]
    scene = SceneObjects.from_points(pts)
    assert scene.objects == pts


def test_segment_spans_example():
    sp = segment_spans(TokenLayout(n_system=2, n_objects=2, tokens_per_object=1, n_instruction=3))
    assert sp.system == range(0, 2)
    assert sp.objects == [range(2, 3), range(3, 4)]
    assert sp.instruction == range(4, 7)
    assert sp.response == range(7, 7)


def test_segment_spans_multi_token_objects():
    sp = segment_spans(TokenLayout(n_system=0, n_objects=2, tokens_per_object=3))
    assert sp.objects == [range(0, 3), range(3, 6)]


def test_segment_spans_single_object():
    sp = segment_spans(TokenLayout(n_objects=1))
    assert sp.objects == [range(0, 1)]
    assert len(sp.system) == len(sp.instruction) == len(sp.response) == 0


@given(st.integers(0, 6), st.integers(0, 8), st.integers(1, 4), st.integers(0, 6), st.integers(0, 4))
def test_spans_partition_sequence(s, n_obj, t, i, r):
    if s + n_obj * t + i + r == 0:
        return
    layout = TokenLayout(s, n_obj, t, i, r)
    sp = segment_spans(layout)
    covered = list(sp.system) + [p for o in sp.objects for p in o] + list(sp.instruction) + list(sp.response)
    assert covered == list(range(layout.n))
    assert all(len(o) == t for o in sp.objects)


def test_layout_file_round_trip(tmp_path):
    layout = TokenLayout(3, 7, 2, 5, 1)
    save_layout(layout, tmp_path / "l.lay")
    assert load_layout(tmp_path / "l.lay") == layout
    assert format_layout(layout).splitlines()[0] == "SLIMLAYOUT v1"


@pytest.mark.parametrize("text", [
    "SLIMLAYOUT v1\nsystem=1\n",
    "SLIMLAYOUT v1\nsystem=1\ntokens_per_object=0\nobjects=1\ninstruction=0\nresponse=0\n",
    "SLIMLAYOUT v1\nsystem=x\ntokens_per_object=1\nobjects=1\ninstruction=0\nresponse=0\n",
    "LAYOUT v1\n",
])
def test_layout_parse_errors(text):
    with pytest.raises(SceneFormatError):
        parse_layout(text)


def test_layout_scene_mismatch():
    scene = SceneObjects(["a", "b"], [[0, 0, 0], [1, 0, 0]])
    with pytest.raises(ConfigurationError):
        TokenLayout(n_objects=3).check_scene(scene)
