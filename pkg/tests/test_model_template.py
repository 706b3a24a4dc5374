import dataclasses

import numpy as np
import pytest

from scripts.errors import ShapeError
from scripts.model_template import (KEYPOINT_NAMES, load_template, make_synthetic_bird, read_obj, save_template)
from tests.helpers import tiny_template


def test_synthetic_bird_structure(bird):
    assert bird.n_joints == 13
    assert bird.n_keypoints == 18
    assert [name for name, _ in bird.keypoint_map] == KEYPOINT_NAMES
    np.testing.assert_allclose(bird.skin_weights.sum(axis=1), 1.0, atol=1e-12)
    assert set(bird.part_groups) == {"beak", "tail"}


def test_synthetic_bird_is_mirror_symmetric(bird):
    mapping = bird.symmetry_map
    assert np.all(mapping >= 0)
    np.testing.assert_array_equal(mapping[mapping], np.arange(bird.n_vertices))
    np.testing.assert_allclose(bird.vertices[mapping] * [-1.0, 1.0, 1.0], bird.vertices, atol=1e-12)


def test_left_right_keypoints_are_mirrored(bird):
    mapping = bird.symmetry_map
    for name in KEYPOINT_NAMES:
        if name.startswith("left_"):
            (left,) = bird.keypoint_indices(name)
            (right,) = bird.keypoint_indices(name.replace("left_", "right_"))
            assert mapping[left] == right


def test_template_arrays_are_read_only(bird):
    with pytest.raises(ValueError):
        bird.vertices[0, 0] = 1.0


def test_skin_weights_must_sum_to_one(bird):
    bad = bird.skin_weights.copy()
    bad[0] *= 2.0
    with pytest.raises(ShapeError) as e:
        dataclasses.replace(bird, skin_weights=bad)
    assert e.value.code == "skin-weights"


def test_skeleton_needs_single_root(bird):
    parent = bird.parent.copy()
    parent[0] = 1
    with pytest.raises(ShapeError) as e:
        dataclasses.replace(bird, parent=parent)
    assert e.value.code == "skeleton"


def test_face_index_out_of_range():
    with pytest.raises(ShapeError) as e:
        tiny_template([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    assert e.value.code == "index"


def test_vertex_in_two_symmetry_pairs_is_rejected():
    with pytest.raises(ShapeError) as e:
        tiny_template([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], pairs=[[0, 1], [1, 2]])
    assert e.value.code == "symmetry"
    with pytest.raises(ShapeError):
        tiny_template([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], pairs=[[0, 1], [1, 0], [0, 2]])


def test_pair_listed_in_both_orientations_is_one_pair():
    template = tiny_template([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], pairs=[[0, 1], [1, 0], [2, 2]])
    np.testing.assert_array_equal(template.symmetry_map, [1, 0, 2])


def test_unknown_keypoint(bird):
    with pytest.raises(ShapeError) as e:
        bird.keypoint_indices("wattle")
    assert e.value.code == "keypoint"


def test_body_length_scales_with_vertices(bird):
    length = bird.body_length()
    assert length > 0.9
    assert bird.body_length(2.0 * bird.vertices) == pytest.approx(2.0 * length)


def test_edges_are_unique_and_ordered(bird):
    edges = bird.edges
    assert np.all(edges[:, 0] < edges[:, 1])
    assert len(np.unique(edges, axis=0)) == len(edges)
    # 封閉三角網格：每條邊被兩個面共用
    assert 2 * len(edges) == 3 * len(bird.faces)


def test_joint_order_visits_parents_first(bird):
    seen = set()
    for j in bird.joint_order:
        p = int(bird.parent[j])
        assert p < 0 or p in seen
        seen.add(j)
    assert len(seen) == bird.n_joints


def test_save_and_load_template(tmp_path, bird):
    path = tmp_path / "bird.obj"
    save_template(bird, path)
    assert path.with_suffix(".json").exists()
    loaded = load_template(path)
    assert loaded.template_hash == bird.template_hash
    assert loaded.keypoint_map == bird.keypoint_map
    assert loaded.joint_names == bird.joint_names
    for name, group in bird.part_groups.items():
        np.testing.assert_array_equal(loaded.part_groups[name].indices, group.indices)
        np.testing.assert_allclose(loaded.part_groups[name].axis, group.axis)


def test_load_template_missing_sidecar(tmp_path):
    path = tmp_path / "lonely.obj"
    path.write_text("v 0 0 0\n", encoding="utf-8")
    with pytest.raises(ShapeError) as e:
        load_template(path)
    assert e.value.code == "missing-file"


def test_read_obj_triangulates_polygons(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 4//1\n", encoding="utf-8")
    vertices, faces = read_obj(path)
    assert vertices.shape == (4, 3)
    np.testing.assert_array_equal(faces, [[0, 1, 2], [0, 2, 3]])


def test_template_hash_changes_with_vertices(bird):
    moved = dataclasses.replace(bird, vertices=bird.vertices + 1e-9)
    assert moved.template_hash != bird.template_hash


@pytest.mark.parametrize("kwargs", [{"ring_segments": 7}, {"limb_segments": 2}, {"n_rings": 3}])
def test_synthetic_bird_rejects_bad_resolution(kwargs):
    with pytest.raises(ShapeError):
        make_synthetic_bird(**kwargs)
