import dataclasses

import numpy as np
import pytest
from scripts.build_synth import render_instance
from scripts.fit_align import (align_instance, build_synth_db, center_translation, evaluate_fit, init_pose,
                               params_from_vector, place_at_depth, pose_param_vector, projected_bbox)
from scripts.model_annotation import AnnotatedInstance, bbox_from_mask
from scripts.model_mesh import PoseParams, ShapeState, pose_mesh, to_numpy
from scripts.model_render import Camera, project


@pytest.fixture(scope="module")
def db(bird, prior, camera):
    return build_synth_db(bird, prior, 30, seed=7, camera=camera)


def test_synth_db_is_seeded(bird, prior, camera, db):
    again = build_synth_db(bird, prior, 30, seed=7, camera=camera)
    assert len(db) == 30
    assert db.template_hash == bird.template_hash
    np.testing.assert_array_equal(again.keypoints, db.keypoints)
    other = build_synth_db(bird, prior, 30, seed=8, camera=camera)
    assert not np.array_equal(other.keypoints, db.keypoints)


def test_place_at_depth_centres_the_mesh(bird, prior):
    params = PoseParams(prior.theta_mean, prior.alpha_mean, np.zeros(3), np.ones(2))
    placed = place_at_depth(bird, params, 4.0)
    centroid = pose_mesh(bird, placed).numpy_vertices().mean(axis=0)
    np.testing.assert_allclose(centroid, [0.0, 0.0, 4.0], atol=1e-12)


def test_init_pose_recovers_database_entry(db):
    for i in (0, 11, 29):
        keypoints = np.concatenate([db.pixel_keypoints[i], np.ones((db.n_keypoints, 1))], axis=1)
        params = init_pose(keypoints, db, db.bboxes[i])
        np.testing.assert_array_equal(params.theta, db.params[i].theta)


def test_center_translation_matches_target_bbox(bird, prior, camera):
    params = place_at_depth(bird, PoseParams(prior.theta_mean, prior.alpha_mean, np.zeros(3), np.ones(2)), 3.0)
    uv = to_numpy(project(camera, pose_mesh(bird, params).numpy_vertices()))
    x, y, w, h = projected_bbox(uv)
    target = (x + 2.0, y + 1.0, w, h)
    moved = center_translation(bird, params, camera, target)
    x2, y2, w2, h2 = projected_bbox(to_numpy(project(camera, pose_mesh(bird, moved).numpy_vertices())))
    assert x2 + w2 / 2.0 == pytest.approx(target[0] + w / 2.0, abs=0.5)
    assert y2 + h2 / 2.0 == pytest.approx(target[1] + h / 2.0, abs=0.5)
    assert max(w2, h2) == pytest.approx(max(w, h), rel=0.05)


def test_param_vector_round_trip_keeps_joint_order(bird):
    params = PoseParams(np.arange(3 * bird.n_joints, dtype=np.float64) / 100.0, np.linspace(0.9, 1.1, bird.n_joints),
                        np.array([0.1, 0.2, 3.0]), np.array([1.1, 0.9]))
    vec = pose_param_vector(bird, params)
    assert set(vec.blocks) == {"gamma", "theta_root", "theta", "alpha", "kappa"}
    back = params_from_vector(bird, vec)
    np.testing.assert_array_equal(back.theta, params.theta)
    np.testing.assert_array_equal(back.alpha, params.alpha)
    np.testing.assert_array_equal(back.kappa, params.kappa)
    assert "beta" in pose_param_vector(bird, params, beta=np.zeros(2)).blocks


def make_instance(bird, params, camera, instance_id="gt"):
    mask, keypoints = render_instance(bird, params, ShapeState.zeros(bird), None, camera, 0.01)
    return AnnotatedInstance(instance_id, keypoints, mask, bbox_from_mask(mask), "synth")


def test_ground_truth_pose_scores_perfectly(bird, db, camera):
    params = db.params[3]
    instance = make_instance(bird, params, camera)
    p, i = evaluate_fit(bird, params, ShapeState.zeros(bird), None, camera, instance)
    assert p == 1.0
    assert i == 1.0


@pytest.mark.slow
def test_align_recovers_a_rendered_pose(bird, prior, fast_config):
    camera = Camera.default(48, 48)
    big_db = build_synth_db(bird, prior, 30, seed=7, camera=camera)
    truth = big_db.params[5]
    instance = make_instance(bird, truth, camera)
    config = dataclasses.replace(fast_config, algorithm="lbfgs", w_prior=0.01)
    params, diag = align_instance(instance, bird, prior, camera, config, big_db)
    params.validate(bird)
    assert not diag.failed
    assert diag.pck >= 0.6
    assert diag.iou >= 0.5
    assert np.isfinite(diag.objective)
    assert {t.stage for t in diag.trace} == {0, 1, 2}
