import dataclasses

import numpy as np
import pytest
import torch

from scripts.build_synth import render_instance
from scripts.errors import AnnotationError, DimensionError, ShapeError
from scripts.fit_align import place_at_depth
from scripts.model_annotation import AnnotatedInstance, bbox_from_mask
from scripts.model_energy import (EnergyWeights, PosePrior, arap_energy, edge_energy, geman_mcclure, keypoint_energy,
                                  keypoint_residual_energy, laplacian_energy, mask_residual_energy, ortho_energy,
                                  prior_energy, silhouette_energy, smoothing_energy, symmetry_energy)
from scripts.model_mesh import PoseParams, ShapeState, rodrigues
from scripts.model_render import Camera
from tests.helpers import tiny_template

TRIANGLE = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]


def test_geman_mcclure_saturates():
    err_sq = torch.tensor([0.0, 1.0, 1e12], dtype=torch.float64)
    rho = geman_mcclure(err_sq, 2.0).numpy()
    assert rho[0] == 0.0
    assert rho[1] == pytest.approx(4.0 / 5.0)
    assert rho[2] == pytest.approx(4.0, rel=1e-9)


def test_invisible_keypoints_do_not_contribute():
    pred = torch.tensor([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], dtype=torch.float64)
    gt = np.array([[1.0, 1.0, 1.0], [2.0, 3.0, 1.0], [100.0, -50.0, 0.0]])
    energy = keypoint_residual_energy(pred, gt, sigma=1.0)
    assert float(energy) == pytest.approx(0.5)
    gt[2, :2] = [3.0, 3.0]
    assert float(keypoint_residual_energy(pred, gt, sigma=1.0)) == pytest.approx(0.5)


def test_keypoint_energy_needs_a_visible_keypoint():
    gt = np.array([[1.0, 1.0, 0.0]])
    with pytest.raises(AnnotationError):
        keypoint_residual_energy(torch.zeros((1, 2), dtype=torch.float64), gt, sigma=1.0)


def test_mask_energy_uses_smooth_l1():
    ones = torch.ones((4, 4), dtype=torch.float64)
    assert float(mask_residual_energy(ones, np.ones((4, 4)), 2.0, 0.5)) == 0.0
    assert float(mask_residual_energy(ones, np.zeros((4, 4)), 2.0, 0.5)) == pytest.approx(1.5)
    quarter = torch.full((4, 4), 0.25, dtype=torch.float64)
    assert float(mask_residual_energy(quarter, np.zeros((4, 4)), 1.0, 0.5)) == pytest.approx(0.0625)
    with pytest.raises(DimensionError):
        mask_residual_energy(ones, np.zeros((3, 4)), 1.0, 0.5)


def test_prior_energy_is_zero_at_the_mean_and_counts_stds(bird, prior):
    params = PoseParams(prior.theta_mean.copy(), prior.alpha_mean.copy(), np.zeros(3), np.ones(2))
    assert float(prior_energy(params, prior)) == pytest.approx(0.0, abs=1e-12)
    params.theta[3] += np.sqrt(prior.theta_cov[3, 3])
    assert float(prior_energy(params, prior, w_prior=2.0)) == pytest.approx(2.0)


def test_prior_requires_positive_definite_covariance():
    with pytest.raises(ShapeError) as e:
        PosePrior(np.zeros(2), np.diag([1.0, 0.0]), np.ones(1), np.eye(1))
    assert e.value.code == "prior"


def test_prior_sampling_is_seeded(prior):
    a = prior.sample(np.random.default_rng(3))
    b = prior.sample(np.random.default_rng(3))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_edge_energy_is_unsquared_length():
    template = tiny_template(TRIANGLE, [[0, 1, 2]])
    dv = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [3.0, 4.0, 0.0]])
    assert float(edge_energy(dv, template)) == pytest.approx(10.0)


def test_translation_has_no_smoothing_cost(bird):
    dv = np.tile([0.3, -0.1, 0.2], (bird.n_vertices, 1))
    assert float(edge_energy(dv, bird)) == pytest.approx(0.0, abs=1e-12)
    assert float(laplacian_energy(dv, bird)) == pytest.approx(0.0, abs=1e-20)
    assert float(arap_energy(bird.vertices + dv, bird)) == pytest.approx(0.0, abs=1e-12)


def test_arap_is_zero_for_rigid_motion(bird):
    rot = rodrigues(torch.tensor([0.3, -0.7, 1.1], dtype=torch.float64)).numpy()
    moved = bird.vertices @ rot.T + [0.5, 0.0, -2.0]
    assert float(arap_energy(moved, bird)) == pytest.approx(0.0, abs=1e-10)


def test_arap_penalises_stretching(bird):
    stretched = bird.vertices * [1.0, 1.0, 1.5]
    assert float(arap_energy(stretched, bird)) > 1e-3


OCTAHEDRON = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]]
OCTAHEDRON_FACES = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]


@pytest.mark.parametrize("s", [0.5, 1.5, 3.0])
def test_arap_of_a_stretched_octahedron(s):
    # 每個一環鄰域的共變異矩陣都是正定對角矩陣，最佳旋轉為單位矩陣
    octahedron = tiny_template(OCTAHEDRON, OCTAHEDRON_FACES)
    stretched = np.asarray(OCTAHEDRON) * [s, 1.0, 1.0]
    assert float(arap_energy(stretched, octahedron)) == pytest.approx(16.0 * (s - 1.0) ** 2, rel=1e-10)
    weighted = dataclasses.replace(octahedron, rigidity_weights=np.array([2.0, 1.0, 1.0, 1.0, 1.0, 1.0]))
    assert float(arap_energy(stretched, weighted)) == pytest.approx(20.0 * (s - 1.0) ** 2, rel=1e-10)


def test_symmetry_energy_examples():
    template = tiny_template(TRIANGLE, [[0, 1, 2]], pairs=[[0, 1], [2, 2]])
    v = np.array([[1.0, 0.0, 0.0], [-2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    assert float(symmetry_energy(v, template)) == pytest.approx(1.0)
    v[2, 0] = 0.5
    assert float(symmetry_energy(v, template)) == pytest.approx(1.5)
    both_ways = tiny_template(TRIANGLE, [[0, 1, 2]], pairs=[[0, 1], [1, 0], [2, 2]])
    assert float(symmetry_energy(v, both_ways)) == pytest.approx(1.5)


def test_symmetric_template_has_zero_symmetry_energy(bird):
    assert float(symmetry_energy(bird.vertices, bird)) == pytest.approx(0.0, abs=1e-20)


@pytest.mark.parametrize("k", [1, 3])
def test_ortho_energy(k):
    q, _ = np.linalg.qr(np.random.default_rng(k).normal(size=(12, k)))
    assert float(ortho_energy(q)) == pytest.approx(0.0, abs=1e-12)
    assert float(ortho_energy(2.0 * q)) == pytest.approx(3.0 * np.sqrt(k))


def test_ortho_energy_needs_a_column():
    with pytest.raises(DimensionError):
        ortho_energy(np.zeros((12, 0)))


def test_smoothing_terms_follow_weights(bird):
    weights = EnergyWeights(w_edge=1.0, w_lap=0.0, w_arap=2.0, w_sym=0.0)
    dv = np.random.default_rng(0).normal(0.0, 0.01, size=(bird.n_vertices, 3))
    terms = smoothing_energy(dv, bird.vertices + dv, bird, weights)
    assert set(terms) == {"edge", "arap"}
    assert float(terms["arap"]) == pytest.approx(2.0 * float(arap_energy(bird.vertices + dv, bird)))


def test_smoothing_gradients(bird):
    dv = torch.tensor(np.random.default_rng(2).normal(0.0, 0.01, size=(bird.n_vertices, 3)), requires_grad=True)

    def total(x):
        return edge_energy(x, bird) + laplacian_energy(x, bird) + symmetry_energy(x, bird)

    assert torch.autograd.gradcheck(total, (dv,))


def test_energy_weights_reject_negative():
    with pytest.raises(ShapeError):
        EnergyWeights(w_kp=-1.0)


@pytest.fixture(scope="module")
def rendered(bird, prior, camera):
    params = place_at_depth(bird, PoseParams(prior.theta_mean, prior.alpha_mean, np.zeros(3), np.ones(2)), 3.0)
    mask, keypoints = render_instance(bird, params, ShapeState.zeros(bird), None, camera, 0.01)
    return params, AnnotatedInstance("gt", keypoints, mask, bbox_from_mask(mask), "synth")


def _shifted(params, dx):
    gamma = np.array(params.gamma, dtype=np.float64) + [dx, 0.0, 0.0]
    return PoseParams(params.theta, params.alpha, gamma, params.kappa)


def test_keypoint_energy_vanishes_at_the_rendered_pose(bird, camera, rendered):
    params, instance = rendered
    shape = ShapeState.zeros(bird)
    assert float(keypoint_energy(bird, params, shape, None, camera, instance)) == pytest.approx(0.0, abs=1e-9)
    moved = _shifted(params, 0.2)
    off = float(keypoint_energy(bird, moved, shape, None, camera, instance))
    doubled = float(keypoint_energy(bird, moved, shape, None, camera, instance, EnergyWeights(w_kp=2.0)))
    assert off > 0.0
    assert doubled == pytest.approx(2.0 * off)


def test_silhouette_energy_grows_when_the_mesh_moves(bird, camera, rendered):
    params, instance = rendered
    shape = ShapeState.zeros(bird)
    at_truth = float(silhouette_energy(bird, params, shape, None, camera, instance, 0.5))
    moved = float(silhouette_energy(bird, _shifted(params, 0.3), shape, None, camera, instance, 0.5))
    assert 0.0 <= at_truth < moved
    with pytest.raises(DimensionError):
        silhouette_energy(bird, params, shape, None, Camera.default(16, 16), instance, 0.5)
