from types import SimpleNamespace

import numpy as np
import pytest

from scripts.build_synth import render_instance
from scripts.errors import ModelMismatchError, ShapeError
from scripts.fit_align import build_synth_db
from scripts.fit_shape import (SpeciesModel, build_multispecies, build_species_model, fit_individuals,
                               fit_model_to_instance, fit_species_mean, normalize_body_length, relearn_pca)
from scripts.model_annotation import AnnotatedInstance, bbox_from_mask
from scripts.model_mesh import ShapeState


def test_pca_recovers_a_known_direction():
    direction = np.array([3.0, 4.0, 0.0, 0.0]) / 5.0
    coeffs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    shapes = 7.0 + coeffs[:, None] * direction[None, :]
    pca = relearn_pca(shapes)
    assert pca.rank == 1
    np.testing.assert_allclose(pca.mean, np.full(4, 7.0))
    np.testing.assert_allclose(pca.components[:, 0], direction, atol=1e-12)
    assert pca.variances[0] == pytest.approx(np.var(coeffs, ddof=1))
    np.testing.assert_allclose(pca.reconstruct(pca.project(shapes)), shapes, atol=1e-12)


def test_pca_rank_and_ordering():
    rng = np.random.default_rng(0)
    shapes = rng.normal(size=(5, 30)) * np.linspace(3.0, 0.1, 30)
    pca = relearn_pca(shapes, k=10)
    assert pca.rank == 4
    assert np.all(np.diff(pca.variances) <= 0)
    np.testing.assert_allclose(pca.components.T @ pca.components, np.eye(4), atol=1e-10)
    for i in range(pca.rank):
        column = pca.components[:, i]
        assert column[np.argmax(np.abs(column))] > 0
    assert relearn_pca(shapes, k=2).rank == 2


def test_pca_needs_two_shapes():
    with pytest.raises(ShapeError):
        relearn_pca(np.zeros((1, 6)))


def test_species_model_pca_spans_the_basis(bird):
    rng = np.random.default_rng(1)
    n = bird.n_vertices
    dv = rng.normal(0.0, 0.01, size=(n, 3))
    basis = rng.normal(0.0, 0.01, size=(3 * n, 2))
    betas = rng.normal(size=(6, 2))
    model = build_species_model(bird, dv, basis, betas, [f"i{k}" for k in range(6)], "sp", k=2)
    assert model.has_pca
    assert len(model.variances) == 2
    np.testing.assert_allclose(model.pca_mean, (bird.vertices + dv).ravel() + basis @ betas.mean(axis=0), atol=1e-12)
    residual = basis - model.pca_components @ (model.pca_components.T @ basis)
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)
    state = model.shape_state(bird)
    assert state.n_basis == 2


def test_species_model_without_basis_uses_mean(bird):
    dv = np.full((bird.n_vertices, 3), 0.01)
    model = SpeciesModel(bird.template_hash, dv, np.zeros((dv.size, 0)), np.zeros((3, 0)))
    assert not model.has_pca
    np.testing.assert_allclose(model.mean_vertices(bird), bird.vertices + dv)
    assert model.shape_state(bird).n_basis == 0
    with pytest.raises(ShapeError):
        model.components()


def test_normalize_body_length(bird):
    scaled = 3.0 * bird.vertices + 1.0
    unit = normalize_body_length(bird, scaled)
    assert bird.body_length(unit) == pytest.approx(1.0)
    np.testing.assert_allclose(unit.mean(axis=0), 0.0, atol=1e-12)


def species(bird, scale, name):
    dv = (scale - 1.0) * bird.vertices
    dv[:, 1] += 0.01 * scale
    return SpeciesModel(bird.template_hash, dv, np.zeros((dv.size, 0)), np.zeros((1, 0)), species=name)


def test_build_multispecies(bird):
    models = [species(bird, s, f"sp{i}") for i, s in enumerate((0.9, 1.0, 1.2))]
    raw = build_multispecies(models, bird, normalize=False, rank=5)
    assert raw.species == ["sp0", "sp1", "sp2"]
    assert len(raw.variances) <= 2
    assert raw.coefficients.shape == (3, len(raw.variances))
    assert not raw.normalized
    unit = build_multispecies(models, bird, normalize=True)
    assert unit.normalized
    # 單位身體長度後，只差尺度的物種幾乎重合
    assert unit.variances.sum() < 1e-3 * raw.variances.sum()


def test_build_multispecies_checks_inputs(bird):
    models = [species(bird, s, f"sp{i}") for i, s in enumerate((0.9, 1.1))]
    with pytest.raises(ShapeError):
        build_multispecies(models[:1], bird)
    with pytest.raises(ShapeError):
        build_multispecies(models, bird, source="everything")
    models[1].template_hash = "0" * 64
    with pytest.raises(ModelMismatchError):
        build_multispecies(models, bird)


def test_normalized_model_cannot_be_fitted(bird):
    models = [species(bird, s, f"sp{i}") for i, s in enumerate((0.9, 1.0, 1.1))]
    aves = build_multispecies(models, bird, normalize=True)
    with pytest.raises(ShapeError) as e:
        fit_model_to_instance(aves, bird, None, None, None, None, None)
    assert e.value.code == "normalized-model"


def test_basis_size_must_be_smaller_than_instance_count(bird, fast_config):
    aligned = [(SimpleNamespace(id=str(i)), None) for i in range(3)]
    dv = np.zeros((bird.n_vertices, 3))
    for k in (0, 3):
        with pytest.raises(ShapeError) as e:
            fit_individuals(aligned, bird, None, dv, k, fast_config)
        assert e.value.code == "basis-size"


def test_mean_needs_two_instances(bird, camera, fast_config):
    with pytest.raises(ShapeError) as e:
        fit_species_mean([(SimpleNamespace(id="a"), None)], bird, camera, fast_config)
    assert e.value.code == "too-few-instances"


@pytest.fixture(scope="module")
def rendered(bird, prior, camera):
    """以已知姿勢渲染、形狀略為膨脹的三個實例"""
    db = build_synth_db(bird, prior, 3, seed=11, camera=camera)
    shape = ShapeState(dv=0.05 * (bird.vertices - bird.vertices.mean(axis=0)))
    out = []
    for i, params in enumerate(db.params):
        mask, keypoints = render_instance(bird, params, shape, None, camera, 0.01)
        out.append((AnnotatedInstance(f"r{i}", keypoints, mask, bbox_from_mask(mask), "synth"), params))
    return out


@pytest.mark.slow
def test_species_mean_and_basis_run_end_to_end(bird, camera, fast_config, rendered):
    dv, report = fit_species_mean(rendered, bird, camera, fast_config)
    assert dv.shape == (bird.n_vertices, 3)
    assert np.all(np.isfinite(dv))
    assert len(report.iou_before) == len(report.iou_after) == 3
    assert 0 < len(report.trace) <= fast_config.shape_iters
    basis, betas, report = fit_individuals(rendered, bird, camera, dv, 1, fast_config, seed=0)
    assert basis.shape == (3 * bird.n_vertices, 1)
    assert betas.shape == (3, 1)
    again, _, _ = fit_individuals(rendered, bird, camera, dv, 1, fast_config, seed=0)
    np.testing.assert_array_equal(again, basis)


@pytest.mark.slow
def test_frozen_basis_is_not_updated(bird, camera, fast_config, rendered):
    init = np.random.default_rng(5).normal(0.0, 1e-3, size=(3 * bird.n_vertices, 1))
    basis, _, _ = fit_individuals(rendered, bird, camera, np.zeros((bird.n_vertices, 3)), 1, fast_config,
                                  init_basis=init, freeze_basis=True)
    np.testing.assert_array_equal(basis, init)
