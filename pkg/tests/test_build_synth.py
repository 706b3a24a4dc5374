import numpy as np
import pytest

from scripts.build_synth import (RECIPES, SyntheticSpeciesSpec, generate_synthetic_collection, perturb_mask,
                                 recipe_field, simulate_clade, species_displacement, variation_basis)
from scripts.errors import ShapeError
from scripts.eval_phylo import read_newick
from scripts.io_files import read_manifest, read_sealed
from scripts.model_template import load_template


def test_spec_validation():
    with pytest.raises(ShapeError) as e:
        SyntheticSpeciesSpec(recipes={"wings": 0.1})
    assert e.value.code == "synth-spec"
    with pytest.raises(ShapeError):
        SyntheticSpeciesSpec(count=0)
    with pytest.raises(ShapeError):
        SyntheticSpeciesSpec(variation_rank=9)
    with pytest.raises(ShapeError):
        SyntheticSpeciesSpec(keypoint_noise=-1.0)


def test_spec_from_dict():
    spec = SyntheticSpeciesSpec.from_dict({"name": "a", "recipe": "slim", "magnitude": 0.1, "image_size": [16, 8]})
    assert spec.recipes == {"slim": 0.1}
    assert spec.image_size == (16, 8)
    assert SyntheticSpeciesSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ShapeError):
        SyntheticSpeciesSpec.from_dict({"colour": "red"})


@pytest.mark.parametrize("recipe", RECIPES)
def test_recipe_fields_have_unit_peak(bird, recipe):
    field = recipe_field(bird, recipe)
    assert field.shape == bird.vertices.shape
    assert np.linalg.norm(field, axis=1).max() == pytest.approx(1.0)


def test_recipes_are_mirror_symmetric(bird):
    flip = np.array([-1.0, 1.0, 1.0])
    for recipe in RECIPES:
        field = recipe_field(bird, recipe)
        np.testing.assert_allclose(field[bird.symmetry_map] * flip, field, atol=1e-6)


def test_species_displacement_is_linear(bird):
    dv = species_displacement(bird, {"slim": 0.1, "crest": 0.02})
    np.testing.assert_allclose(dv, 0.1 * recipe_field(bird, "slim") + 0.02 * recipe_field(bird, "crest"))
    np.testing.assert_array_equal(species_displacement(bird, {}), 0.0)


def test_variation_basis_shape(bird):
    assert variation_basis(bird, 2).shape == (bird.vertices.size, 2)
    assert variation_basis(bird, 0).shape == (bird.vertices.size, 0)


def test_perturb_mask():
    mask = np.zeros((12, 12), dtype=np.uint8)
    mask[3:9, 3:9] = 1
    rng = np.random.default_rng(0)
    assert perturb_mask(mask, 0, rng) is mask
    for _ in range(4):
        out = perturb_mask(mask, 1, rng)
        assert out.sum() in (16, 60)


def test_generated_collection(tmp_path, bird, prior):
    spec = SyntheticSpeciesSpec(name="sp", seed=5, count=3, image_size=(32, 32), recipes={"slim": 0.05},
                                variation_rank=1, variation_magnitude=0.02)
    manifest, gt = generate_synthetic_collection(bird, spec, prior, tmp_path)
    assert [e.id for e in manifest.instances] == ["sp_0000", "sp_0001", "sp_0002"]
    loaded = read_manifest(tmp_path / "manifest.json")
    assert load_template(loaded.template_path()).template_hash == bird.template_hash
    for instance in loaded.load_instances():
        assert instance.visible.sum() >= 4
        assert instance.mask.any()
        assert instance.mask.shape == (32, 32)
    sealed = read_sealed(tmp_path / "gt.json")
    assert sealed["template_hash"] == bird.template_hash
    assert len(sealed["instances"]) == 3
    assert np.asarray(sealed["basis"]).shape == (bird.vertices.size, 1)


def test_generated_collection_is_seeded(tmp_path, bird, prior):
    spec = SyntheticSpeciesSpec(name="sp", seed=2, count=2, image_size=(24, 24), keypoint_noise=0.5, mask_noise=1)
    generate_synthetic_collection(bird, spec, prior, tmp_path / "a")
    generate_synthetic_collection(bird, spec, prior, tmp_path / "b")
    for name in ("manifest.json", "gt.json", "masks/sp_0001.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_noisy_keypoints_stay_in_image(tmp_path, bird, prior):
    spec = SyntheticSpeciesSpec(name="n", seed=1, count=2, image_size=(24, 24), keypoint_noise=30.0)
    manifest, _ = generate_synthetic_collection(bird, spec, prior, tmp_path)
    for entry in manifest.instances:
        kp = np.asarray(entry.keypoints)
        assert kp[:, 0].min() >= 0 and kp[:, 0].max() <= 24
        assert kp[:, 1].min() >= 0 and kp[:, 1].max() <= 24


def test_simulate_clade():
    tree = read_newick("((A:1,B:1):1,C:2);")
    base = SyntheticSpeciesSpec(seed=10, recipes={"slim": 0.05})
    specs = simulate_clade(tree, base, scale=0.02, seed=3)
    assert [s.name for s in specs] == ["A", "B", "C"]
    assert [s.seed for s in specs] == [10, 11, 12]
    for spec in specs:
        assert set(spec.recipes) == set(RECIPES)
        assert min(spec.recipes.values()) >= 0.0
    again = simulate_clade(tree, base, scale=0.02, seed=3)
    assert [s.recipes for s in again] == [s.recipes for s in specs]
