import numpy as np
import pytest

from scripts.errors import ShapeError
from scripts.eval_phylo import (LambdaResult, TraitMatrix, ancestral_states, lambda_transform, load_tree,
                                pagels_lambda, read_newick, read_traits)

PAIRS = "((A:0.05,B:0.05):1,(C:0.05,D:0.05):1,(E:0.05,F:0.05):1,(G:0.05,H:0.05):1);"


def test_covariance_is_shared_path_length():
    tree = read_newick("((A:1,B:1):1,C:2);")
    assert tree.leaf_names == ["A", "B", "C"]
    np.testing.assert_allclose(tree.covariance(), [[2, 1, 0], [1, 2, 0], [0, 0, 2]])


def test_tree_validation():
    with pytest.raises(ShapeError) as e:
        read_newick("((A:1,A:1):1,C:2);")
    assert e.value.code == "tree"
    with pytest.raises(ShapeError):
        read_newick("((A:1,B:-1):1,C:2);")


def test_load_tree_missing(tmp_path):
    with pytest.raises(ShapeError) as e:
        load_tree(tmp_path / "tree.nwk")
    assert e.value.code == "missing-file"


def test_lambda_transform_keeps_diagonal():
    cov = np.array([[2.0, 1.0], [1.0, 3.0]])
    np.testing.assert_allclose(lambda_transform(cov, 0.0), np.diag([2.0, 3.0]))
    np.testing.assert_allclose(lambda_transform(cov, 1.0), cov)
    np.testing.assert_allclose(lambda_transform(cov, 0.5), [[2.0, 0.5], [0.5, 3.0]])


def test_strong_signal_gives_high_lambda():
    tree = read_newick(PAIRS)
    values = {"A": 0.0, "B": 0.1, "C": 5.0, "D": 5.1, "E": -3.0, "F": -2.9, "G": 2.0, "H": 2.1}
    traits = TraitMatrix(list(values), np.array(list(values.values())))
    result = pagels_lambda(tree, traits)
    assert result.lambdas[0] > 0.8
    assert result.p_values[0] < 0.05
    assert result.log_likelihood[0] >= result.log_likelihood_null[0]
    assert result.pooled_p == result.p_values[0]


def test_constant_trait_has_no_signal():
    tree = read_newick(PAIRS)
    traits = TraitMatrix(list("ABCDEFGH"), np.ones(8))
    result = pagels_lambda(tree, traits)
    assert result.lambdas[0] == 0.0
    assert result.p_values[0] == 1.0


def test_star_tree_has_no_signal():
    tree = read_newick("(A:1,B:1,C:1,D:1);")
    result = pagels_lambda(tree, TraitMatrix(list("ABCD"), np.array([1.0, 4.0, 2.0, 8.0])))
    assert result.lambdas[0] == 0.0
    assert result.p_values[0] == 1.0


def _balanced_newick(depth: int) -> str:
    leaves = iter(range(2 ** depth))

    def node(level):
        if level == depth:
            return f"s{next(leaves):02d}:1"
        return f"({node(level + 1)},{node(level + 1)}):1"

    return node(0)[:-2] + ";"


def test_lambda_recovers_brownian_signal_and_its_absence():
    tree = read_newick(_balanced_newick(5))
    cov = tree.covariance()
    rng = np.random.default_rng(2024)
    brownian = np.linalg.cholesky(cov) @ rng.normal(size=(tree.n_leaves, 20))
    independent = np.sqrt(np.diag(cov))[:, None] * rng.normal(size=(tree.n_leaves, 20))

    signal = pagels_lambda(tree, TraitMatrix(tree.leaf_names, brownian))
    assert signal.mean_lambda > 0.6
    assert signal.pooled_p < 1e-3

    noise = pagels_lambda(tree, TraitMatrix(tree.leaf_names, independent))
    assert noise.mean_lambda < 0.4
    assert np.mean(noise.p_values > 0.05) >= 0.75


def test_lambda_needs_four_species():
    tree = read_newick("((A:1,B:1):1,C:2);")
    with pytest.raises(ShapeError) as e:
        pagels_lambda(tree, TraitMatrix(list("ABC"), np.arange(3.0)))
    assert e.value.code == "too-few-species"


def test_species_must_match_leaves():
    tree = read_newick(PAIRS)
    with pytest.raises(ShapeError) as e:
        pagels_lambda(tree, TraitMatrix(list("ABCDEFGX"), np.arange(8.0)))
    assert e.value.code == "species-mismatch"


def test_fisher_pooled_p():
    result = LambdaResult(["a", "b"], np.array([0.5, 0.7]), np.array([0.01, 0.5]), np.zeros(2), np.zeros(2))
    assert 0.02 < result.pooled_p < 0.05
    assert result.mean_lambda == pytest.approx(0.6)
    assert list(result.to_frame().columns[:3]) == ["trait", "lambda", "p_value"]


def test_ancestral_two_leaves_is_gls_mean():
    tree = read_newick("(A:1,B:3);")
    frame = ancestral_states(tree, TraitMatrix(["B", "A"], np.array([5.0, 1.0])))
    assert list(frame["node"]) == ["node0"]
    assert frame["trait0"].iloc[0] == pytest.approx(2.0)


def test_ancestral_three_leaves():
    tree = read_newick("((A:1,B:1):1,C:2);")
    frame = ancestral_states(tree, TraitMatrix(list("ABC"), np.array([1.0, 3.0, 5.0])))
    assert list(frame["node"]) == ["node0", "node1"]
    np.testing.assert_allclose(frame["trait0"], [23 / 7, 17 / 7])


def test_read_traits(tmp_path):
    path = tmp_path / "traits.csv"
    path.write_text("species,pc0,pc1\nA,1.0,2.0\nB,3.0,4.0\n", encoding="utf-8")
    traits = read_traits(path)
    assert traits.species == ["A", "B"]
    assert traits.columns == ["pc0", "pc1"]
    np.testing.assert_allclose(traits.ordered(["B", "A"]), [[3.0, 4.0], [1.0, 2.0]])
    bad = tmp_path / "bad.csv"
    bad.write_text("name,pc0\nA,1\n", encoding="utf-8")
    with pytest.raises(ShapeError):
        read_traits(bad)
