import json

import numpy as np
import pandas as pd
import pytest

from scripts import cli
from scripts.fit_shape import MultiSpeciesModel
from scripts.io_files import read_model, write_model
from scripts.model_template import read_obj, save_template

FAST_CONFIG = """\
iters_global=5
iters_pose=5
iters_silhouette=3
shape_iters=5
db_size=40
fail_pck=0
fail_iou=0
"""


def test_missing_manifest_reports_error_code(tmp_path, capsys):
    code = cli.main(["align", str(tmp_path / "manifest.json"), "--out", str(tmp_path / "out")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error code=missing-file ")


def test_bad_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("nonsense=1\n", encoding="utf-8")
    code = cli.main(["--config", str(cfg), "align", str(tmp_path / "m.json"), "--out", str(tmp_path)])
    assert code == 1
    assert "error code=config" in capsys.readouterr().err


def test_analyze_needs_model_or_traits(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.main(["analyze", "--tree", str(tmp_path / "t.nwk"), "--out", str(tmp_path)])
    assert e.value.code == 2


def test_analyze_traits_csv(tmp_path):
    (tmp_path / "tree.nwk").write_text("((A:1,B:1):1,(C:1,D:1):1);\n", encoding="utf-8")
    pd.DataFrame({"species": list("ABCD"), "wing": [1.0, 1.2, 3.0, 3.1], "tail": [0.5, 0.1, 0.9, 0.2]}).to_csv(
        tmp_path / "traits.csv", index=False)
    out = tmp_path / "analysis"
    code = cli.main(["analyze", "--tree", str(tmp_path / "tree.nwk"), "--traits", str(tmp_path / "traits.csv"),
                     "--out", str(out)])
    assert code == 0
    lam = pd.read_csv(out / "lambda.csv")
    assert set(lam["set"]) == {"traits", "embedding"}
    assert list(lam.loc[lam["set"] == "traits", "trait"]) == ["wing", "tail"]
    assert lam["lambda"].between(0.0, 1.0).all()
    summary = pd.read_csv(out / "lambda_summary.csv")
    assert list(summary["set"]) == ["traits", "embedding"]
    ancestral = pd.read_csv(out / "ancestral.csv")
    assert set(ancestral["node"]) == {"node0", "node1", "node2"}
    assert list(pd.read_csv(out / "embedding.csv").columns) == ["species", "x", "y"]
    assert (out / "embedding.svg").read_text(encoding="utf-8").lstrip().startswith("<?xml")


def write_aves(tmp_path, bird):
    save_template(bird, tmp_path / "template.obj")
    n = bird.vertices.size
    component = np.zeros((n, 1))
    component[0, 0] = 1.0
    model = MultiSpeciesModel(bird.template_hash, bird.vertices.ravel().copy(), component, np.array([4.0]),
                              ["a", "b"], np.array([[2.0], [-2.0]]), normalized=False)
    write_model(tmp_path / "aves.json", model)


def test_export_pca_extremes(tmp_path, bird):
    write_aves(tmp_path, bird)
    code = cli.main(["export", "--template", str(tmp_path / "template.obj"), "--model", str(tmp_path / "aves.json"),
                     "--mode", "pca", "--component", "0", "--std", "1.5", "--out", str(tmp_path / "obj")])
    assert code == 0
    plus, faces = read_obj(tmp_path / "obj" / "pc0_plus1.5std.obj")
    minus, _ = read_obj(tmp_path / "obj" / "pc0_minus1.5std.obj")
    np.testing.assert_array_equal(faces, bird.faces)
    # 1.5 × sqrt(4) = 3，只移動第一個頂點的 x
    assert plus[0, 0] == pytest.approx(bird.vertices[0, 0] + 3.0)
    assert minus[0, 0] == pytest.approx(bird.vertices[0, 0] - 3.0)
    np.testing.assert_allclose(plus[1:], bird.vertices[1:])


def test_export_rejects_component_beyond_rank(tmp_path, bird, capsys):
    write_aves(tmp_path, bird)
    code = cli.main(["export", "--template", str(tmp_path / "template.obj"), "--model", str(tmp_path / "aves.json"),
                     "--mode", "pca", "--component", "1", "--out", str(tmp_path / "obj")])
    assert code == 1
    assert "error code=component" in capsys.readouterr().err


@pytest.mark.slow
def test_synth_align_mean_basis_export(tmp_path):
    cfg = tmp_path / "fast.cfg"
    cfg.write_text(FAST_CONFIG, encoding="utf-8")
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "sp", "seed": 1, "count": 4, "image_size": [32, 32],
                                "recipes": {"slim": 0.05}}), encoding="utf-8")
    data, align = tmp_path / "data", tmp_path / "align"
    manifest = str(data / "manifest.json")

    def run(*argv):
        assert cli.main(["--config", str(cfg), *argv]) == 0

    run("synth", str(spec), "--out", str(data))
    run("align", manifest, "--out", str(align), "--trace")
    report = json.loads((align / "align_report.json").read_text(encoding="utf-8"))
    assert report["n"] == 4 and report["n_failed"] == 0
    params = json.loads((align / "params" / "sp_0000.json").read_text(encoding="utf-8"))
    assert "trace" not in params["diagnostics"]
    trace = pd.read_csv(align / "align_trace.csv")
    assert trace.columns[0] == "id"
    assert set(trace["id"]) == {"sp_0000", "sp_0001", "sp_0002", "sp_0003"}

    run("mean", manifest, "--align", str(align), "--out", str(tmp_path / "mean.json"))
    assert (tmp_path / "mean.report.json").exists()
    run("basis", manifest, "--align", str(align), "--mean", str(tmp_path / "mean.json"), "--k", "1",
        "--out", str(tmp_path / "species.json"))
    species = read_model(tmp_path / "species.json")
    assert species.basis.shape[1] == 1
    assert species.has_pca

    run("eval", manifest, "--pred", str(align), "--out", str(tmp_path / "eval.csv"))
    assert len(pd.read_csv(tmp_path / "eval.csv")) == 4
    run("export", "--template", str(data / "template.obj"), "--model", str(tmp_path / "mean.json"),
        "--out", str(tmp_path / "obj"))
    vertices, _ = read_obj(tmp_path / "obj" / "mean.obj")
    assert np.all(np.isfinite(vertices))


def test_fit_rejects_model_for_another_template(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "sp", "count": 1, "image_size": [16, 16]}), encoding="utf-8")
    assert cli.main(["synth", str(spec), "--out", str(tmp_path / "data")]) == 0
    model = MultiSpeciesModel("not-this-template", np.zeros(3), np.zeros((3, 1)), np.ones(1), ["a", "b"],
                              np.zeros((2, 1)), normalized=False)
    write_model(tmp_path / "aves.json", model)
    capsys.readouterr()
    code = cli.main(["fit", str(tmp_path / "data" / "manifest.json"), "--model", str(tmp_path / "aves.json"),
                     "--out", str(tmp_path / "fit")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error code=hash-mismatch ")


def test_fit_rejects_a_normalized_model(tmp_path, capsys):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"name": "sp", "count": 2, "image_size": [16, 16]}), encoding="utf-8")
    assert cli.main(["synth", str(spec), "--out", str(tmp_path / "data")]) == 0
    _, template = cli.load_dataset(tmp_path / "data" / "manifest.json")
    n3 = 3 * template.n_vertices
    model = MultiSpeciesModel(template.template_hash, template.vertices.ravel(), np.zeros((n3, 1)), np.ones(1),
                              ["a", "b"], np.zeros((2, 1)), normalized=True)
    write_model(tmp_path / "aves.json", model)
    capsys.readouterr()
    code = cli.main(["fit", str(tmp_path / "data" / "manifest.json"), "--model", str(tmp_path / "aves.json"),
                     "--out", str(tmp_path / "fit")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error code=normalized-model ")
    assert not (tmp_path / "fit" / "metrics.csv").exists()
