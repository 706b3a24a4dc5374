import pytest

from scripts.config import PipelineConfig, format_config, load_config, parse_config
from scripts.errors import ShapeError


def test_parse_config_types_and_comments():
    config = parse_config("# 註解\nw_kp = 2.5\niters_pose=7  # 行內註解\nnormalize=false\nalgorithm=lbfgs\n")
    assert config.w_kp == 2.5
    assert config.iters_pose == 7
    assert config.normalize is False
    assert config.algorithm == "lbfgs"
    assert config.w_msk == PipelineConfig().w_msk


def test_parse_config_rejects_unknown_key():
    with pytest.raises(ShapeError) as e:
        parse_config("w_unknown=1\n")
    assert e.value.code == "config"


def test_parse_config_rejects_bad_value():
    with pytest.raises(ShapeError) as e:
        parse_config("iters_pose=many\n")
    assert e.value.code == "config"


def test_invalid_values_rejected():
    with pytest.raises(ShapeError):
        PipelineConfig(aves_source="everything")
    with pytest.raises(ShapeError):
        PipelineConfig(image_width=0)
    with pytest.raises(ShapeError):
        PipelineConfig(algorithm="sgd")


def test_flags_override_file_override_defaults(tmp_path):
    path = tmp_path / "pipeline.cfg"
    path.write_text("seed=3\nw_sym=2\n", encoding="utf-8")
    config = load_config(path, seed=9, w_edge=None)
    assert config.seed == 9
    assert config.w_sym == 2.0
    assert config.w_edge == PipelineConfig().w_edge


def test_missing_config_file(tmp_path):
    with pytest.raises(ShapeError) as e:
        load_config(tmp_path / "nope.cfg")
    assert e.value.code == "missing-file"


def test_with_overrides_unknown_key():
    with pytest.raises(ShapeError):
        PipelineConfig().with_overrides(bogus=1)


def test_format_config_reparses_to_same_values():
    config = PipelineConfig(w_kp=3.0, normalize=False, n_basis=2)
    assert parse_config(format_config(config)) == config


def test_align_stages_add_blocks_progressively():
    stages = PipelineConfig(iters_global=2, iters_pose=3, iters_silhouette=4).align_stages()
    assert [s.iters for s in stages] == [2, 3, 4]
    assert "kappa" not in stages[1].active
    assert "kappa" in stages[2].active
    assert "msk" in stages[2].terms and "msk" not in stages[0].terms
