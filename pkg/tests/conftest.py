"""共用的小型模板、相機與設定"""

import pytest

from scripts.config import PipelineConfig
from scripts.model_energy import default_prior
from scripts.model_render import Camera
from scripts.model_template import make_synthetic_bird


@pytest.fixture(scope="session")
def bird():
    return make_synthetic_bird(n_rings=6, ring_segments=6, limb_segments=3)


@pytest.fixture(scope="session")
def prior(bird):
    return default_prior(bird)


@pytest.fixture(scope="session")
def camera():
    return Camera.default(32, 32)


@pytest.fixture
def fast_config():
    return PipelineConfig(iters_global=5, iters_pose=5, iters_silhouette=3, shape_iters=5, db_size=40,
                          image_width=32, image_height=32, n_basis=1, aves_rank=2, fail_pck=0.0, fail_iou=0.0)
