"""測試用的小工具"""

import numpy as np

from scripts.model_template import TemplateModel


def tiny_template(vertices, faces, pairs=()) -> TemplateModel:
    """單一根關節、沒有部位群組的手工模板"""
    vertices = np.asarray(vertices, dtype=np.float64)
    n = len(vertices)
    return TemplateModel(
        vertices=vertices,
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        joints=np.zeros((1, 3)),
        parent=np.array([-1]),
        skin_weights=np.ones((n, 1)),
        keypoint_map=[("a", (0,))],
        part_groups={},
        symmetry_pairs=np.asarray(pairs, dtype=np.int64).reshape(-1, 2),
        rigidity_weights=np.ones(n),
        joint_names=["root"],
    )


def chain_template() -> TemplateModel:
    """兩根骨頭的鏈：根關節在原點、子關節在 (1, 0, 0)，硬性蒙皮"""
    vertices = np.array([[0.5, 0.1, 0.0], [1.5, 0.0, 0.0], [2.0, 0.2, 0.1]])
    return TemplateModel(
        vertices=vertices,
        faces=np.array([[0, 1, 2]], dtype=np.int64),
        joints=np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        parent=np.array([-1, 0]),
        skin_weights=np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]),
        keypoint_map=[("a", (0,))],
        part_groups={},
        symmetry_pairs=np.zeros((0, 2), dtype=np.int64),
        rigidity_weights=np.ones(3),
        joint_names=["root", "child"],
    )
