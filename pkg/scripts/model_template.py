#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_template.py - 關節模板模型

此模組定義可關節化的模板網格 (TemplateModel)：靜止姿勢頂點 v_bird、
骨架、蒙皮權重、關鍵點與部位群組、左右對稱配對與剛性權重。
同時提供 OBJ + JSON 附屬檔的讀寫，以及程序化生成的「合成鳥類」模板，
讓整個流程不依賴授權模型也能重現。
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import sparse

from scripts.errors import DimensionError, ShapeError

logger = logging.getLogger(__name__)

ROOT_PARENT = -1
WEIGHT_TOLERANCE = 1e-6

# 合成模板的骨架：名稱與父節點，root 同時作為後段脊椎
SYNTH_JOINTS = [
    ("root", ROOT_PARENT),
    ("spine", 0),
    ("neck", 1),
    ("head", 2),
    ("beak", 3),
    ("tail1", 0),
    ("tail2", 5),
    ("leg_l", 0),
    ("foot_l", 7),
    ("leg_r", 0),
    ("foot_r", 9),
    ("wing_l", 1),
    ("wing_r", 1),
]

SYNTH_JOINT_POSITIONS = {
    "root": (0.0, 0.0, 0.10),
    "spine": (0.0, -0.02, -0.05),
    "neck": (0.0, -0.10, -0.16),
    "head": (0.0, -0.18, -0.27),
    "beak": (0.0, -0.17, -0.38),
    "tail1": (0.0, -0.01, 0.30),
    "tail2": (0.0, -0.02, 0.42),
    "leg_l": (0.06, 0.10, 0.05),
    "foot_l": (0.06, 0.24, 0.05),
    "wing_l": (0.12, -0.05, -0.05),
}

# 身體管狀截面的控制點：z、中心 y、左右半徑、上下半徑
BODY_PROFILE = np.array([
    [-0.50, -0.17, 0.004, 0.004],
    [-0.44, -0.17, 0.015, 0.012],
    [-0.38, -0.17, 0.030, 0.025],
    [-0.33, -0.18, 0.065, 0.060],
    [-0.27, -0.18, 0.075, 0.070],
    [-0.21, -0.13, 0.055, 0.050],
    [-0.15, -0.07, 0.080, 0.090],
    [-0.05, -0.01, 0.130, 0.150],
    [0.05, 0.01, 0.140, 0.160],
    [0.15, 0.00, 0.120, 0.120],
    [0.25, -0.01, 0.070, 0.050],
    [0.32, -0.02, 0.060, 0.020],
    [0.40, -0.02, 0.070, 0.012],
    [0.50, -0.02, 0.075, 0.008],
])

# 18 個關鍵點：8 個沿用、10 個新增的慣例
KEYPOINT_NAMES = [
    "bill_tip", "forehead", "crown", "nape", "left_eye", "right_eye",
    "throat", "breast", "belly", "back", "upper_tail", "tail_tip",
    "left_wing_tip", "right_wing_tip", "left_knee", "right_knee",
    "left_foot", "right_foot",
]

BODY_LENGTH_KEYPOINTS = ("bill_tip", "tail_tip")
LEG_RIGIDITY = 10.0


@dataclass(frozen=True)
class PartGroup:
    """可沿主軸縮放的部位（喙、尾）"""

    name: str
    indices: np.ndarray
    anchor_joint: int
    anchor: np.ndarray
    axis: np.ndarray


@dataclass(frozen=True, eq=False)
class TemplateModel:
    vertices: np.ndarray
    faces: np.ndarray
    joints: np.ndarray
    parent: np.ndarray
    skin_weights: np.ndarray
    keypoint_map: List[Tuple[str, Tuple[int, ...]]]
    part_groups: Dict[str, PartGroup]
    symmetry_pairs: np.ndarray
    rigidity_weights: np.ndarray
    joint_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()
        for arr in (self.vertices, self.faces, self.joints, self.parent,
                    self.skin_weights, self.symmetry_pairs, self.rigidity_weights):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_joints(self) -> int:
        return int(self.joints.shape[0])

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoint_map)

    def validate(self):
        """檢查模板的結構不變量"""
        n = self.vertices.shape[0]
        j = self.joints.shape[0]
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise DimensionError("vertices", "(N, 3)", self.vertices.shape)
        if self.faces.size and (self.faces.ndim != 2 or self.faces.shape[1] != 3):
            raise DimensionError("faces", "(F, 3)", self.faces.shape)
        if self.parent.shape != (j,):
            raise DimensionError("parent", (j,), self.parent.shape)
        if self.skin_weights.shape != (n, j):
            raise DimensionError("skin_weights", (n, j), self.skin_weights.shape)
        if self.rigidity_weights.shape != (n,):
            raise DimensionError("rigidity_weights", (n,), self.rigidity_weights.shape)

        roots = np.flatnonzero(self.parent == ROOT_PARENT)
        if len(roots) != 1:
            raise ShapeError(f"骨架必須恰有一個根節點，實際 {len(roots)} 個", code="skeleton")
        for start in range(j):
            seen = set()
            node = start
            while node != ROOT_PARENT:
                if node in seen or not 0 <= node < j:
                    raise ShapeError(f"骨架在關節 {start} 出現循環或無效父節點", code="skeleton")
                seen.add(node)
                node = int(self.parent[node])

        if np.any(self.skin_weights < 0):
            raise ShapeError("蒙皮權重不可為負", code="skin-weights")
        row_sums = self.skin_weights.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > WEIGHT_TOLERANCE):
            bad = int(np.argmax(np.abs(row_sums - 1.0)))
            raise ShapeError(f"頂點 {bad} 的蒙皮權重總和為 {row_sums[bad]:.8f}", code="skin-weights")

        index_sets = [("faces", self.faces.ravel()), ("symmetry_pairs", self.symmetry_pairs.ravel())]
        index_sets += [(f"keypoint_map[{name}]", np.asarray(idx)) for name, idx in self.keypoint_map]
        index_sets += [(f"part_groups[{name}]", g.indices) for name, g in self.part_groups.items()]
        for name, idx in index_sets:
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ShapeError(f"{name} 含有超出範圍的頂點索引", code="index")

        mapping = self.symmetry_map
        paired = mapping >= 0
        if np.any(mapping[mapping[paired]] != np.flatnonzero(paired)):
            raise ShapeError("symmetry_pairs 不是對合映射", code="symmetry")

        for name, group in self.part_groups.items():
            if group.indices.size == 0:
                raise ShapeError(f"部位 {name} 沒有頂點", code="part-group")
            if not 0 <= group.anchor_joint < j:
                raise ShapeError(f"部位 {name} 的錨點關節無效", code="part-group")

    @cached_property
    def symmetry_map(self) -> np.ndarray:
        """頂點 → 對稱頂點 (無配對為 -1)"""
        mapping = np.full(self.vertices.shape[0], -1, dtype=np.int64)
        for p, q in self.symmetry_pairs:
            if mapping[p] == q and mapping[q] == p:
                continue
            if mapping[p] >= 0 or mapping[q] >= 0:
                raise ShapeError(f"頂點 {p} 或 {q} 出現在多個對稱配對中", code="symmetry")
            mapping[p] = q
            mapping[q] = p
        return mapping

    @cached_property
    def edges(self) -> np.ndarray:
        """由三角面導出的無向邊 (p < q)"""
        if self.faces.size == 0:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def adjacency(self) -> sparse.csr_matrix:
        n = self.n_vertices
        e = self.edges
        data = np.ones(2 * len(e))
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def joint_order(self) -> List[int]:
        """父節點在前的關節順序"""
        children = {i: [] for i in range(self.n_joints)}
        for i, p in enumerate(self.parent.tolist()):
            if p != ROOT_PARENT:
                children[p].append(i)
        order = [int(np.flatnonzero(self.parent == ROOT_PARENT)[0])]
        for node in order:
            order.extend(children[node])
        return order

    @cached_property
    def joint_regressor(self) -> np.ndarray:
        """欄正規化的蒙皮權重 (N, J)，用於關節位置隨形狀移動"""
        col = self.skin_weights.sum(axis=0)
        col = np.where(col > 0, col, 1.0)
        return self.skin_weights / col[None, :]

    def keypoint_indices(self, name: str) -> Tuple[int, ...]:
        for kp_name, idx in self.keypoint_map:
            if kp_name == name:
                return idx
        raise ShapeError(f"模板沒有名為 {name} 的關鍵點", code="keypoint")

    def keypoint_matrix(self) -> np.ndarray:
        """(K, N) 平均矩陣，列乘以頂點即得關鍵點"""
        mat = np.zeros((self.n_keypoints, self.n_vertices))
        for k, (_, idx) in enumerate(self.keypoint_map):
            mat[k, list(idx)] = 1.0 / len(idx)
        return mat

    def body_length(self, vertices: np.ndarray = None) -> float:
        """喙尖到尾尖的距離（靜止姿勢）"""
        v = self.vertices if vertices is None else np.asarray(vertices)
        a, b = (v[list(self.keypoint_indices(name))].mean(axis=0) for name in BODY_LENGTH_KEYPOINTS)
        return float(np.linalg.norm(a - b))

    @cached_property
    def template_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.vertices, self.faces, self.parent, self.skin_weights):
            h.update(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())
        return h.hexdigest()


def resolve_part_group(name: str, indices: Sequence[int], anchor_joint: int,
                       vertices: np.ndarray, joints: np.ndarray) -> PartGroup:
    """以部位靜止頂點的主軸作為縮放方向，方向朝離開錨點的一側"""
    idx = np.asarray(sorted(set(int(i) for i in indices)), dtype=np.int64)
    anchor = np.array(joints[anchor_joint], dtype=np.float64)
    pts = vertices[idx]
    if len(idx) == 1:
        axis = pts[0] - anchor
    else:
        centered = pts - pts.mean(axis=0)
        _, _, vt = np.linalg.svd(centered, full_matrices=False)
        axis = vt[0]
    norm = np.linalg.norm(axis)
    axis = axis / norm if norm > 0 else np.array([0.0, 0.0, 1.0])
    if np.dot(pts.mean(axis=0) - anchor, axis) < 0:
        axis = -axis
    return PartGroup(name=name, indices=idx, anchor_joint=int(anchor_joint), anchor=anchor, axis=axis)


# ---------------------------------------------------------------------------
# OBJ + JSON 附屬檔
# ---------------------------------------------------------------------------

def write_obj(path: Path, vertices: np.ndarray, faces: np.ndarray):
    """寫出 OBJ（1-based 索引，浮點數以 17 位有效數字保存以確保可逆）"""
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in np.asarray(vertices, dtype=np.float64).tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces, dtype=np.int64).tolist()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_obj(path: Path) -> Tuple[np.ndarray, np.ndarray]:
    """讀取 OBJ 的 v/f 記錄，其他記錄略過；多邊形以扇形切成三角形"""
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                for i in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[i], idx[i + 1]])
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


def template_to_sidecar(template: TemplateModel) -> dict:
    rows, cols = np.nonzero(template.skin_weights)
    return {
        "joint_names": list(template.joint_names),
        "joints": template.joints.tolist(),
        "parent": template.parent.tolist(),
        "skin_weights": {
            "shape": list(template.skin_weights.shape),
            "rows": rows.tolist(),
            "cols": cols.tolist(),
            "values": template.skin_weights[rows, cols].tolist(),
        },
        "keypoint_map": [{"name": name, "vertices": list(idx)} for name, idx in template.keypoint_map],
        "part_groups": {
            name: {"vertices": g.indices.tolist(), "anchor_joint": g.anchor_joint}
            for name, g in template.part_groups.items()
        },
        "symmetry_pairs": template.symmetry_pairs.tolist(),
        "rigidity_weights": template.rigidity_weights.tolist(),
    }


def template_from_arrays(vertices: np.ndarray, faces: np.ndarray, sidecar: dict) -> TemplateModel:
    vertices = np.asarray(vertices, dtype=np.float64)
    joints = np.asarray(sidecar["joints"], dtype=np.float64).reshape(-1, 3)
    sw = sidecar["skin_weights"]
    weights = sparse.coo_matrix(
        (np.asarray(sw["values"], dtype=np.float64), (np.asarray(sw["rows"]), np.asarray(sw["cols"]))),
        shape=tuple(sw["shape"]),
    ).toarray()
    groups = {
        name: resolve_part_group(name, g["vertices"], int(g["anchor_joint"]), vertices, joints)
        for name, g in sidecar["part_groups"].items()
    }
    return TemplateModel(
        vertices=vertices,
        faces=np.asarray(faces, dtype=np.int64).reshape(-1, 3),
        joints=joints,
        parent=np.asarray(sidecar["parent"], dtype=np.int64),
        skin_weights=weights,
        keypoint_map=[(kp["name"], tuple(int(i) for i in kp["vertices"])) for kp in sidecar["keypoint_map"]],
        part_groups=groups,
        symmetry_pairs=np.asarray(sidecar["symmetry_pairs"], dtype=np.int64).reshape(-1, 2),
        rigidity_weights=np.asarray(sidecar["rigidity_weights"], dtype=np.float64),
        joint_names=list(sidecar.get("joint_names") or [f"joint{i}" for i in range(len(joints))]),
    )


def save_template(template: TemplateModel, obj_path: Path):
    """寫出 <name>.obj 與同名 <name>.json 附屬檔"""
    obj_path = Path(obj_path)
    obj_path.parent.mkdir(parents=True, exist_ok=True)
    write_obj(obj_path, template.vertices, template.faces)
    with open(obj_path.with_suffix(".json"), "w", encoding="utf-8") as f:
        json.dump(template_to_sidecar(template), f, indent=1)


def load_template(obj_path: Path) -> TemplateModel:
    obj_path = Path(obj_path)
    sidecar_path = obj_path.with_suffix(".json")
    if not obj_path.exists() or not sidecar_path.exists():
        raise ShapeError(f"找不到模板檔案 ({obj_path}) 或附屬檔 ({sidecar_path})", code="missing-file")
    vertices, faces = read_obj(obj_path)
    with open(sidecar_path, "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    template = template_from_arrays(vertices, faces, sidecar)
    logger.info("載入模板 %s: %d 頂點, %d 面, %d 關節", obj_path.name,
                template.n_vertices, len(template.faces), template.n_joints)
    return template


# ---------------------------------------------------------------------------
# 合成鳥類模板
# ---------------------------------------------------------------------------

def _tube(centers: np.ndarray, radii_u: np.ndarray, radii_w: np.ndarray, u: np.ndarray, w: np.ndarray,
          segments: int, start_apex: np.ndarray, end_apex: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """沿中心線建立兩端封閉的管狀網格，頂點順序為 [起點, 環..., 終點]"""
    phi = 2.0 * np.pi * np.arange(segments) / segments
    rings = (centers[:, None, :]
             + radii_u[:, None, None] * np.sin(phi)[None, :, None] * u[None, None, :]
             - radii_w[:, None, None] * np.cos(phi)[None, :, None] * w[None, None, :])
    verts = np.concatenate([start_apex[None], rings.reshape(-1, 3), end_apex[None]])

    def ring(r, k):
        return 1 + r * segments + (k % segments)

    n_rings = len(centers)
    last = 1 + n_rings * segments
    faces = []
    for k in range(segments):
        faces.append((0, ring(0, k + 1), ring(0, k)))
        faces.append((last, ring(n_rings - 1, k), ring(n_rings - 1, k + 1)))
        for r in range(n_rings - 1):
            a, b = ring(r, k), ring(r, k + 1)
            c, d = ring(r + 1, k + 1), ring(r + 1, k)
            faces.append((a, b, c))
            faces.append((a, c, d))
    return verts, np.array(faces, dtype=np.int64)


def _chain_weights(z: np.ndarray, chain_z: np.ndarray) -> np.ndarray:
    """沿身體鏈在最近兩個關節間線性混合的權重"""
    order = np.argsort(chain_z)
    zs = chain_z[order]
    weights = np.zeros((len(z), len(chain_z)))
    for i, zi in enumerate(z):
        if zi <= zs[0]:
            weights[i, order[0]] = 1.0
        elif zi >= zs[-1]:
            weights[i, order[-1]] = 1.0
        else:
            k = int(np.searchsorted(zs, zi)) - 1
            t = (zi - zs[k]) / (zs[k + 1] - zs[k])
            weights[i, order[k]] = 1.0 - t
            weights[i, order[k + 1]] = t
    return weights


def make_synthetic_bird(n_rings: int = 20, ring_segments: int = 12, limb_segments: int = 6) -> TemplateModel:
    """程序化生成合成鳥類模板（13 關節、18 關鍵點、左右對稱）

    座標：x 為左右 (鏡射面 x=0)，y 朝下，z 由喙指向尾。
    """
    if ring_segments % 2 or limb_segments < 3 or n_rings < 4:
        raise ShapeError("ring_segments 必須為偶數、limb_segments ≥ 3、n_rings ≥ 4", code="template")

    names = [name for name, _ in SYNTH_JOINTS]
    parent = np.array([p for _, p in SYNTH_JOINTS], dtype=np.int64)
    positions = dict(SYNTH_JOINT_POSITIONS)
    for side in ("leg", "foot", "wing"):
        x, y, z = positions[f"{side}_l"]
        positions[f"{side}_r"] = (-x, y, z)
    joints = np.array([positions[name] for name in names], dtype=np.float64)
    jid = {name: i for i, name in enumerate(names)}

    # 身體：喙尖 → 尾尖
    z_rings = np.linspace(-0.47, 0.47, n_rings)
    prof = np.stack([np.interp(z_rings, BODY_PROFILE[:, 0], BODY_PROFILE[:, c]) for c in (1, 2, 3)], axis=1)
    centers = np.stack([np.zeros(n_rings), prof[:, 0], z_rings], axis=1)
    body_v, body_f = _tube(
        centers, prof[:, 1], prof[:, 2],
        np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), ring_segments,
        np.array([0.0, BODY_PROFILE[0, 1], -0.5]), np.array([0.0, BODY_PROFILE[-1, 1], 0.5]),
    )

    # 左腿（沿 y 向下）與左翼（沿 z 向後）
    leg_y = np.array([0.08, 0.16, 0.24, 0.30])
    leg_centers = np.stack([np.full(4, 0.06), leg_y, np.full(4, 0.05)], axis=1)
    leg_v, leg_f = _tube(
        leg_centers, np.array([0.025, 0.018, 0.012, 0.015]), np.array([0.025, 0.018, 0.012, 0.035]),
        np.array([1.0, 0.0, 0.0]), np.array([0.0, 0.0, 1.0]), limb_segments,
        np.array([0.06, 0.06, 0.05]), np.array([0.06, 0.31, 0.04]),
    )
    wing_z = np.linspace(-0.08, 0.36, 6)
    wing_centers = np.stack([np.linspace(0.13, 0.15, 6), np.linspace(-0.06, -0.02, 6), wing_z], axis=1)
    wing_v, wing_f = _tube(
        wing_centers, np.full(6, 0.015), np.linspace(0.06, 0.02, 6),
        np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), limb_segments,
        np.array([0.13, -0.07, -0.10]), np.array([0.15, -0.02, 0.40]),
    )

    mirror = np.array([-1.0, 1.0, 1.0])
    blocks = [
        ("body", body_v, body_f),
        ("leg_l", leg_v, leg_f), ("leg_r", leg_v * mirror, leg_f[:, ::-1]),
        ("wing_l", wing_v, wing_f), ("wing_r", wing_v * mirror, wing_f[:, ::-1]),
    ]
    offsets, verts, faces, start = {}, [], [], 0
    for name, v, f in blocks:
        offsets[name] = (start, start + len(v))
        verts.append(v)
        faces.append(f + start)
        start += len(v)
    vertices = np.concatenate(verts)
    faces = np.concatenate(faces)
    n = len(vertices)

    # 蒙皮權重
    weights = np.zeros((n, len(names)))
    chain = ["beak", "head", "neck", "spine", "root", "tail1", "tail2"]
    b0, b1 = offsets["body"]
    cw = _chain_weights(vertices[b0:b1, 2], joints[[jid[c] for c in chain], 2])
    for k, c in enumerate(chain):
        weights[b0:b1, jid[c]] = cw[:, k]
    for side in ("l", "r"):
        l0, l1 = offsets[f"leg_{side}"]
        t = np.clip((vertices[l0:l1, 1] - 0.17) / 0.07, 0.0, 1.0)
        weights[l0:l1, jid[f"leg_{side}"]] = 1.0 - t
        weights[l0:l1, jid[f"foot_{side}"]] = t
        w0, w1 = offsets[f"wing_{side}"]
        weights[w0:w1, jid[f"wing_{side}"]] = 1.0

    # 對稱配對：身體環上 k ↔ (M-k) % M，四肢左右逐一對應
    pairs = [(0, 0), (b1 - 1, b1 - 1)]
    m = ring_segments
    for r in range(n_rings):
        for k in range(m // 2 + 1):
            pairs.append((1 + r * m + k, 1 + r * m + (m - k) % m))
    for limb in ("leg", "wing"):
        l0, l1 = offsets[f"{limb}_l"]
        r0, _ = offsets[f"{limb}_r"]
        pairs += [(l0 + i, r0 + i) for i in range(l1 - l0)]
    symmetry_pairs = np.array(pairs, dtype=np.int64)

    rigidity = np.ones(n)
    for side in ("l", "r"):
        l0, l1 = offsets[f"leg_{side}"]
        rigidity[l0:l1] = LEG_RIGIDITY

    # 關鍵點：取最接近目標位置的頂點
    sym = np.full(n, -1, dtype=np.int64)
    sym[symmetry_pairs[:, 0]] = symmetry_pairs[:, 1]
    sym[symmetry_pairs[:, 1]] = symmetry_pairs[:, 0]

    def nearest(target, lo, hi):
        return int(lo + np.argmin(np.linalg.norm(vertices[lo:hi] - np.asarray(target), axis=1)))

    l_leg0, l_leg1 = offsets["leg_l"]
    l_wing0, l_wing1 = offsets["wing_l"]
    left = {
        "bill_tip": 0,
        "forehead": nearest((0.0, -0.23, -0.34), b0, b1),
        "crown": nearest((0.0, -0.26, -0.27), b0, b1),
        "nape": nearest((0.0, -0.20, -0.20), b0, b1),
        "left_eye": nearest((0.07, -0.20, -0.30), b0, b1),
        "throat": nearest((0.0, -0.11, -0.30), b0, b1),
        "breast": nearest((0.0, 0.08, -0.12), b0, b1),
        "belly": nearest((0.0, 0.17, 0.05), b0, b1),
        "back": nearest((0.0, -0.16, 0.05), b0, b1),
        "upper_tail": nearest((0.0, -0.04, 0.30), b0, b1),
        "tail_tip": b1 - 1,
        "left_wing_tip": l_wing1 - 1,
        "left_knee": nearest((0.07, 0.16, 0.05), l_leg0, l_leg1),
        "left_foot": l_leg1 - 1,
    }
    kp = {}
    for name in KEYPOINT_NAMES:
        if name in left:
            kp[name] = left[name]
        else:
            kp[name] = int(sym[left[name.replace("right", "left")]])
    keypoint_map = [(name, (kp[name],)) for name in KEYPOINT_NAMES]

    beak = [i for i in range(b0, b1) if vertices[i, 2] < joints[jid["beak"], 2]]
    tail = [i for i in range(b0, b1) if vertices[i, 2] > joints[jid["tail1"], 2]]
    groups = {
        "beak": resolve_part_group("beak", beak, jid["beak"], vertices, joints),
        "tail": resolve_part_group("tail", tail, jid["tail1"], vertices, joints),
    }

    return TemplateModel(
        vertices=vertices,
        faces=faces,
        joints=joints,
        parent=parent,
        skin_weights=weights,
        keypoint_map=keypoint_map,
        part_groups=groups,
        symmetry_pairs=symmetry_pairs,
        rigidity_weights=rigidity,
        joint_names=names,
    )
