#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_mesh.py - 形狀變形與關節姿勢函數 M(θ, α, γ, κ)

此模組以 torch (float64) 實作：
1. 形狀變形 v_bird + dv + Vβ
2. 喙與尾的局部長度縮放 κ
3. 關節位置隨形狀重新推導、骨長縮放 α
4. 軸角前向運動學與線性混合蒙皮 (LBS)，最後加上平移 γ

所有函數皆為純函數，對輸入參數可微分。
"""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import torch

from scripts.errors import DimensionError, ShapeError
from scripts.model_template import PartGroup, TemplateModel

DTYPE = torch.float64
SMALL_ANGLE_SQ = 1e-16  # 角度 < 1e-8 時改用二階泰勒展開

ArrayLike = Union[np.ndarray, torch.Tensor, list, tuple]


def as_tensor(x: ArrayLike) -> torch.Tensor:
    """轉成 float64 tensor，已是 float64 tensor 時保留計算圖"""
    if isinstance(x, torch.Tensor):
        return x if x.dtype == DTYPE else x.to(DTYPE)
    return torch.tensor(np.asarray(x, dtype=np.float64), dtype=DTYPE)


@dataclass
class PoseParams:
    """單一實例的姿勢狀態 Θ = {θ, α, γ, κ}"""

    theta: ArrayLike
    alpha: ArrayLike
    gamma: ArrayLike
    kappa: ArrayLike

    @classmethod
    def neutral(cls, template: TemplateModel) -> "PoseParams":
        j = template.n_joints
        return cls(theta=np.zeros(3 * j), alpha=np.ones(j), gamma=np.zeros(3), kappa=np.ones(2))

    def validate(self, template: TemplateModel):
        j = template.n_joints
        for name, size in (("theta", 3 * j), ("alpha", j), ("gamma", 3), ("kappa", 2)):
            value = to_numpy(getattr(self, name))
            if value.size != size:
                raise DimensionError(name, size, value.shape)
        alpha = np.asarray(to_numpy(self.alpha))
        kappa = np.asarray(to_numpy(self.kappa))
        if np.any(alpha <= 0) or np.any(kappa <= 0):
            raise ShapeError("alpha 與 kappa 必須為正", code="pose-params")
        if not np.all(np.isfinite(to_numpy(self.theta))):
            raise ShapeError("theta 含非有限值", code="pose-params")

    def numpy(self) -> "PoseParams":
        return PoseParams(*(np.array(to_numpy(getattr(self, k)), dtype=np.float64).ravel()
                            for k in ("theta", "alpha", "gamma", "kappa")))

    def to_dict(self) -> dict:
        p = self.numpy()
        return {k: getattr(p, k).tolist() for k in ("theta", "alpha", "gamma", "kappa")}

    @classmethod
    def from_dict(cls, data: dict) -> "PoseParams":
        return cls(*(np.asarray(data[k], dtype=np.float64) for k in ("theta", "alpha", "gamma", "kappa")))


@dataclass
class ShapeState:
    """平均位移 dv (N, 3) 與形狀基底 V (3N, K)"""

    dv: ArrayLike
    basis: ArrayLike = field(default_factory=lambda: np.zeros((0, 0)))

    @classmethod
    def zeros(cls, template: TemplateModel, k: int = 0) -> "ShapeState":
        n = template.n_vertices
        return cls(dv=np.zeros((n, 3)), basis=np.zeros((3 * n, k)))

    @property
    def n_basis(self) -> int:
        shape = tuple(self.basis.shape)
        return int(shape[1]) if len(shape) == 2 else 0


def to_numpy(x: ArrayLike) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def rodrigues(axis_angle: torch.Tensor) -> torch.Tensor:
    """軸角 (..., 3) → 旋轉矩陣 (..., 3, 3)，小角度用泰勒展開避免奇異點"""
    aa = as_tensor(axis_angle)
    angle_sq = (aa * aa).sum(dim=-1)
    small = angle_sq < SMALL_ANGLE_SQ
    safe_sq = torch.where(small, torch.ones_like(angle_sq), angle_sq)
    angle = torch.sqrt(safe_sq)
    a = torch.where(small, 1.0 - angle_sq / 6.0, torch.sin(angle) / angle)
    b = torch.where(small, 0.5 - angle_sq / 24.0, (1.0 - torch.cos(angle)) / safe_sq)

    x, y, z = aa[..., 0], aa[..., 1], aa[..., 2]
    zero = torch.zeros_like(x)
    k = torch.stack([zero, -z, y, z, zero, -x, -y, x, zero], dim=-1).reshape(aa.shape[:-1] + (3, 3))
    eye = torch.eye(3, dtype=DTYPE).expand_as(k)
    return eye + a[..., None, None] * k + b[..., None, None] * (k @ k)


def wrap_axis_angle(axis_angle: torch.Tensor) -> torch.Tensor:
    """把角度大於 π 的軸角換成等價的反向表示，使 |θ_j| ≤ π"""
    aa = as_tensor(axis_angle).reshape(-1, 3)
    angle = aa.norm(dim=-1, keepdim=True)
    over = angle > np.pi
    scale = torch.where(over, (angle - 2.0 * np.pi) / torch.where(over, angle, torch.ones_like(angle)),
                        torch.ones_like(angle))
    return (aa * scale).reshape(axis_angle.shape)


def apply_shape(template: TemplateModel, shape: ShapeState, beta: Optional[ArrayLike] = None) -> torch.Tensor:
    """v_bird + dv + V·β，回傳 (N, 3)"""
    n = template.n_vertices
    dv = as_tensor(shape.dv)
    if dv.numel() != 3 * n:
        raise DimensionError("dv", 3 * n, tuple(dv.shape))
    v = as_tensor(template.vertices) + dv.reshape(n, 3)

    k = shape.n_basis
    if beta is None:
        beta = torch.zeros(k, dtype=DTYPE)
    beta = as_tensor(beta).reshape(-1)
    if k == 0:
        if beta.numel() != 0:
            raise DimensionError("beta", 0, beta.numel())
        return v
    basis = as_tensor(shape.basis)
    if basis.shape[0] != 3 * n:
        raise DimensionError("basis", (3 * n, k), tuple(basis.shape))
    if beta.numel() != k:
        raise DimensionError("beta", k, beta.numel())
    return v + (basis @ beta).reshape(n, 3)


def scale_part(vertices: torch.Tensor, group: PartGroup, scale: ArrayLike) -> torch.Tensor:
    """沿部位主軸、以錨點關節為原點縮放部位頂點，其他頂點不變"""
    scale = as_tensor(scale).reshape(())
    if not bool(scale > 0):
        raise ShapeError(f"部位 {group.name} 的縮放值必須為正，實際 {float(scale)}", code="part-scale")
    if group.indices.size == 0:
        raise ShapeError(f"部位 {group.name} 沒有頂點", code="part-group")
    v = as_tensor(vertices)
    idx = torch.as_tensor(group.indices, dtype=torch.long)
    anchor = as_tensor(group.anchor)
    axis = as_tensor(group.axis)
    rel = v[idx] - anchor
    along = rel @ axis
    moved = anchor + rel + ((scale - 1.0) * along)[:, None] * axis
    out = v.clone()
    out[idx] = moved
    return out


def regress_joints(template: TemplateModel, vertices: torch.Tensor) -> torch.Tensor:
    """關節隨頂點的蒙皮加權平均位移移動"""
    disp = as_tensor(vertices) - as_tensor(template.vertices)
    return as_tensor(template.joints) + as_tensor(template.joint_regressor).T @ disp


def forward_kinematics(template: TemplateModel, rest_joints: torch.Tensor, theta: ArrayLike,
                       alpha: ArrayLike):
    """回傳世界座標的關節旋轉 (J, 3, 3) 與姿勢後的關節位置 (J, 3)

    骨長縮放 α_j 作用在關節 j 相對父節點的位移，並沿樹狀結構往下傳遞。
    """
    j = template.n_joints
    rot = rodrigues(as_tensor(theta).reshape(j, 3))
    alpha = as_tensor(alpha).reshape(j)
    rest_joints = as_tensor(rest_joints)
    world_rot = [None] * j
    world_pos = [None] * j
    for i in template.joint_order:
        p = int(template.parent[i])
        if p < 0:
            world_rot[i] = rot[i]
            world_pos[i] = rest_joints[i]
        else:
            offset = alpha[i] * (rest_joints[i] - rest_joints[p])
            world_rot[i] = world_rot[p] @ rot[i]
            world_pos[i] = world_pos[p] + world_rot[p] @ offset
    return torch.stack(world_rot), torch.stack(world_pos)


def linear_blend_skinning(template: TemplateModel, vertices: torch.Tensor, rest_joints: torch.Tensor,
                          world_rot: torch.Tensor, world_pos: torch.Tensor) -> torch.Tensor:
    """v' = Σ_j w_ij (R_j (v_i - J_j) + P_j)"""
    w = as_tensor(template.skin_weights)
    trans = world_pos - (world_rot @ as_tensor(rest_joints)[:, :, None])[:, :, 0]
    blended_rot = (w @ world_rot.reshape(-1, 9)).reshape(-1, 3, 3)
    return (blended_rot @ as_tensor(vertices)[:, :, None])[:, :, 0] + w @ trans


@dataclass
class PosedMesh:
    vertices: torch.Tensor
    faces: np.ndarray
    joints: torch.Tensor

    def numpy_vertices(self) -> np.ndarray:
        return to_numpy(self.vertices)


def rest_shape(template: TemplateModel, params: PoseParams, shape: ShapeState,
               beta: Optional[ArrayLike] = None) -> torch.Tensor:
    """姿勢前的形狀：apply_shape → 喙縮放 κ₁ → 尾縮放 κ₂"""
    kappa = as_tensor(params.kappa).reshape(2)
    v = apply_shape(template, shape, beta)
    if "beak" in template.part_groups:
        v = scale_part(v, template.part_groups["beak"], kappa[0])
    if "tail" in template.part_groups:
        v = scale_part(v, template.part_groups["tail"], kappa[1])
    return v


def pose_mesh(template: TemplateModel, params: PoseParams, shape: Optional[ShapeState] = None,
              beta: Optional[ArrayLike] = None) -> PosedMesh:
    """完整的 M(θ, α, γ, κ)：形狀 → 部位縮放 → 關節 → 骨長 → FK → LBS → 平移"""
    if shape is None:
        shape = ShapeState.zeros(template)
    v = rest_shape(template, params, shape, beta)
    joints = regress_joints(template, v)
    world_rot, world_pos = forward_kinematics(template, joints, params.theta, params.alpha)
    posed = linear_blend_skinning(template, v, joints, world_rot, world_pos)
    gamma = as_tensor(params.gamma).reshape(1, 3)
    return PosedMesh(vertices=posed + gamma, faces=template.faces, joints=world_pos + gamma)


def keypoints_3d(template: TemplateModel, vertices: torch.Tensor) -> torch.Tensor:
    """(K, 3) 關鍵點 = 對應頂點集合的平均"""
    return as_tensor(template.keypoint_matrix()) @ as_tensor(vertices)
