#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_energy.py - 目標函數的各個能量項

包含對齊用的關鍵點 (Geman-McClure)、輪廓 (smooth L1)、Mahalanobis 姿勢先驗，
形狀學習用的平滑項 (邊、Laplacian、ARAP、對稱)，以及基底的軟正交項。
所有能量皆以 torch 計算，可直接反向傳播。
"""

import logging
import weakref
from dataclasses import asdict, dataclass, fields
from typing import Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

from scripts.errors import AnnotationError, DimensionError, ShapeError
from scripts.model_annotation import AnnotatedInstance
from scripts.model_mesh import DTYPE, PoseParams, ShapeState, as_tensor, keypoints_3d, pose_mesh
from scripts.model_render import Camera, project, render_soft_silhouette
from scripts.model_template import TemplateModel

logger = logging.getLogger(__name__)

DEGENERATE_RING = 1e-20


@dataclass
class EnergyWeights:
    w_kp: float = 1.0
    w_msk: float = 50.0
    w_prior: float = 1.0
    w_edge: float = 5.0
    w_lap: float = 50.0
    w_arap: float = 1.0
    w_sym: float = 10.0
    w_ortho: float = 0.0
    w_beta: float = 1.0
    gm_sigma: Optional[float] = None  # None 表示依實例外框自動決定
    gm_sigma_fraction: float = 0.05
    huber_delta: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name.startswith("w_") and value < 0:
                raise ShapeError(f"權重 {f.name} 不可為負", code="weights")
        if self.gm_sigma is not None and self.gm_sigma <= 0:
            raise ShapeError("gm_sigma 必須為正", code="weights")
        if self.huber_delta <= 0 or self.gm_sigma_fraction <= 0:
            raise ShapeError("huber_delta 與 gm_sigma_fraction 必須為正", code="weights")

    def sigma_for(self, annotation: AnnotatedInstance) -> float:
        return self.gm_sigma if self.gm_sigma is not None else annotation.gm_sigma(self.gm_sigma_fraction)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class PosePrior:
    """θ 與 α 的高斯先驗（平均與共變異數）"""

    theta_mean: np.ndarray
    theta_cov: np.ndarray
    alpha_mean: np.ndarray
    alpha_cov: np.ndarray

    def __post_init__(self):
        self.theta_mean = np.asarray(self.theta_mean, dtype=np.float64).ravel()
        self.alpha_mean = np.asarray(self.alpha_mean, dtype=np.float64).ravel()
        self.theta_cov = np.asarray(self.theta_cov, dtype=np.float64)
        self.alpha_cov = np.asarray(self.alpha_cov, dtype=np.float64)
        for name, mean, cov in (("theta", self.theta_mean, self.theta_cov), ("alpha", self.alpha_mean, self.alpha_cov)):
            if cov.shape != (len(mean), len(mean)):
                raise DimensionError(f"{name}_cov", (len(mean), len(mean)), cov.shape)
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ShapeError(f"{name} 共變異數不對稱", code="prior")
            if np.linalg.eigvalsh(cov).min() <= 0:
                raise ShapeError(f"{name} 共變異數不是正定矩陣", code="prior")
        self.theta_precision = np.linalg.inv(self.theta_cov)
        self.alpha_precision = np.linalg.inv(self.alpha_cov)

    def sample(self, rng: np.random.Generator, scale: float = 1.0):
        theta = rng.multivariate_normal(self.theta_mean, self.theta_cov * scale ** 2, method="cholesky")
        alpha = rng.multivariate_normal(self.alpha_mean, self.alpha_cov * scale ** 2, method="cholesky")
        return theta, alpha

    def to_dict(self) -> dict:
        return {"theta_mean": self.theta_mean.tolist(), "theta_cov": self.theta_cov.tolist(),
                "alpha_mean": self.alpha_mean.tolist(), "alpha_cov": self.alpha_cov.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PosePrior":
        return cls(data["theta_mean"], data["theta_cov"], data["alpha_mean"], data["alpha_cov"])


# 各關節的角度標準差 (弧度)；未列出者使用 DEFAULT_JOINT_STD
JOINT_STD = {"root": 0.15, "neck": 0.2, "head": 0.2, "tail1": 0.15, "tail2": 0.15, "wing_l": 0.1, "wing_r": 0.1}
DEFAULT_JOINT_STD = 0.1
ALPHA_STD = 0.05
SIDE_VIEW_ROOT = (0.0, np.pi / 2.0, 0.0)


def default_prior(template: TemplateModel, root_rotation=SIDE_VIEW_ROOT) -> PosePrior:
    """合成模板使用的對角先驗，根關節平均轉為側視"""
    j = template.n_joints
    names = template.joint_names or [f"joint{i}" for i in range(j)]
    std = np.repeat([JOINT_STD.get(n, DEFAULT_JOINT_STD) for n in names], 3)
    theta_mean = np.zeros(3 * j)
    root = int(np.flatnonzero(template.parent < 0)[0])
    theta_mean[3 * root:3 * root + 3] = root_rotation
    return PosePrior(theta_mean, np.diag(std ** 2), np.ones(j), np.diag(np.full(j, ALPHA_STD ** 2)))


# ---------------------------------------------------------------------------
# 對齊項
# ---------------------------------------------------------------------------

def geman_mcclure(err_sq: torch.Tensor, sigma: float) -> torch.Tensor:
    """ρ(e) = e²σ² / (e² + σ²)，輸入為 e²"""
    s2 = sigma * sigma
    return err_sq * s2 / (err_sq + s2)


def keypoint_residual_energy(pred_uv, keypoints: np.ndarray, sigma: float) -> torch.Tensor:
    """Σ_visible ρ(‖pred - gt‖)；不可見的關鍵點貢獻 0"""
    keypoints = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    visible = keypoints[:, 2] > 0
    if not visible.any():
        raise AnnotationError("沒有可見關鍵點，實例無法用於對齊")
    pred = as_tensor(pred_uv).reshape(-1, 2)
    if pred.shape[0] != len(keypoints):
        raise DimensionError("keypoints", pred.shape[0], len(keypoints))
    idx = torch.as_tensor(np.flatnonzero(visible))
    diff = pred[idx] - as_tensor(keypoints[visible, :2])
    return geman_mcclure((diff * diff).sum(dim=1), sigma).sum()


def keypoint_energy(template: TemplateModel, params: PoseParams, shape: ShapeState, beta, camera: Camera,
                    annotation: AnnotatedInstance, weights: EnergyWeights = None, posed=None) -> torch.Tensor:
    weights = weights or EnergyWeights()
    if not annotation.visible.any():
        raise AnnotationError(f"實例 {annotation.id} 沒有可見關鍵點，無法用於對齊")
    posed = posed if posed is not None else pose_mesh(template, params, shape, beta)
    uv = project(camera, keypoints_3d(template, posed.vertices))
    return weights.w_kp * keypoint_residual_energy(uv, annotation.keypoints, weights.sigma_for(annotation))


def mask_residual_energy(rendered: torch.Tensor, target, w_msk: float, delta: float) -> torch.Tensor:
    """λ_msk · mean_p L_δ(R(p) - S(p))"""
    target = as_tensor(target)
    if tuple(rendered.shape) != tuple(target.shape):
        raise DimensionError("mask", tuple(rendered.shape), tuple(target.shape))
    return w_msk * F.smooth_l1_loss(rendered, target, beta=delta, reduction="mean")


def silhouette_energy(template: TemplateModel, params: PoseParams, shape: ShapeState, beta, camera: Camera,
                      annotation: AnnotatedInstance, sigma: float, weights: EnergyWeights = None,
                      posed=None) -> torch.Tensor:
    weights = weights or EnergyWeights()
    if annotation.image_size != tuple(camera.image_size):
        raise DimensionError(f"{annotation.id}.mask", tuple(camera.image_size), annotation.image_size)
    posed = posed if posed is not None else pose_mesh(template, params, shape, beta)
    rendered = render_soft_silhouette(posed, camera, sigma)
    return mask_residual_energy(rendered, annotation.mask.astype(np.float64), weights.w_msk, weights.huber_delta)


def mahalanobis(x: torch.Tensor, mean: np.ndarray, precision: np.ndarray) -> torch.Tensor:
    d = as_tensor(x).reshape(-1) - as_tensor(mean)
    return d @ (as_tensor(precision) @ d)


def prior_energy(params: PoseParams, prior: PosePrior, w_prior: float = 1.0) -> torch.Tensor:
    return w_prior * (mahalanobis(params.theta, prior.theta_mean, prior.theta_precision)
                      + mahalanobis(params.alpha, prior.alpha_mean, prior.alpha_precision))


# ---------------------------------------------------------------------------
# 平滑項
# ---------------------------------------------------------------------------

class MeshTopology:
    """能量項共用的網格拓樸 (tensor 形式)"""

    def __init__(self, template: TemplateModel):
        n = template.n_vertices
        edges = template.edges
        self.edges = torch.as_tensor(edges, dtype=torch.long)

        adj = template.adjacency.tocoo()
        deg = np.asarray(template.adjacency.sum(axis=1)).ravel()
        inv_deg = np.where(deg > 0, 1.0 / np.where(deg > 0, deg, 1.0), 0.0)
        rows = np.concatenate([np.arange(n), adj.row])
        cols = np.concatenate([np.arange(n), adj.col])
        vals = np.concatenate([(deg > 0).astype(np.float64), -inv_deg[adj.row]])
        self.laplacian = torch.sparse_coo_tensor(np.stack([rows, cols]), vals, (n, n), dtype=DTYPE).coalesce()

        directed = np.concatenate([edges, edges[:, ::-1]]) if len(edges) else np.zeros((0, 2), dtype=np.int64)
        self.src = torch.as_tensor(np.ascontiguousarray(directed[:, 0]), dtype=torch.long)
        self.dst = torch.as_tensor(np.ascontiguousarray(directed[:, 1]), dtype=torch.long)
        rest = as_tensor(template.vertices)
        self.rest_edges = rest[self.src] - rest[self.dst]
        self.rigidity = as_tensor(template.rigidity_weights)
        self.n_vertices = n

        mapping = template.symmetry_map
        paired = np.flatnonzero(mapping >= 0)
        partner = mapping[paired]
        self.sym_p = torch.as_tensor(paired[paired < partner], dtype=torch.long)
        self.sym_q = torch.as_tensor(partner[paired < partner], dtype=torch.long)
        self.sym_mid = torch.as_tensor(paired[paired == partner], dtype=torch.long)


_TOPOLOGY: "weakref.WeakKeyDictionary[TemplateModel, MeshTopology]" = weakref.WeakKeyDictionary()


def topology(template: TemplateModel) -> MeshTopology:
    topo = _TOPOLOGY.get(template)
    if topo is None:
        topo = MeshTopology(template)
        _TOPOLOGY[template] = topo
    return topo


def _reshape_vertices(x, template: TemplateModel, name: str) -> torch.Tensor:
    x = as_tensor(x)
    if x.numel() != 3 * template.n_vertices:
        raise DimensionError(name, 3 * template.n_vertices, tuple(x.shape))
    return x.reshape(-1, 3)


def _safe_norm(x: torch.Tensor, dim=None) -> torch.Tensor:
    sq = (x * x).sum(dim=dim) if dim is not None else (x * x).sum()
    positive = sq > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def edge_energy(dv, template: TemplateModel) -> torch.Tensor:
    """Σ_(p,q) ‖dv_p - dv_q‖₂ （非平方）"""
    dv = _reshape_vertices(dv, template, "dv")
    topo = topology(template)
    diff = dv[topo.edges[:, 0]] - dv[topo.edges[:, 1]]
    return _safe_norm(diff, dim=1).sum()


def laplacian_energy(dv, template: TemplateModel) -> torch.Tensor:
    """‖L·dv‖²，L 為均勻圖 Laplacian (dv_p - 鄰點平均)"""
    dv = _reshape_vertices(dv, template, "dv")
    lap = torch.sparse.mm(topology(template).laplacian, dv)
    return (lap * lap).sum()


class ArapEnergy:
    """as-rigid-as-possible：每個頂點的一環鄰域以 SVD 求最佳旋轉"""

    def __init__(self, template: TemplateModel):
        self.template = template
        self.topo = topology(template)
        self.degenerate_count = 0

    def rotations(self, v_shape: torch.Tensor):
        topo = self.topo
        with torch.no_grad():
            deformed = v_shape[topo.src] - v_shape[topo.dst]
            outer = topo.rest_edges[:, :, None] * deformed[:, None, :]
            cov = torch.zeros((topo.n_vertices, 3, 3), dtype=DTYPE).index_add_(0, topo.src, outer)
            degenerate = cov.reshape(-1, 9).abs().sum(dim=1) < DEGENERATE_RING
            u, _, vh = torch.linalg.svd(cov)
            rot = vh.transpose(-2, -1) @ u.transpose(-2, -1)
            flip = torch.det(rot) < 0
            if flip.any():
                u = u.clone()
                u[flip, :, -1] *= -1.0
                rot = vh.transpose(-2, -1) @ u.transpose(-2, -1)
        return rot, degenerate

    def __call__(self, v_shape) -> torch.Tensor:
        v_shape = _reshape_vertices(v_shape, self.template, "v_shape")
        topo = self.topo
        if len(topo.src) == 0:
            return torch.zeros((), dtype=DTYPE)
        rot, degenerate = self.rotations(v_shape)
        n_bad = int(degenerate[torch.unique(topo.src)].sum())
        if n_bad:
            self.degenerate_count += n_bad
            logger.warning("ARAP: %d 個頂點的一環鄰域退化，貢獻設為 0", n_bad)
        deformed = v_shape[topo.src] - v_shape[topo.dst]
        residual = deformed - (rot[topo.src] @ topo.rest_edges[:, :, None])[:, :, 0]
        weight = topo.rigidity * (~degenerate).to(DTYPE)
        return (weight[topo.src] * (residual * residual).sum(dim=1)).sum()


_ARAP: "weakref.WeakKeyDictionary[TemplateModel, ArapEnergy]" = weakref.WeakKeyDictionary()


def arap_energy(v_shape, template: TemplateModel) -> torch.Tensor:
    term = _ARAP.get(template)
    if term is None:
        term = ArapEnergy(template)
        _ARAP[template] = term
    return term(v_shape)


def symmetry_energy(v_shape, template: TemplateModel) -> torch.Tensor:
    """Σ 非中線配對 ‖v_p - mirror(v_q)‖² + Σ 中線頂點 2·x_p²，mirror 取負 x"""
    v = _reshape_vertices(v_shape, template, "v_shape")
    topo = topology(template)
    mirror = as_tensor([-1.0, 1.0, 1.0])
    diff = v[topo.sym_p] - v[topo.sym_q] * mirror
    mid = v[topo.sym_mid, 0]
    return (diff * diff).sum() + 2.0 * (mid * mid).sum()


def ortho_energy(basis) -> torch.Tensor:
    """‖VᵀV - I‖_F"""
    v = as_tensor(basis)
    if v.dim() != 2 or v.shape[1] < 1:
        raise DimensionError("basis", "(3N, K≥1)", tuple(v.shape))
    gram = v.T @ v - torch.eye(v.shape[1], dtype=DTYPE)
    return _safe_norm(gram)


def smoothing_energy(displacement, v_shape, template: TemplateModel, weights: EnergyWeights) -> Dict[str, torch.Tensor]:
    """E_sm 的各項：邊與 Laplacian 作用在位移上，ARAP 與對稱作用在形狀上"""
    terms = {}
    if weights.w_edge:
        terms["edge"] = weights.w_edge * edge_energy(displacement, template)
    if weights.w_lap:
        terms["lap"] = weights.w_lap * laplacian_energy(displacement, template)
    if weights.w_arap:
        terms["arap"] = weights.w_arap * arap_energy(v_shape, template)
    if weights.w_sym:
        terms["sym"] = weights.w_sym * symmetry_energy(v_shape, template)
    return terms
