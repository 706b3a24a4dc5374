#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
fit_align.py - 單張影像的模板對齊

流程：
1. 以姿勢先驗取樣建立合成 (關鍵點, 參數) 資料庫
2. 以最近鄰查詢取得初始姿勢，並依外框重新置中平移 γ
3. 分階段最小化 E(Θ) = E_kp + E_msk + E_prior
4. 以 PCK05 與 IoU 判斷對齊是否失敗

形狀（dv、基底與係數 β）可一併傳入，held-out 擬合時 β 也可以是最佳化參數。
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from scripts.config import PipelineConfig
from scripts.errors import DivergenceError, ProjectionError, ShapeError
from scripts.eval_metrics import iou, pck
from scripts.model_annotation import AnnotatedInstance
from scripts.model_energy import EnergyWeights, PosePrior, keypoint_energy, prior_energy, silhouette_energy
from scripts.model_faiss import SynthDatabase, normalize_keypoints, query_index
from scripts.model_mesh import DTYPE, PoseParams, ShapeState, as_tensor, keypoints_3d, pose_mesh, to_numpy
from scripts.model_optim import (ParamVector, Stage, TraceEntry, clamp_positive, minimize_staged,
                                 wrap_rotations)
from scripts.model_render import Camera, project, rasterize_hard

logger = logging.getLogger(__name__)

MAX_RETRIES = 20


def root_joint(template) -> int:
    return int(np.flatnonzero(template.parent < 0)[0])


def projected_bbox(uv: np.ndarray) -> Tuple[float, float, float, float]:
    lo = uv.min(axis=0)
    hi = uv.max(axis=0)
    return (float(lo[0]), float(lo[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


def place_at_depth(template, params: PoseParams, depth: float, shape: ShapeState = None, beta=None) -> PoseParams:
    """把 γ 設為使網格頂點重心位於光軸上、深度為 depth"""
    p = params.numpy()
    p.gamma = np.zeros(3)
    with torch.no_grad():
        centroid = pose_mesh(template, p, shape, beta).numpy_vertices().mean(axis=0)
    p.gamma = np.array([0.0, 0.0, depth]) - centroid
    return p


def build_synth_db(template, prior: PosePrior, n: int, seed: int, camera: Camera,
                   canonical_depth: float = 3.0, prior_scale: float = 1.0) -> SynthDatabase:
    """以姿勢先驗取樣 n 組參數，投影關鍵點並以投影外框正規化"""
    if n < 1:
        raise ShapeError("合成資料庫大小必須 ≥ 1", code="db-size")
    rng = np.random.default_rng(seed)
    keypoints, pixels, bboxes, params = [], [], [], []
    for i in range(n):
        for attempt in range(MAX_RETRIES):
            theta, alpha = prior.sample(rng, prior_scale)
            candidate = PoseParams(theta, np.maximum(alpha, 1e-3), np.zeros(3), np.ones(2))
            candidate = place_at_depth(template, candidate, canonical_depth)
            try:
                with torch.no_grad():
                    posed = pose_mesh(template, candidate)
                    uv = to_numpy(project(camera, posed.vertices))
                    kp = to_numpy(project(camera, keypoints_3d(template, posed.vertices)))
            except ProjectionError:
                logger.debug("樣本 %d 第 %d 次取樣落在相機後方，重新取樣", i, attempt)
                continue
            break
        else:
            raise ShapeError(f"樣本 {i} 重試 {MAX_RETRIES} 次仍落在相機後方", code="db-retries")
        bbox = projected_bbox(uv)
        keypoints.append(normalize_keypoints(kp, bbox))
        pixels.append(kp)
        bboxes.append(bbox)
        params.append(candidate)
    logger.info("建立合成資料庫: %d 筆", n)
    return SynthDatabase(np.stack(keypoints), np.stack(pixels), np.asarray(bboxes), params, template.template_hash)


def init_pose(keypoints: np.ndarray, db: SynthDatabase, bbox=None) -> PoseParams:
    """可見關鍵點平均距離最近的資料庫項目的參數

    keypoints 為 (K, 3) 像素座標與可見旗標；沒有給 bbox 時視為已正規化的座標。
    """
    keypoints = np.asarray(keypoints, dtype=np.float64)
    visible = keypoints[:, 2] > 0 if keypoints.shape[1] > 2 else np.ones(len(keypoints), dtype=bool)
    query = normalize_keypoints(keypoints, bbox) if bbox is not None else keypoints[:, :2]
    best, _ = query_index(db, query, visible)[0]
    return db.params[best].numpy()


def center_translation(template, params: PoseParams, camera: Camera, bbox, shape: ShapeState = None,
                       beta=None) -> PoseParams:
    """調整 γ 使投影外框的中心與大小符合實例外框"""
    p = params.numpy()
    with torch.no_grad():
        verts = pose_mesh(template, p, shape, beta).numpy_vertices()
    uv = to_numpy(project(camera, verts))
    cur = projected_bbox(uv)
    cur_size = max(cur[2], cur[3])
    target_size = max(float(bbox[2]), float(bbox[3]))
    if cur_size <= 0 or target_size <= 0:
        return p
    centroid = verts.mean(axis=0)
    c_uv = to_numpy(project(camera, centroid[None]))[0]
    offset = np.array([cur[0] + cur[2] / 2.0, cur[1] + cur[3] / 2.0]) - c_uv
    ratio = cur_size / target_size
    depth = centroid[2] * ratio
    target_uv = np.array([bbox[0] + bbox[2] / 2.0, bbox[1] + bbox[3] / 2.0]) - offset / ratio
    cx, cy = camera.principal_point
    new_centroid = np.array([(target_uv[0] - cx) * depth / camera.focal,
                             (target_uv[1] - cy) * depth / camera.focal, depth])
    p.gamma = p.gamma + new_centroid - centroid
    return p


@dataclass
class AlignDiagnostics:
    id: str
    pck: float = 0.0
    iou: float = 0.0
    objective: float = float("nan")
    failed: bool = False
    reason: str = ""
    trace: List[TraceEntry] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"id": self.id, "pck05": self.pck, "iou": self.iou, "objective": self.objective,
                "failed": self.failed, "reason": self.reason}


def pose_param_vector(template, params: PoseParams, beta=None) -> ParamVector:
    root = root_joint(template)
    theta = np.asarray(params.theta, dtype=np.float64).reshape(-1, 3)
    others = [j for j in range(template.n_joints) if j != root]
    vec = ParamVector()
    vec.add("gamma", params.gamma)
    vec.add("theta_root", theta[root], project=wrap_rotations)
    vec.add("theta", theta[others], project=wrap_rotations)
    vec.add("alpha", params.alpha, project=clamp_positive)
    vec.add("kappa", params.kappa, project=clamp_positive)
    if beta is not None:
        vec.add("beta", beta)
    return vec


def assemble_theta(template, views: Dict[str, torch.Tensor]) -> torch.Tensor:
    """把 theta_root 與其他關節的 θ 還原成 (J, 3) 的關節順序"""
    root = root_joint(template)
    stacked = torch.cat([views["theta_root"].reshape(1, 3), views["theta"].reshape(-1, 3)])
    order = [root] + [j for j in range(template.n_joints) if j != root]
    inverse = torch.as_tensor(np.argsort(order), dtype=torch.long)
    return stacked[inverse].reshape(-1)


def params_from_vector(template, vec: ParamVector) -> PoseParams:
    views = vec.views(torch.as_tensor(vec.values, dtype=DTYPE))
    return PoseParams(theta=assemble_theta(template, views).numpy().copy(), alpha=vec.get("alpha"),
                      gamma=vec.get("gamma"), kappa=vec.get("kappa"))


def pose_objective(template, prior: PosePrior, camera: Camera, instance: AnnotatedInstance,
                   weights: EnergyWeights, shape: ShapeState, beta_fixed, beta_variances, stage: Stage,
                   sigma: float):
    """E(Θ[, β]) 的閉包；各能量項以字典回傳以便記錄"""
    inv_var = None if beta_variances is None else as_tensor(1.0 / np.maximum(beta_variances, 1e-12))

    def objective(v: Dict[str, torch.Tensor]):
        params = PoseParams(assemble_theta(template, v), v["alpha"], v["gamma"], v["kappa"])
        beta = v["beta"] if "beta" in v else beta_fixed
        posed = pose_mesh(template, params, shape, beta)
        terms = {}
        if "kp" in stage.terms:
            terms["kp"] = keypoint_energy(template, params, shape, beta, camera, instance, weights, posed=posed)
        if "prior" in stage.terms:
            terms["prior"] = prior_energy(params, prior, weights.w_prior)
        if "msk" in stage.terms and weights.w_msk:
            terms["msk"] = silhouette_energy(template, params, shape, beta, camera, instance, sigma, weights,
                                             posed=posed)
        if "beta" in stage.terms and "beta" in v and inv_var is not None:
            terms["beta"] = weights.w_beta * (v["beta"] * v["beta"] * inv_var).sum()
        return terms

    return objective


def evaluate_fit(template, params: PoseParams, shape: ShapeState, beta, camera: Camera,
                 instance: AnnotatedInstance, threshold: float = 0.05) -> Tuple[float, float]:
    """回傳 (PCK, IoU)，以實例自己的標註為真值"""
    with torch.no_grad():
        posed = pose_mesh(template, params, shape, beta)
        kp = to_numpy(project(camera, keypoints_3d(template, posed.vertices)))
    mask = rasterize_hard(posed, camera)
    return pck(kp, instance.keypoints, instance.bbox, threshold), iou(mask, instance.mask)


def fit_pose(instance: AnnotatedInstance, template, prior: PosePrior, camera: Camera, config: PipelineConfig,
             db: SynthDatabase, shape: ShapeState = None, beta=None, beta_variances=None,
             init: PoseParams = None) -> Tuple[PoseParams, Optional[np.ndarray], AlignDiagnostics]:
    """分階段擬合 Θ；beta_variances 有值時 β 也一起最佳化（以變異數縮放的 ridge 正則化）"""
    instance.validate(camera.image_size, template.n_keypoints)
    shape = shape if shape is not None else ShapeState.zeros(template)
    diag = AlignDiagnostics(id=instance.id)
    beta0 = None if beta is None else np.asarray(beta, dtype=np.float64).ravel()
    free_beta = beta_variances is not None and beta0 is not None and beta0.size > 0

    params = init if init is not None else init_pose(instance.keypoints, db, instance.bbox)
    params = center_translation(template, params, camera, instance.bbox, shape, beta0)
    vec = pose_param_vector(template, params, beta0 if free_beta else None)

    weights = config.energy_weights()

    def make_objective(stage: Stage, sigma: float):
        return pose_objective(template, prior, camera, instance, weights, shape, beta0,
                              beta_variances if free_beta else None, stage, sigma)

    try:
        vec, trace = minimize_staged(make_objective, vec, config.optim_config(), config.sigma)
    except DivergenceError as e:
        logger.warning("實例 %s 對齊發散: %s", instance.id, e)
        diag.failed, diag.reason = True, "divergence"
        diag.trace = [TraceEntry(0, i, v, {}) for i, v in enumerate(e.trace)]
        if e.params is not None:
            vec = e.params
        result = params_from_vector(template, vec)
        return result, (vec.get("beta") if free_beta else beta0), diag

    result = params_from_vector(template, vec)
    beta_out = vec.get("beta") if free_beta else beta0
    diag.trace = trace
    if trace:
        diag.objective = min(e.objective for e in trace if e.stage == trace[-1].stage)
    diag.pck, diag.iou = evaluate_fit(template, result, shape, beta_out, camera, instance, config.pck_threshold)
    if diag.pck < config.fail_pck:
        diag.failed, diag.reason = True, f"pck05={diag.pck:.3f} < {config.fail_pck}"
    elif diag.iou < config.fail_iou:
        diag.failed, diag.reason = True, f"iou={diag.iou:.3f} < {config.fail_iou}"
    if diag.failed:
        logger.warning("實例 %s 對齊失敗: %s", instance.id, diag.reason)
    return result, beta_out, diag


def align_instance(instance: AnnotatedInstance, template, prior: PosePrior, camera: Camera,
                   config: PipelineConfig, db: SynthDatabase) -> Tuple[PoseParams, AlignDiagnostics]:
    """以模板本身（dv = 0）最小化 E(Θ) 並回傳診斷資訊"""
    params, _, diag = fit_pose(instance, template, prior, camera, config, db)
    return params, diag
