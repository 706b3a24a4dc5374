#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
fit_shape.py - 物種形狀學習

固定每個實例的對齊姿勢 Θ 後：
1. fit_species_mean 學習物種平均位移 dv
2. fit_individuals 聯合學習形狀基底 V 與每個實例的係數 β
3. relearn_pca 以重建形狀重新學習平均與主成分
4. build_multispecies 在所有物種（或所有個體）上建立多物種 PCA 形狀空間
5. fit_model_to_instance 以固定的模型擬合新的實例（Θ 與 β）
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import linalg

from scripts.config import PipelineConfig
from scripts.errors import ModelMismatchError, ShapeError
from scripts.fit_align import evaluate_fit, fit_pose
from scripts.model_annotation import AnnotatedInstance
from scripts.model_energy import (PosePrior, keypoint_energy, ortho_energy, silhouette_energy,
                                  smoothing_energy)
from scripts.model_faiss import SynthDatabase
from scripts.model_mesh import DTYPE, PoseParams, ShapeState, as_tensor, pose_mesh
from scripts.model_optim import ParamVector, minimize
from scripts.model_render import Camera
from scripts.model_template import TemplateModel

logger = logging.getLogger(__name__)

EIGEN_TOLERANCE = 1e-12  # 相對於最大特徵值，低於此值的成分視為 0
BASIS_INIT_SCALE = 1e-3  # V 初始值的標準差 = 1e-3 × 身體長度

Aligned = Sequence[Tuple[AnnotatedInstance, PoseParams]]


def check_template_hash(model_hash: str, template: TemplateModel):
    if model_hash != template.template_hash:
        raise ModelMismatchError(f"模型的模板雜湊 {model_hash[:12]} 與模板 {template.template_hash[:12]} 不一致")


@dataclass
class PCAResult:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (D, C) 單位正交
    variances: np.ndarray  # (C,) 遞減

    @property
    def rank(self) -> int:
        return int(self.components.shape[1])

    def project(self, shapes: np.ndarray) -> np.ndarray:
        x = np.asarray(shapes, dtype=np.float64).reshape(-1, len(self.mean))
        return (x - self.mean) @ self.components

    def reconstruct(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.asarray(coeffs, dtype=np.float64).reshape(-1, self.rank)
        return self.mean + c @ self.components.T


def relearn_pca(shapes, k: Optional[int] = None) -> PCAResult:
    """樣本平均與共變異數的特徵分解；樣本數遠小於維度時經由 Gram 矩陣計算

    保留的秩為 min(k, 樣本數 - 1)，並去除數值上為 0 的變異數。
    """
    x = np.asarray(shapes, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    m = x.shape[0]
    if m < 2:
        raise ShapeError(f"PCA 至少需要 2 個形狀，實際 {m}", code="pca")
    mean = x.mean(axis=0)
    centered = x - mean
    gram = centered @ centered.T / (m - 1)
    vals, vecs = linalg.eigh(gram)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]

    limit = m - 1 if k is None else min(int(k), m - 1)
    scale = float(np.mean(x * x)) * x.shape[1]
    keep = vals > EIGEN_TOLERANCE * max(vals[0], scale)
    keep[limit:] = False
    vals, vecs = vals[keep], vecs[:, keep]

    components = centered.T @ vecs / np.sqrt((m - 1) * vals)[None, :]
    components, _ = np.linalg.qr(components) if components.shape[1] else (components, None)
    for i in range(components.shape[1]):
        if components[np.argmax(np.abs(components[:, i])), i] < 0:
            components[:, i] = -components[:, i]
    return PCAResult(mean=mean, components=components, variances=vals.copy())


@dataclass
class SpeciesModel:
    """物種模型：平均位移 dv、基底 V、每個樣本的 β，以及重新學習後的 PCA 欄位"""

    template_hash: str
    dv: np.ndarray  # (N, 3)
    basis: np.ndarray  # (3N, K)
    betas: np.ndarray  # (M, K)
    sample_ids: List[str] = field(default_factory=list)
    species: str = ""
    pca_mean: Optional[np.ndarray] = None  # (3N,)
    pca_components: Optional[np.ndarray] = None  # (3N, C)
    pca_variances: Optional[np.ndarray] = None  # (C,)
    normalized: bool = False

    @property
    def has_pca(self) -> bool:
        return self.pca_mean is not None

    @property
    def variances(self) -> np.ndarray:
        return self.pca_variances if self.has_pca else np.zeros(0)

    def check_template(self, template: TemplateModel):
        check_template_hash(self.template_hash, template)

    def reconstructions(self, template: TemplateModel) -> np.ndarray:
        """每個訓練樣本的 v_bird + dv + Vβ⁽ⁱ⁾ (M, N, 3)"""
        base = template.vertices + self.dv
        if self.basis.shape[1] == 0 or len(self.betas) == 0:
            return np.repeat(base[None], max(len(self.betas), 1), axis=0)
        return base[None] + (self.betas @ self.basis.T).reshape(len(self.betas), -1, 3)

    def mean_vertices(self, template: TemplateModel) -> np.ndarray:
        if self.has_pca:
            return self.pca_mean.reshape(-1, 3)
        return template.vertices + self.dv

    def shape_state(self, template: TemplateModel) -> ShapeState:
        """擬合用的形狀：有 PCA 時以 PCA 平均與主成分為準"""
        if self.has_pca:
            return ShapeState(dv=self.pca_mean.reshape(-1, 3) - template.vertices, basis=self.pca_components)
        return ShapeState(dv=self.dv, basis=np.zeros((self.dv.size, 0)))

    def components(self) -> PCAResult:
        if not self.has_pca:
            raise ShapeError("模型尚未重新學習 PCA", code="no-pca")
        return PCAResult(self.pca_mean, self.pca_components, self.pca_variances)


@dataclass
class MultiSpeciesModel:
    """多物種 PCA 形狀空間"""

    template_hash: str
    mean: np.ndarray  # (3N,)
    components: np.ndarray  # (3N, C)
    variances: np.ndarray  # (C,)
    species: List[str]
    coefficients: np.ndarray  # (S, C)
    normalized: bool = True
    source: str = "means"

    def check_template(self, template: TemplateModel):
        check_template_hash(self.template_hash, template)

    def shape_state(self, template: TemplateModel) -> ShapeState:
        return ShapeState(dv=self.mean.reshape(-1, 3) - template.vertices, basis=self.components)

    def pca(self) -> PCAResult:
        return PCAResult(self.mean, self.components, self.variances)


# ---------------------------------------------------------------------------
# 平均形狀
# ---------------------------------------------------------------------------

def _check_aligned(aligned: Aligned, minimum: int, what: str):
    if len(aligned) < minimum:
        raise ShapeError(f"{what}至少需要 {minimum} 個成功對齊的實例，實際 {len(aligned)}", code="too-few-instances")


def _fit_sigma(config: PipelineConfig) -> float:
    """形狀學習使用對齊最後一個階段的 σ"""
    return config.sigma * config.sigma_anneal ** (len(config.align_stages()) - 1)


def _data_terms(template, params, shape, beta, camera, instance, sigma, weights):
    posed = pose_mesh(template, params, shape, beta)
    kp = keypoint_energy(template, params, shape, beta, camera, instance, weights, posed=posed)
    if not weights.w_msk:
        return kp, torch.zeros((), dtype=DTYPE)
    return kp, silhouette_energy(template, params, shape, beta, camera, instance, sigma, weights, posed=posed)


def mean_ious(aligned: Aligned, template, camera: Camera, shape: ShapeState, betas=None) -> List[float]:
    out = []
    for i, (instance, params) in enumerate(aligned):
        beta = None if betas is None else betas[i]
        out.append(evaluate_fit(template, params, shape, beta, camera, instance)[1])
    return out


@dataclass
class ShapeFitReport:
    iou_before: List[float]
    iou_after: List[float]
    trace: List[float]

    def summary(self) -> dict:
        return {"iou_before": float(np.mean(self.iou_before)), "iou_after": float(np.mean(self.iou_after)),
                "iterations": len(self.trace)}


def fit_species_mean(aligned: Aligned, template: TemplateModel, camera: Camera,
                     config: PipelineConfig) -> Tuple[np.ndarray, ShapeFitReport]:
    """固定所有 Θ⁽ⁱ⁾，最小化 Σ_i (E_kp + E_msk) + E_sm 求 dv"""
    _check_aligned(aligned, 2, "平均形狀")
    weights = config.energy_weights()
    sigma = _fit_sigma(config)
    rest = as_tensor(template.vertices)
    n = template.n_vertices

    def objective(v):
        dv = v["dv"]
        shape = ShapeState(dv=dv)
        kp_total, msk_total = torch.zeros((), dtype=DTYPE), torch.zeros((), dtype=DTYPE)
        for instance, params in aligned:
            kp, msk = _data_terms(template, params, shape, None, camera, instance, sigma, weights)
            kp_total, msk_total = kp_total + kp, msk_total + msk
        terms = {"kp": kp_total, "msk": msk_total}
        terms.update(smoothing_energy(dv, rest + dv, template, weights))
        return terms

    vec = ParamVector().add("dv", np.zeros((n, 3)))
    before = mean_ious(aligned, template, camera, ShapeState.zeros(template))
    vec, trace = minimize(objective, vec, config.shape_optim_config())
    dv = vec.get("dv")
    after = mean_ious(aligned, template, camera, ShapeState(dv=dv))
    report = ShapeFitReport(before, after, trace)
    logger.info("平均形狀: IoU %.4f → %.4f (%d 次迭代)", np.mean(before), np.mean(after), len(trace))
    return dv, report


# ---------------------------------------------------------------------------
# 個體基底
# ---------------------------------------------------------------------------

def reconstruct_shapes(template: TemplateModel, dv, basis, betas) -> np.ndarray:
    return SpeciesModel("", np.asarray(dv), np.asarray(basis), np.asarray(betas)).reconstructions(template)


def fit_individuals(aligned: Aligned, template: TemplateModel, camera: Camera, dv: np.ndarray, k: int,
                    config: PipelineConfig, seed: int = 0, init_basis: Optional[np.ndarray] = None,
                    freeze_basis: bool = False) -> Tuple[np.ndarray, np.ndarray, ShapeFitReport]:
    """聯合最小化 Σ_i (E_kp + E_msk + E_sm)(V, β⁽ⁱ⁾)，Θ 與 dv 固定"""
    m = len(aligned)
    if k < 1:
        raise ShapeError("基底數量 K 必須 ≥ 1", code="basis-size")
    if k >= m:
        raise ShapeError(f"基底數量 K={k} 必須小於實例數 {m}", code="basis-size")
    n = template.n_vertices
    weights = config.energy_weights()
    sigma = _fit_sigma(config)
    rest = as_tensor(template.vertices)
    dv_t = as_tensor(np.asarray(dv, dtype=np.float64).reshape(n, 3))

    if init_basis is None:
        rng = np.random.default_rng(seed)
        init_basis = rng.normal(0.0, BASIS_INIT_SCALE * template.body_length(), size=(3 * n, k))

    def objective(v):
        basis, betas = v["V"], v["beta"]
        terms = {"kp": torch.zeros((), dtype=DTYPE), "msk": torch.zeros((), dtype=DTYPE)}
        for i, (instance, params) in enumerate(aligned):
            shape = ShapeState(dv=dv_t, basis=basis)
            kp, msk = _data_terms(template, params, shape, betas[i], camera, instance, sigma, weights)
            terms["kp"] = terms["kp"] + kp
            terms["msk"] = terms["msk"] + msk
            disp = dv_t + (basis @ betas[i]).reshape(n, 3)
            for name, value in smoothing_energy(disp, rest + disp, template, weights).items():
                terms[name] = terms.get(name, torch.zeros((), dtype=DTYPE)) + value
        if weights.w_ortho:
            terms["ortho"] = weights.w_ortho * ortho_energy(basis)
        return terms

    vec = ParamVector().add("V", init_basis, frozen=freeze_basis).add("beta", np.zeros((m, k)))
    mean_only = mean_ious(aligned, template, camera, ShapeState(dv=dv))
    vec, trace = minimize(objective, vec, config.shape_optim_config())
    basis, betas = vec.get("V"), vec.get("beta")
    after = mean_ious(aligned, template, camera, ShapeState(dv=dv, basis=basis), betas)
    logger.info("個體基底 K=%d: IoU %.4f → %.4f (%d 次迭代)", k, np.mean(mean_only), np.mean(after), len(trace))
    return basis, betas, ShapeFitReport(mean_only, after, trace)


def build_species_model(template: TemplateModel, dv: np.ndarray, basis: np.ndarray, betas: np.ndarray,
                        sample_ids: Sequence[str], species: str = "", k: Optional[int] = None) -> SpeciesModel:
    """組成 SpeciesModel 並以重建形狀重新學習 PCA"""
    model = SpeciesModel(template.template_hash, np.asarray(dv, dtype=np.float64).reshape(-1, 3),
                         np.asarray(basis, dtype=np.float64), np.asarray(betas, dtype=np.float64),
                         list(sample_ids), species)
    shapes = model.reconstructions(template)
    if len(shapes) >= 2:
        pca = relearn_pca(shapes, k if k is not None else model.basis.shape[1])
        model.pca_mean, model.pca_components, model.pca_variances = pca.mean, pca.components, pca.variances
    return model


# ---------------------------------------------------------------------------
# 多物種模型
# ---------------------------------------------------------------------------

def normalize_body_length(template: TemplateModel, vertices: np.ndarray) -> np.ndarray:
    """移到頂點重心為原點並縮放，使喙尖到尾尖距離為 1"""
    v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    length = template.body_length(v)
    if length <= 0:
        raise ShapeError("身體長度為 0，無法正規化", code="body-length")
    return (v - v.mean(axis=0)) / length


def build_multispecies(models: Sequence[SpeciesModel], template: TemplateModel, normalize: bool = True,
                       rank: Optional[int] = None, source: str = "means") -> MultiSpeciesModel:
    """在物種平均形狀（或所有個體重建形狀）上做 PCA"""
    if len(models) < 2:
        raise ShapeError(f"多物種模型至少需要 2 個物種，實際 {len(models)}", code="too-few-species")
    if source not in ("means", "individuals"):
        raise ShapeError(f"未知的 source: {source}", code="aves-source")
    for model in models:
        model.check_template(template)
    s = len(models)
    if rank is None or rank > s - 1:
        if rank is not None:
            logger.warning("多物種模型秩 %d 超過物種數 - 1，改為 %d", rank, s - 1)
        rank = s - 1

    def prepare(v):
        return normalize_body_length(template, v) if normalize else np.asarray(v).reshape(-1, 3)

    means = np.stack([prepare(m.mean_vertices(template)).ravel() for m in models])
    if source == "means":
        pca = relearn_pca(means, rank)
    else:
        shapes = np.concatenate([np.stack([prepare(v).ravel() for v in m.reconstructions(template)])
                                 for m in models])
        pca = relearn_pca(shapes, rank)
    coefficients = pca.project(means)
    species = [m.species or f"species{i}" for i, m in enumerate(models)]
    logger.info("多物種模型: %d 物種, 秩 %d, 來源 %s, 正規化 %s", s, pca.rank, source, normalize)
    return MultiSpeciesModel(template.template_hash, pca.mean, pca.components, pca.variances, species,
                             coefficients, normalize, source)


# ---------------------------------------------------------------------------
# 以固定模型擬合實例
# ---------------------------------------------------------------------------

def fit_model_to_instance(model: Union[SpeciesModel, MultiSpeciesModel, None], template: TemplateModel,
                          instance: AnnotatedInstance, prior: PosePrior, camera: Camera, config: PipelineConfig,
                          db: SynthDatabase, freeze_beta: bool = False):
    """最小化 E_kp + E_msk + E_prior + w_beta·Σ β_c²/λ_c；模型平均與主成分固定

    model 為 None 時只用模板本身。回傳 (PoseParams, β, 指標字典)。
    """
    if model is None:
        shape, variances = ShapeState.zeros(template), np.zeros(0)
    else:
        model.check_template(template)
        if model.normalized:
            raise ShapeError("單位身體長度正規化的模型只用於形狀分析，不能用於擬合", code="normalized-model")
        shape, variances = model.shape_state(template), np.asarray(model.variances, dtype=np.float64)
    beta0 = np.zeros(shape.n_basis)
    params, beta, diag = fit_pose(instance, template, prior, camera, config, db, shape=shape, beta=beta0,
                                  beta_variances=None if freeze_beta else variances)
    metrics = diag.to_dict()
    return params, beta, metrics
