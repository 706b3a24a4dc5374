#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
build_synth.py - 合成資料集生成

此腳本以已知的真值形狀產生一個物種的標註集合：
1. 由具名的變形配方組合物種平均位移 dv*，並以變化基底 V* 與係數 β* 產生個體差異
2. 從姿勢先驗取樣姿勢，渲染硬性遮罩並投影關鍵點
3. 以深度比較判斷關鍵點是否被自身遮擋
4. 加入關鍵點雜訊與遮罩邊界侵蝕/膨脹
5. 寫出 manifest.json、PGM 遮罩與附雜湊的真值檔 (gt.json)

同一個 seed 產生的輸出逐位元組相同。
"""

import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch
from scipy import ndimage

from scripts.errors import ProjectionError, ShapeError
from scripts.eval_phylo import PhyloTree
from scripts.io_files import Manifest, ManifestEntry, read_json, write_manifest, write_pgm, write_sealed
from scripts.model_annotation import bbox_from_mask
from scripts.model_energy import PosePrior
from scripts.model_mesh import PoseParams, ShapeState, keypoints_3d, pose_mesh, to_numpy
from scripts.model_render import Camera, project, rasterize_hard, surface_depth
from scripts.model_template import TemplateModel, save_template
from scripts.fit_align import place_at_depth

logger = logging.getLogger(__name__)

RECIPES = ("inflate-belly", "elongate-tail", "crest", "slim")
# 個體變化基底依序採用的配方
VARIATION_RECIPES = ("inflate-belly", "slim", "crest", "elongate-tail")
VISIBILITY_TOLERANCE = 0.01  # 身體長度的比例
MAX_RETRIES = 20


@dataclass
class SyntheticSpeciesSpec:
    name: str = "synth"
    seed: int = 0
    recipes: Dict[str, float] = field(default_factory=lambda: {"inflate-belly": 0.04})
    variation_rank: int = 0
    variation_magnitude: float = 0.0
    count: int = 20
    prior_scale: float = 1.0
    keypoint_noise: float = 0.0  # 像素
    mask_noise: int = 0  # 侵蝕/膨脹像素數
    image_size: Tuple[int, int] = (64, 64)
    canonical_depth: float = 3.0

    def __post_init__(self):
        self.recipes = {str(k): float(v) for k, v in self.recipes.items()}
        self.image_size = tuple(int(v) for v in self.image_size)
        unknown = set(self.recipes) - set(RECIPES)
        if unknown:
            raise ShapeError(f"未知的變形配方: {sorted(unknown)}，可用: {RECIPES}", code="synth-spec")
        if self.count < 1:
            raise ShapeError("count 必須 ≥ 1", code="synth-spec")
        if not 0 <= self.variation_rank <= len(VARIATION_RECIPES):
            raise ShapeError(f"variation_rank 必須介於 0 與 {len(VARIATION_RECIPES)}", code="synth-spec")
        if min([self.variation_magnitude, self.prior_scale, self.keypoint_noise, self.mask_noise]) < 0:
            raise ShapeError("幅度與雜訊參數不可為負", code="synth-spec")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0 or self.canonical_depth <= 0:
            raise ShapeError("影像尺寸與 canonical_depth 必須為正", code="synth-spec")

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpeciesSpec":
        data = dict(data)
        if "recipe" in data:
            data["recipes"] = {data.pop("recipe"): float(data.pop("magnitude", 0.04))}
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ShapeError(f"合成規格含未知欄位: {sorted(unknown)}", code="synth-spec")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["image_size"] = list(self.image_size)
        return out


def load_spec(path: Path) -> SyntheticSpeciesSpec:
    return SyntheticSpeciesSpec.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# 變形配方
# ---------------------------------------------------------------------------

def _radial(template: TemplateModel) -> np.ndarray:
    """頂點相對於蒙皮加權關節位置的向量（局部的「向外」方向）"""
    return template.vertices - template.skin_weights @ template.joints


def _joint(template: TemplateModel, name: str) -> np.ndarray:
    if name in template.joint_names:
        return template.joints[template.joint_names.index(name)]
    raise ShapeError(f"模板沒有關節 {name}，無法套用配方", code="synth-spec")


def recipe_field(template: TemplateModel, recipe: str) -> np.ndarray:
    """配方的位移場 (N, 3)，最大位移長度正規化為 1"""
    v = template.vertices
    radial = _radial(template)
    if recipe == "inflate-belly":
        root = _joint(template, "root")
        weight = np.exp(-((v[:, 2] - root[2]) / 0.2) ** 2) / (1.0 + np.exp(-(v[:, 1] - root[1]) / 0.03))
        dv = weight[:, None] * radial
    elif recipe == "elongate-tail":
        start = _joint(template, "tail1")[2]
        end = v[:, 2].max()
        dv = np.zeros_like(v)
        dv[:, 2] = np.clip((v[:, 2] - start) / max(end - start, 1e-9), 0.0, 1.0)
    elif recipe == "crest":
        head = _joint(template, "head")
        dist = np.linalg.norm(v - head, axis=1)
        top = 1.0 / (1.0 + np.exp((v[:, 1] - head[1]) / 0.02))
        dv = np.zeros_like(v)
        dv[:, 1] = -np.exp(-(dist / 0.08) ** 2) * top
    elif recipe == "slim":
        dv = np.zeros_like(v)
        dv[:, 0] = -radial[:, 0]
    else:
        raise ShapeError(f"未知的變形配方: {recipe}", code="synth-spec")
    peak = np.linalg.norm(dv, axis=1).max()
    return dv / peak if peak > 0 else dv


def species_displacement(template: TemplateModel, recipes: Dict[str, float]) -> np.ndarray:
    dv = np.zeros_like(template.vertices)
    for recipe, magnitude in sorted(recipes.items()):
        dv = dv + magnitude * recipe_field(template, recipe)
    return dv


def variation_basis(template: TemplateModel, rank: int) -> np.ndarray:
    """(3N, rank) 的真值變化方向"""
    cols = [recipe_field(template, r).ravel() for r in VARIATION_RECIPES[:rank]]
    return np.stack(cols, axis=1) if cols else np.zeros((template.vertices.size, 0))


# ---------------------------------------------------------------------------
# 標註生成
# ---------------------------------------------------------------------------

def keypoint_visibility(template: TemplateModel, camera: Camera, vertices: np.ndarray, kp3d: np.ndarray,
                        kp_uv: np.ndarray, tolerance: float) -> np.ndarray:
    """關鍵點在影像內且不比表面深超過 tolerance 時為可見"""
    w, h = camera.image_size
    inside = (kp_uv[:, 0] >= 0) & (kp_uv[:, 0] < w) & (kp_uv[:, 1] >= 0) & (kp_uv[:, 1] < h)
    depth = surface_depth(camera, vertices, template.faces, kp_uv)
    return inside & (kp3d[:, 2] <= depth + tolerance)


def perturb_mask(mask: np.ndarray, pixels: int, rng: np.random.Generator) -> np.ndarray:
    """隨機侵蝕或膨脹遮罩邊界"""
    if pixels <= 0:
        return mask
    if rng.random() < 0.5:
        out = ndimage.binary_erosion(mask > 0, iterations=pixels)
        if not out.any():
            return mask
    else:
        out = ndimage.binary_dilation(mask > 0, iterations=pixels)
    return out.astype(np.uint8)


def render_instance(template: TemplateModel, params: PoseParams, shape: ShapeState, beta, camera: Camera,
                    tolerance: float):
    """回傳 (遮罩, 關鍵點 (K, 3))，關鍵點第三欄為可見旗標"""
    with torch.no_grad():
        posed = pose_mesh(template, params, shape, beta)
        verts = posed.numpy_vertices()
        kp3d = to_numpy(keypoints_3d(template, posed.vertices))
        kp_uv = to_numpy(project(camera, kp3d))
    mask = rasterize_hard(posed, camera)
    visible = keypoint_visibility(template, camera, verts, kp3d, kp_uv, tolerance)
    return mask, np.concatenate([kp_uv, visible[:, None].astype(np.float64)], axis=1)


def generate_synthetic_collection(template: TemplateModel, spec: SyntheticSpeciesSpec, prior: PosePrior,
                                  out_dir: Path, template_path: Optional[Path] = None) -> Tuple[Manifest, dict]:
    """產生一個物種的合成資料集並寫入 out_dir"""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(spec.seed)
    camera = Camera.default(*spec.image_size)
    w, h = spec.image_size

    if template_path is None:
        template_path = out_dir / "template.obj"
        save_template(template, template_path)

    dv = species_displacement(template, spec.recipes)
    basis = variation_basis(template, spec.variation_rank)
    shape = ShapeState(dv=dv, basis=basis)
    tolerance = VISIBILITY_TOLERANCE * template.body_length(template.vertices + dv)

    entries, gt_instances = [], []
    for i in range(spec.count):
        instance_id = f"{spec.name}_{i:04d}"
        beta = rng.normal(0.0, spec.variation_magnitude, size=spec.variation_rank)
        for attempt in range(MAX_RETRIES):
            theta, alpha = prior.sample(rng, spec.prior_scale)
            params = PoseParams(theta, np.maximum(alpha, 1e-3), np.zeros(3), np.ones(2))
            params = place_at_depth(template, params, spec.canonical_depth, shape, beta)
            try:
                mask, keypoints = render_instance(template, params, shape, beta, camera, tolerance)
            except ProjectionError:
                logger.debug("實例 %s 第 %d 次取樣落在相機後方，重新取樣", instance_id, attempt)
                continue
            if mask.any() and keypoints[:, 2].sum() >= 4:
                break
            logger.debug("實例 %s 第 %d 次取樣不可用，重新取樣", instance_id, attempt)
        else:
            raise ShapeError(f"實例 {instance_id} 重試 {MAX_RETRIES} 次仍無法產生可用標註", code="synth-retries")

        true_keypoints = keypoints.copy()
        visible = keypoints[:, 2] > 0
        if spec.keypoint_noise > 0:
            noise = rng.normal(0.0, spec.keypoint_noise, size=(len(keypoints), 2))
            keypoints[visible, :2] += noise[visible]
            keypoints[:, 0] = np.clip(keypoints[:, 0], 0.0, w)
            keypoints[:, 1] = np.clip(keypoints[:, 1], 0.0, h)
        mask = perturb_mask(mask, spec.mask_noise, rng)

        mask_rel = f"masks/{instance_id}.pgm"
        write_pgm(out_dir / mask_rel, mask)
        entries.append(ManifestEntry(instance_id, spec.name, keypoints.tolist(), mask_rel,
                                     list(bbox_from_mask(mask))))
        gt_instances.append({"id": instance_id, "params": params.to_dict(), "beta": beta.tolist(),
                             "keypoints": true_keypoints.tolist()})

    template_rel = Path(os.path.relpath(Path(template_path).resolve(), out_dir.resolve())).as_posix()
    manifest = Manifest(template=template_rel, template_hash=template.template_hash, camera=camera,
                        instances=entries, root=out_dir)
    write_manifest(out_dir / "manifest.json", manifest)
    gt = {"spec": spec.to_dict(), "template_hash": template.template_hash, "dv": dv.tolist(),
          "basis": basis.tolist(), "instances": gt_instances}
    write_sealed(out_dir / "gt.json", gt)
    logger.info("合成物種 %s: %d 個實例寫入 %s", spec.name, spec.count, out_dir)
    return manifest, gt


def simulate_clade(tree: PhyloTree, base: SyntheticSpeciesSpec, scale: float, seed: int) -> List[SyntheticSpeciesSpec]:
    """沿系統樹以布朗運動模擬每個葉節點的配方幅度，產生每個物種的規格

    每個配方的幅度 = base 的幅度 + N(0, scale² · C)，C 為共有路徑長度矩陣，幅度截為非負。
    """
    rng = np.random.default_rng(seed)
    cov = tree.covariance()
    chol = np.linalg.cholesky(cov + 1e-12 * np.eye(len(cov)))
    recipes = {r: base.recipes.get(r, 0.0) for r in RECIPES}
    draws = {r: recipes[r] + scale * chol @ rng.standard_normal(len(cov)) for r in RECIPES}
    specs = []
    for i, name in enumerate(tree.leaf_names):
        data = base.to_dict()
        data.update(name=name, seed=int(base.seed) + i,
                    recipes={r: float(max(draws[r][i], 0.0)) for r in RECIPES})
        specs.append(SyntheticSpeciesSpec.from_dict(data))
    return specs


def main(template: TemplateModel, specs: List[SyntheticSpeciesSpec], prior: PosePrior, out_dir: Path) -> bool:
    """為每個規格在 out_dir/<name>/ 下產生資料集"""
    start_time = time.time()
    out_dir = Path(out_dir)
    template_path = out_dir / "template.obj"
    save_template(template, template_path)
    for k, spec in enumerate(specs, 1):
        species_dir = out_dir / spec.name
        print(f"處理進度: {k / len(specs) * 100:.1f}% [{k}/{len(specs)}] 物種 {spec.name}")
        generate_synthetic_collection(template, spec, prior, species_dir, template_path)
    elapsed = time.time() - start_time
    print(f"合成資料完成: {len(specs)} 個物種, 耗時 {elapsed:.1f} 秒")
    return True
