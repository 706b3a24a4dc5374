#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
fit_protocol.py - 保留集評估流程

比較不同形狀模型擬合未參與訓練之實例的能力：
1. kfold_splits：k 折交叉驗證的索引切分
2. leave_one_species_out：每次保留一個物種
3. train_stage_models：以訓練集依序建立「僅模板 / +平均 / +基底」三個模型
4. compare_models：對每個模型擬合保留實例並彙總 PCK05 與 IoU
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from scripts.config import PipelineConfig
from scripts.errors import ShapeError
from scripts.fit_shape import (Aligned, MultiSpeciesModel, SpeciesModel, build_multispecies, build_species_model,
                               fit_individuals, fit_model_to_instance, fit_species_mean)
from scripts.model_annotation import AnnotatedInstance
from scripts.model_energy import PosePrior
from scripts.model_faiss import SynthDatabase
from scripts.model_render import Camera
from scripts.model_template import TemplateModel

logger = logging.getLogger(__name__)

TEMPLATE_ONLY = "template"
Model = Optional[Union[SpeciesModel, MultiSpeciesModel]]


def kfold_splits(n: int, k: int, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """打亂後切成 k 折，回傳 [(訓練索引, 測試索引)]；每個索引恰好出現在一個測試折"""
    if k < 2 or k > n:
        raise ShapeError(f"k 折數必須介於 2 與樣本數 {n}，實際 {k}", code="kfold")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    splits = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        splits.append((np.sort(train), np.sort(test)))
    return splits


def leave_one_species_out(species: Sequence[str]) -> List[Tuple[str, np.ndarray, np.ndarray]]:
    """回傳 [(保留物種, 訓練索引, 測試索引)]，依物種名稱排序"""
    labels = np.asarray(list(species))
    names = sorted(set(labels.tolist()))
    if len(names) < 2:
        raise ShapeError("保留單一物種的評估至少需要 2 個物種", code="too-few-species")
    return [(name, np.flatnonzero(labels != name), np.flatnonzero(labels == name)) for name in names]


def train_stage_models(aligned: Aligned, template: TemplateModel, camera: Camera, config: PipelineConfig,
                       species: str = "") -> Dict[str, Model]:
    """以對齊後的訓練實例建立逐階段的模型"""
    aligned = list(aligned)
    dv, _ = fit_species_mean(aligned, template, camera, config)
    ids = [inst.id for inst, _ in aligned]
    k = max(min(config.n_basis, len(aligned) - 1), 0)
    mean_model = SpeciesModel(template.template_hash, dv, np.zeros((dv.size, 0)), np.zeros((len(aligned), 0)),
                              ids, species)
    models: Dict[str, Model] = {TEMPLATE_ONLY: None, "mean": mean_model}
    if k >= 1:
        basis, betas, _ = fit_individuals(aligned, template, camera, dv, k, config, seed=config.seed)
        models["basis"] = build_species_model(template, dv, basis, betas, ids, species, k)
    return models


def compare_models(models: Dict[str, Model], instances: Sequence[AnnotatedInstance], template: TemplateModel,
                   prior: PosePrior, camera: Camera, config: PipelineConfig,
                   db: SynthDatabase) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """每個模型擬合每個實例，回傳 (彙總, 逐實例明細)

    彙總每列為一個模型：n、pck05、iou 的平均與失敗數。
    """
    rows = []
    for name, model in models.items():
        for instance in instances:
            _, _, metrics = fit_model_to_instance(model, template, instance, prior, camera, config, db)
            rows.append({"model": name, "id": instance.id, "species": instance.species,
                         "pck05": metrics["pck05"], "iou": metrics["iou"], "failed": metrics["failed"]})
        logger.info("模型 %s: 擬合 %d 個保留實例", name, len(instances))
    details = pd.DataFrame(rows, columns=["model", "id", "species", "pck05", "iou", "failed"])
    summary = (details.groupby("model", sort=False)
               .agg(n=("id", "size"), pck05=("pck05", "mean"), iou=("iou", "mean"), failed=("failed", "sum"))
               .reset_index())
    return summary, details


def kfold_protocol(aligned: Aligned, template: TemplateModel, prior: PosePrior, camera: Camera,
                   config: PipelineConfig, db: SynthDatabase, k: int = 5) -> pd.DataFrame:
    """單一物種的 k 折評估：訓練折建模型，測試折擬合；回傳所有折的逐實例明細"""
    aligned = list(aligned)
    frames = []
    for fold, (train, test) in enumerate(kfold_splits(len(aligned), k, config.seed)):
        models = train_stage_models([aligned[i] for i in train], template, camera, config)
        _, details = compare_models(models, [aligned[i][0] for i in test], template, prior, camera, config, db)
        details.insert(0, "fold", fold)
        frames.append(details)
        logger.info("第 %d/%d 折完成", fold + 1, k)
    return pd.concat(frames, ignore_index=True)


def species_holdout_protocol(species_models: Dict[str, SpeciesModel],
                             instances: Sequence[AnnotatedInstance], template: TemplateModel, prior: PosePrior,
                             camera: Camera, config: PipelineConfig, db: SynthDatabase) -> pd.DataFrame:
    """每次保留一個物種：以其餘物種建立多物種模型（原始尺度），與僅模板比較"""
    frames = []
    for held, train, test in leave_one_species_out([inst.species for inst in instances]):
        others = [species_models[s] for s in sorted(species_models) if s != held]
        if len(others) < 2:
            raise ShapeError(f"保留 {held} 後剩餘物種模型不足 2 個", code="too-few-species")
        aves = build_multispecies(others, template, normalize=False, rank=config.aves_rank, source=config.aves_source)
        models = {TEMPLATE_ONLY: None, "multispecies": aves}
        _, details = compare_models(models, [instances[i] for i in test], template, prior, camera, config, db)
        details.insert(0, "held_out", held)
        frames.append(details)
    return pd.concat(frames, ignore_index=True)
