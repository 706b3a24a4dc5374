#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
eval_metrics.py - 評估指標

PCK（以外框最長邊的比例為門檻）、輪廓 IoU，以及形狀空間的確定性 2D 嵌入。
"""

from typing import Tuple

import numpy as np

from scripts.errors import AnnotationError, DimensionError, ShapeError

PCK_THRESHOLD = 0.05


def pck(pred_kp: np.ndarray, gt_kp: np.ndarray, bbox: Tuple[float, float, float, float],
        threshold_fraction: float = PCK_THRESHOLD) -> float:
    """可見關鍵點中誤差 ≤ threshold_fraction·max(w, h) 的比例（含等號）"""
    pred = np.asarray(pred_kp, dtype=np.float64)
    gt = np.asarray(gt_kp, dtype=np.float64)
    if pred.shape[0] != gt.shape[0]:
        raise DimensionError("keypoints", gt.shape[0], pred.shape[0])
    size = max(float(bbox[2]), float(bbox[3]))
    if size <= 0:
        raise ShapeError("外框大小為 0，無法計算 PCK", code="bbox")
    visible = gt[:, 2] > 0 if gt.shape[1] > 2 else np.ones(len(gt), dtype=bool)
    if not visible.any():
        raise AnnotationError("沒有可見的真值關鍵點")
    err = np.linalg.norm(pred[visible, :2] - gt[visible, :2], axis=1)
    return float(np.mean(err <= threshold_fraction * size))


def iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    a = np.asarray(mask_a) > 0
    b = np.asarray(mask_b) > 0
    if a.shape != b.shape:
        raise DimensionError("mask", a.shape, b.shape)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def embed_2d(traits: np.ndarray) -> np.ndarray:
    """投影到前兩個主軸的置中座標 (S, 2)

    每個主軸的正負號固定為使絕對值最大的分量為正。
    """
    x = np.asarray(traits, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError("traits", "(S ≥ 2, D)", x.shape)
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2]
    for i, axis in enumerate(axes):
        if axis[np.argmax(np.abs(axis))] < 0:
            axes[i] = -axis
    coords = centered @ axes.T
    if coords.shape[1] < 2:
        coords = np.concatenate([coords, np.zeros((len(coords), 2 - coords.shape[1]))], axis=1)
    return coords
