#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_annotation.py - 單張影像的標註資料

每個實例包含帶可見旗標的 2D 關鍵點、二值輪廓遮罩、外框與物種名稱。
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from scripts.errors import AnnotationError, DimensionError


def bbox_from_mask(mask: np.ndarray) -> Tuple[float, float, float, float]:
    """遮罩的緊密外框 (x, y, w, h)，單位像素"""
    rows = np.flatnonzero(np.asarray(mask).any(axis=1))
    cols = np.flatnonzero(np.asarray(mask).any(axis=0))
    if len(rows) == 0:
        return (0.0, 0.0, 0.0, 0.0)
    return (float(cols[0]), float(rows[0]), float(cols[-1] - cols[0] + 1), float(rows[-1] - rows[0] + 1))


@dataclass
class AnnotatedInstance:
    id: str
    keypoints: np.ndarray  # (K, 3): u, v, visible
    mask: np.ndarray  # (H, W) uint8 0/1
    bbox: Tuple[float, float, float, float]
    species: str = ""

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 3)
        self.mask = (np.asarray(self.mask) > 0).astype(np.uint8)
        self.bbox = tuple(float(x) for x in self.bbox)

    @property
    def visible(self) -> np.ndarray:
        return self.keypoints[:, 2] > 0

    @property
    def image_size(self) -> Tuple[int, int]:
        return (int(self.mask.shape[1]), int(self.mask.shape[0]))

    @property
    def bbox_size(self) -> float:
        return max(self.bbox[2], self.bbox[3])

    @property
    def bbox_diagonal(self) -> float:
        return float(np.hypot(self.bbox[2], self.bbox[3]))

    def gm_sigma(self, fraction: float) -> float:
        """Geman-McClure 尺度：外框對角線的固定比例"""
        return fraction * self.bbox_diagonal

    def validate(self, image_size: Tuple[int, int] = None, n_keypoints: int = None):
        width, height = self.image_size if image_size is None else image_size
        if self.mask.shape != (height, width):
            raise DimensionError(f"{self.id}.mask", (height, width), self.mask.shape)
        if n_keypoints is not None and len(self.keypoints) != n_keypoints:
            raise DimensionError(f"{self.id}.keypoints", n_keypoints, len(self.keypoints))
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise AnnotationError(f"實例 {self.id} 的外框為空")
        vis = self.keypoints[self.visible]
        if np.any(vis[:, 0] < 0) or np.any(vis[:, 0] > width) or np.any(vis[:, 1] < 0) or np.any(vis[:, 1] > height):
            raise AnnotationError(f"實例 {self.id} 有可見關鍵點超出影像範圍")
