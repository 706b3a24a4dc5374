#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_render.py - 透視投影與輪廓渲染

此模組提供：
1. 針孔相機投影 (固定焦距)
2. 可微分的柔性輪廓渲染：像素到投影三角形邊界的有號距離經 logistic 轉為
   每面佔據機率，再以 1 - Π(1 - D_f) 聚合
3. 硬性光柵化（左上填充規則），作為評估與合成資料的基準
4. 表面深度查詢，供合成標註判斷關鍵點遮擋
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.checkpoint import checkpoint

from scripts.errors import ProjectionError, ShapeError
from scripts.model_mesh import DTYPE, as_tensor, to_numpy

Z_NEAR = 1e-3
DEFAULT_SIGMA = 2.0  # 像素
CULL_SIGMAS = 100.0  # 距離小於 -100σ 的面貢獻為 0 (logistic(-100) ≈ 3.7e-44)
PAIRS_PER_CHUNK = 1 << 18  # 每個檢查點區塊的 (像素, 面) 配對數上限
FACES_PER_CHUNK = 64
ORDER_BAND = 8.0  # 像素


@dataclass(frozen=True)
class Camera:
    focal: float
    principal_point: Tuple[float, float]
    image_size: Tuple[int, int]  # (寬, 高)

    def __post_init__(self):
        if not self.focal > 0:
            raise ShapeError(f"焦距必須為正，實際 {self.focal}", code="camera")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ShapeError(f"影像尺寸必須為正，實際 {self.image_size}", code="camera")

    @classmethod
    def default(cls, width: int, height: int) -> "Camera":
        """焦距預設為影像寬度的兩倍，主點在影像中心"""
        return cls(focal=2.0 * width, principal_point=(width / 2.0, height / 2.0), image_size=(int(width), int(height)))

    @property
    def width(self) -> int:
        return int(self.image_size[0])

    @property
    def height(self) -> int:
        return int(self.image_size[1])

    def to_dict(self) -> dict:
        return {"focal": self.focal, "principal_point": list(self.principal_point), "image_size": list(self.image_size)}

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        return cls(focal=float(data["focal"]), principal_point=tuple(float(x) for x in data["principal_point"]),
                   image_size=tuple(int(x) for x in data["image_size"]))


def project(camera: Camera, points, z_near: float = Z_NEAR) -> torch.Tensor:
    """u = f·x/z + cx, v = f·y/z + cy"""
    pts = as_tensor(points).reshape(-1, 3)
    depth = pts[:, 2].detach()
    bad = torch.nonzero(depth <= z_near)
    if len(bad):
        i = int(bad[0, 0])
        raise ProjectionError(i, float(depth[i]), z_near)
    cx, cy = camera.principal_point
    u = camera.focal * pts[:, 0] / pts[:, 2] + cx
    v = camera.focal * pts[:, 1] / pts[:, 2] + cy
    return torch.stack([u, v], dim=1)


def pixel_centers(width: int, height: int) -> torch.Tensor:
    """(H·W, 2) 像素中心，列優先；像素 (col, row) 的中心為 (col + 0.5, row + 0.5)"""
    rows, cols = torch.meshgrid(torch.arange(height, dtype=DTYPE), torch.arange(width, dtype=DTYPE), indexing="ij")
    return torch.stack([cols.reshape(-1) + 0.5, rows.reshape(-1) + 0.5], dim=1)


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    positive = x > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, x, torch.ones_like(x))), torch.zeros_like(x))


def _segment_dist_sq(p: torch.Tensor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """點 (P, 1, 2) 到線段 a-b (1, C, 2) 的平方距離 (P, C)"""
    ab = b - a
    ab2 = (ab * ab).sum(-1)
    nonzero = ab2 > 0
    t = ((p - a) * ab).sum(-1) / torch.where(nonzero, ab2, torch.ones_like(ab2))
    t = torch.where(nonzero, t.clamp(0.0, 1.0), torch.zeros_like(t))
    closest = a + t[..., None] * ab
    diff = p - closest
    return (diff * diff).sum(-1)


def _cross2(u: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def signed_distance(pixels: torch.Tensor, tri: torch.Tensor) -> torch.Tensor:
    """像素 (P, 2) 到三角形 (C, 3, 2) 邊界的有號距離 (P, C)，內部為正

    零面積三角形沒有內部，只以點到線段距離計算。
    """
    p = pixels[:, None, :]
    a, b, c = tri[None, :, 0], tri[None, :, 1], tri[None, :, 2]
    d2 = torch.minimum(torch.minimum(_segment_dist_sq(p, a, b), _segment_dist_sq(p, b, c)),
                       _segment_dist_sq(p, c, a))
    dist = _safe_sqrt(d2)
    area = _cross2(b - a, c - a)
    sign = torch.sign(area)
    e0 = _cross2(b - a, p - a) * sign
    e1 = _cross2(c - b, p - b) * sign
    e2 = _cross2(a - c, p - c) * sign
    inside = (area != 0) & (e0 >= 0) & (e1 >= 0) & (e2 >= 0)
    return torch.where(inside, dist, -dist)


def _chunk_log_complement(pixels: torch.Tensor, tri: torch.Tensor, sigma: float) -> torch.Tensor:
    """Σ_f -log(1 - D_f(p))，D_f = logistic(d/σ)"""
    d = signed_distance(pixels, tri) / sigma
    contrib = F.softplus(d)
    contrib = torch.where(d < -CULL_SIGMAS, torch.zeros_like(contrib), contrib)
    return contrib.sum(dim=1)


def _window(part: torch.Tensor, margin: float, width: int, height: int):
    """區塊內三角形的聯合外框外擴 margin 後涵蓋的像素索引 (row-major)；完全在影像外時為 None"""
    pts = part.detach().reshape(-1, 2)
    lo = torch.floor(pts.min(dim=0).values - margin - 0.5)
    hi = torch.ceil(pts.max(dim=0).values + margin - 0.5)
    x0, y0 = max(int(lo[0]), 0), max(int(lo[1]), 0)
    x1, y1 = min(int(hi[0]), width - 1), min(int(hi[1]), height - 1)
    if x0 > x1 or y0 > y1:
        return None
    rows = torch.arange(y0, y1 + 1)
    cols = torch.arange(x0, x1 + 1)
    return (rows[:, None] * width + cols[None, :]).reshape(-1)


def _spatial_order(tri: torch.Tensor) -> np.ndarray:
    """依重心所在的橫條帶再依 x 排序，使同一區塊的面在影像上相鄰"""
    centroid = to_numpy(tri.detach().mean(dim=1))
    band = np.floor(centroid[:, 1] / ORDER_BAND)
    return np.lexsort((centroid[:, 0], band))


def soft_silhouette_2d(uv, faces: np.ndarray, image_size: Tuple[int, int], sigma: float) -> torch.Tensor:
    """以投影後的 2D 頂點計算柔性輪廓 (H, W)

    面依空間位置分塊，每塊只評估外框外擴 CULL_SIGMAS·σ 內的像素；窗外像素對該塊的貢獻恰為 0。
    """
    if not sigma > 0:
        raise ShapeError(f"sigma 必須為正，實際 {sigma}", code="sigma")
    width, height = int(image_size[0]), int(image_size[1])
    uv = as_tensor(uv).reshape(-1, 2)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    pixels = pixel_centers(width, height)
    total = torch.zeros(width * height, dtype=DTYPE)
    if len(faces) == 0:
        return total.reshape(height, width)

    tri = uv[torch.as_tensor(faces)]
    tri = tri[torch.as_tensor(_spatial_order(tri))]
    chunk = min(max(1, PAIRS_PER_CHUNK // pixels.shape[0]), FACES_PER_CHUNK)
    margin = CULL_SIGMAS * sigma
    for start in range(0, len(faces), chunk):
        part = tri[start:start + chunk]
        idx = _window(part, margin, width, height)
        if idx is None:
            continue
        if part.requires_grad:
            contrib = checkpoint(_chunk_log_complement, pixels[idx], part, sigma, use_reentrant=False)
        else:
            contrib = _chunk_log_complement(pixels[idx], part, sigma)
        total = total.index_add(0, idx, contrib)
    return (-torch.expm1(-total)).reshape(height, width)


def render_soft_silhouette(mesh, camera: Camera, sigma: float = DEFAULT_SIGMA) -> torch.Tensor:
    """對姿勢後網格進行可微分輪廓渲染，回傳 SoftMask (H, W)"""
    vertices = as_tensor(mesh.vertices)
    if vertices.shape[0] == 0 or len(mesh.faces) == 0:
        raise ShapeError("網格為空，無法渲染", code="empty-mesh")
    return soft_silhouette_2d(project(camera, vertices), mesh.faces, camera.image_size, sigma)


def rasterize_triangles_2d(uv: np.ndarray, faces: np.ndarray, width: int, height: int) -> np.ndarray:
    """像素中心落在任一三角形內即為 1；邊界採左上填充規則"""
    mask = np.zeros((height, width), dtype=np.uint8)
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    for face in np.asarray(faces, dtype=np.int64).reshape(-1, 3):
        a, b, c = uv[face]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area == 0:
            continue
        if area < 0:
            b, c = c, b
        x0 = max(int(np.floor(min(a[0], b[0], c[0]) - 0.5)), 0)
        x1 = min(int(np.ceil(max(a[0], b[0], c[0]) - 0.5)), width - 1)
        y0 = max(int(np.floor(min(a[1], b[1], c[1]) - 0.5)), 0)
        y1 = min(int(np.ceil(max(a[1], b[1], c[1]) - 0.5)), height - 1)
        if x0 > x1 or y0 > y1:
            continue
        px, py = np.meshgrid(np.arange(x0, x1 + 1) + 0.5, np.arange(y0, y1 + 1) + 0.5)
        inside = np.ones(px.shape, dtype=bool)
        for s, e in ((a, b), (b, c), (c, a)):
            ex, ey = e[0] - s[0], e[1] - s[1]
            w = ex * (py - s[1]) - ey * (px - s[0])
            top_left = (ey == 0 and ex > 0) or ey < 0
            inside &= (w > 0) | ((w == 0) & top_left)
        mask[y0:y1 + 1, x0:x1 + 1] |= inside.astype(np.uint8)
    return mask


def rasterize_hard(mesh, camera: Camera) -> np.ndarray:
    """二值輪廓 (H, W)，uint8 0/1"""
    vertices = to_numpy(mesh.vertices).reshape(-1, 3)
    if len(vertices) == 0 or len(mesh.faces) == 0:
        return np.zeros((camera.height, camera.width), dtype=np.uint8)
    uv = to_numpy(project(camera, vertices))
    return rasterize_triangles_2d(uv, mesh.faces, camera.width, camera.height)


def surface_depth(camera: Camera, vertices: np.ndarray, faces: np.ndarray, query_uv: np.ndarray) -> np.ndarray:
    """每個查詢像素位置上最近表面的深度，沒有覆蓋時為 inf"""
    vertices = np.asarray(to_numpy(vertices), dtype=np.float64).reshape(-1, 3)
    uv = to_numpy(project(camera, vertices))
    inv_z = 1.0 / vertices[:, 2]
    query_uv = np.asarray(query_uv, dtype=np.float64).reshape(-1, 2)
    depth = np.full(len(query_uv), np.inf)
    for face in np.asarray(faces, dtype=np.int64).reshape(-1, 3):
        a, b, c = uv[face]
        area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if area == 0:
            continue
        q = query_uv
        w0 = ((b[0] - q[:, 0]) * (c[1] - q[:, 1]) - (b[1] - q[:, 1]) * (c[0] - q[:, 0])) / area
        w1 = ((c[0] - q[:, 0]) * (a[1] - q[:, 1]) - (c[1] - q[:, 1]) * (a[0] - q[:, 0])) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        z = 1.0 / (w0 * inv_z[face[0]] + w1 * inv_z[face[1]] + w2 * inv_z[face[2]])
        depth = np.where(inside, np.minimum(depth, z), depth)
    return depth
