#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_faiss.py - 合成關鍵點資料庫的 FAISS 索引

此模組負責合成 (關鍵點, 姿勢參數) 配對的索引建立、存取與查詢，
用來為每個標註實例找出最接近的初始姿勢。
查詢只比較可見的關鍵點：先以 FAISS 在可見維度上取回 TOP_K 個候選，
再以「可見關鍵點的平均歐氏距離」重新排序。
"""

import json
import logging
import weakref
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import faiss
import numpy as np

from scripts.errors import AnnotationError, ShapeError
from scripts.model_mesh import PoseParams

logger = logging.getLogger(__name__)

# 每次查詢先取回的候選數量
TOP_K = 15
MIN_VISIBLE = 4

# 快取：每個資料庫、每種可見性樣式對應一個子空間索引
_subspace_indexes: "weakref.WeakKeyDictionary[SynthDatabase, Dict[str, faiss.Index]]" = weakref.WeakKeyDictionary()


@dataclass(eq=False)
class SynthDatabase:
    """合成資料庫：正規化關鍵點 (M, K, 2)、原始像素關鍵點與外框、對應的姿勢參數"""

    keypoints: np.ndarray
    pixel_keypoints: np.ndarray
    bboxes: np.ndarray
    params: List[PoseParams]
    template_hash: str = ""

    def __len__(self) -> int:
        return len(self.params)

    @property
    def n_keypoints(self) -> int:
        return int(self.keypoints.shape[1])


def normalize_keypoints(keypoints: np.ndarray, bbox) -> np.ndarray:
    """以外框中心為原點、外框最長邊為單位的關鍵點座標"""
    x, y, w, h = (float(v) for v in bbox)
    size = max(w, h)
    if size <= 0:
        raise AnnotationError("外框大小為 0，無法正規化關鍵點")
    center = np.array([x + w / 2.0, y + h / 2.0])
    return (np.asarray(keypoints, dtype=np.float64)[:, :2] - center) / size


def create_index(vectors: np.ndarray) -> faiss.Index:
    """為 (M, D) 向量建立精確 L2 索引"""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    index = faiss.IndexFlatL2(vectors.shape[1])
    index.add(vectors)
    return index


def _visible_dims(visible: np.ndarray) -> np.ndarray:
    return np.stack([2 * np.flatnonzero(visible), 2 * np.flatnonzero(visible) + 1], axis=1).ravel()


def subspace_index(db: SynthDatabase, visible: np.ndarray) -> faiss.Index:
    """取得（或建立並快取）只含可見維度的索引"""
    cache = _subspace_indexes.setdefault(db, {})
    key = "".join("1" if v else "0" for v in visible)
    index = cache.get(key)
    if index is None or index.ntotal != len(db):
        flat = db.keypoints.reshape(len(db), -1)
        index = create_index(flat[:, _visible_dims(visible)])
        cache[key] = index
    return index


def clear_cache():
    _subspace_indexes.clear()


def query_index(db: SynthDatabase, query: np.ndarray, visible: np.ndarray,
                top_k: int = TOP_K) -> List[Tuple[int, float]]:
    """回傳 [(資料庫索引, 平均距離)]，依距離遞增、同距離時索引小者在前"""
    if len(db) == 0:
        raise ShapeError("合成資料庫為空", code="empty-db")
    visible = np.asarray(visible, dtype=bool)
    if visible.sum() < MIN_VISIBLE:
        raise AnnotationError(f"可見關鍵點不足 {MIN_VISIBLE} 個，無法初始化姿勢")
    if len(visible) != db.n_keypoints:
        raise ShapeError(f"關鍵點數 {len(visible)} 與資料庫 {db.n_keypoints} 不一致", code="dimension")

    index = subspace_index(db, visible)
    q = np.ascontiguousarray(query[visible].reshape(1, -1), dtype=np.float32)
    _, ids = index.search(q, min(top_k, len(db)))
    candidates = np.unique(ids[0][ids[0] >= 0])

    diff = db.keypoints[candidates][:, visible, :] - query[visible][None]
    dist = np.linalg.norm(diff, axis=2).mean(axis=1)
    order = np.lexsort((candidates, dist))
    return [(int(candidates[i]), float(dist[i])) for i in order]


def save_database(db: SynthDatabase, index_dir: Path):
    """寫出 faiss.index（全部維度）與 entries.json"""
    index_dir = Path(index_dir)
    index_dir.mkdir(exist_ok=True, parents=True)
    faiss.write_index(create_index(db.keypoints.reshape(len(db), -1)), str(index_dir / "faiss.index"))
    entries = {
        "template_hash": db.template_hash,
        "keypoints": db.keypoints.tolist(),
        "pixel_keypoints": db.pixel_keypoints.tolist(),
        "bboxes": db.bboxes.tolist(),
        "params": [p.to_dict() for p in db.params],
    }
    with open(index_dir / "entries.json", "w", encoding="utf-8") as f:
        json.dump(entries, f)
    logger.info("保存合成資料庫到 %s (%d 筆)", index_dir, len(db))


def load_database(index_dir: Path) -> Optional[SynthDatabase]:
    """載入 save_database 寫出的資料庫，缺少檔案時回傳 None"""
    index_dir = Path(index_dir)
    index_path = index_dir / "faiss.index"
    entries_path = index_dir / "entries.json"
    if not index_path.exists() or not entries_path.exists():
        return None
    index = faiss.read_index(str(index_path))
    with open(entries_path, "r", encoding="utf-8") as f:
        entries = json.load(f)
    db = SynthDatabase(
        keypoints=np.asarray(entries["keypoints"], dtype=np.float64),
        pixel_keypoints=np.asarray(entries["pixel_keypoints"], dtype=np.float64),
        bboxes=np.asarray(entries["bboxes"], dtype=np.float64),
        params=[PoseParams.from_dict(p) for p in entries["params"]],
        template_hash=entries.get("template_hash", ""),
    )
    if index.ntotal != len(db):
        raise ShapeError(f"索引筆數 {index.ntotal} 與資料 {len(db)} 不一致", code="db-corrupt")
    logger.info("載入合成資料庫 %s (%d 筆)", index_dir, len(db))
    return db
