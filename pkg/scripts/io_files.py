#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
io_files.py - 檔案格式

1. 資料集清單 (manifest.json)：實例 id、物種、關鍵點、遮罩路徑、外框
2. 模型檔：JSON 標頭 + 小端序 float64 原始陣列檔
3. 每個實例的姿勢參數 JSON
4. PGM (P5) 遮罩
5. 附 sha256 的封存真值檔
所有寫入皆先寫暫存檔再以 os.replace 取代，避免留下半寫入的檔案。
"""

import hashlib
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import cv2
import numpy as np
import pandas as pd

from scripts.errors import ShapeError
from scripts.fit_shape import MultiSpeciesModel, SpeciesModel
from scripts.model_annotation import AnnotatedInstance
from scripts.model_mesh import PoseParams
from scripts.model_render import Camera

logger = logging.getLogger(__name__)

LITTLE_F64 = np.dtype("<f8")


def atomic_write_bytes(path: Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path: Path, payload):
    atomic_write_text(path, json.dumps(payload, indent=1, sort_keys=True, ensure_ascii=False) + "\n")


def read_json(path: Path):
    path = Path(path)
    if not path.exists():
        raise ShapeError(f"找不到檔案: {path}", code="missing-file")
    with open(path, "r", encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ShapeError(f"{path} 不是有效的 JSON: {e}", code="format") from e


def write_csv(path: Path, frame: pd.DataFrame):
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))


# ---------------------------------------------------------------------------
# 陣列與遮罩
# ---------------------------------------------------------------------------

def write_array(path: Path, array: np.ndarray) -> dict:
    """寫出小端序 float64 原始陣列，回傳 JSON 標頭用的描述"""
    array = np.ascontiguousarray(array, dtype=LITTLE_F64)
    atomic_write_bytes(path, array.tobytes())
    return {"file": Path(path).name, "shape": list(array.shape), "dtype": "<f8"}


def read_array(path: Path, shape) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ShapeError(f"找不到陣列檔: {path}", code="missing-file")
    data = np.frombuffer(path.read_bytes(), dtype=LITTLE_F64)
    expected = int(np.prod(shape)) if len(shape) else 1
    if data.size != expected:
        raise ShapeError(f"{path} 有 {data.size} 個值，預期 {expected}", code="format")
    return data.astype(np.float64).reshape(shape)


def _write_gray(path: Path, img: np.ndarray):
    ok, buf = cv2.imencode(".pgm", np.ascontiguousarray(img, dtype=np.uint8), [cv2.IMWRITE_PXM_BINARY, 1])
    if not ok:
        raise ShapeError(f"無法編碼 PGM: {path}", code="format")
    atomic_write_bytes(path, buf.tobytes())


def write_pgm(path: Path, mask: np.ndarray):
    """寫出 P5 PGM；二值遮罩存成 0/255"""
    _write_gray(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def write_soft_pgm(path: Path, soft: np.ndarray):
    """除錯用：柔性輪廓 ×255 四捨五入"""
    _write_gray(path, np.clip(np.rint(np.asarray(soft, dtype=np.float64) * 255.0), 0, 255))


def read_pgm(path: Path) -> np.ndarray:
    """讀取 PGM 遮罩並二值化為 uint8 0/1"""
    path = Path(path)
    if not path.exists():
        raise ShapeError(f"找不到遮罩檔: {path}", code="missing-file")
    img = cv2.imdecode(np.frombuffer(path.read_bytes(), dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None or img.ndim != 2:
        raise ShapeError(f"{path} 不是單通道 PGM", code="format")
    return (img > 127).astype(np.uint8)


# ---------------------------------------------------------------------------
# 資料集清單
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    species: str
    keypoints: List[List[float]]
    mask: str
    bbox: List[float]

    def to_dict(self) -> dict:
        return {"id": self.id, "species": self.species, "keypoints": self.keypoints,
                "mask": self.mask, "bbox": list(self.bbox)}


@dataclass
class Manifest:
    template: str
    template_hash: str
    camera: Camera
    instances: List[ManifestEntry] = field(default_factory=list)
    root: Path = Path(".")

    def entry(self, instance_id: str) -> ManifestEntry:
        for e in self.instances:
            if e.id == instance_id:
                return e
        raise ShapeError(f"清單中沒有實例 {instance_id}", code="unknown-instance")

    def template_path(self) -> Path:
        return (self.root / self.template).resolve()

    def load_instance(self, entry: ManifestEntry) -> AnnotatedInstance:
        mask = read_pgm(self.root / entry.mask)
        inst = AnnotatedInstance(entry.id, np.asarray(entry.keypoints, dtype=np.float64), mask,
                                 tuple(entry.bbox), entry.species)
        inst.validate(self.camera.image_size)
        return inst

    def load_instances(self) -> List[AnnotatedInstance]:
        return [self.load_instance(e) for e in self.instances]

    def species(self) -> List[str]:
        return sorted({e.species for e in self.instances})


def write_manifest(path: Path, manifest: Manifest):
    write_json(path, {
        "template": manifest.template,
        "template_hash": manifest.template_hash,
        "camera": manifest.camera.to_dict(),
        "instances": [e.to_dict() for e in manifest.instances],
    })


def read_manifest(path: Path) -> Manifest:
    path = Path(path)
    data = read_json(path)
    try:
        entries = [ManifestEntry(str(e["id"]), str(e.get("species", "")),
                                 [[float(v) for v in kp] for kp in e["keypoints"]],
                                 str(e["mask"]), [float(v) for v in e["bbox"]])
                   for e in data["instances"]]
        return Manifest(data["template"], data.get("template_hash", ""), Camera.from_dict(data["camera"]),
                        entries, path.parent)
    except (KeyError, TypeError) as e:
        raise ShapeError(f"{path} 缺少必要欄位: {e}", code="format") from e


# ---------------------------------------------------------------------------
# 姿勢參數
# ---------------------------------------------------------------------------

def write_params(path: Path, instance_id: str, params: PoseParams, beta=None, diagnostics: dict = None):
    payload = {"id": instance_id, "params": params.to_dict()}
    if beta is not None:
        payload["beta"] = np.asarray(beta, dtype=np.float64).ravel().tolist()
    if diagnostics is not None:
        payload["diagnostics"] = diagnostics
    write_json(path, payload)


def read_params(path: Path) -> Tuple[str, PoseParams, Optional[np.ndarray], dict]:
    data = read_json(path)
    beta = np.asarray(data["beta"], dtype=np.float64) if "beta" in data else None
    return data["id"], PoseParams.from_dict(data["params"]), beta, data.get("diagnostics", {})


# ---------------------------------------------------------------------------
# 模型
# ---------------------------------------------------------------------------

SPECIES_ARRAYS = ("dv", "basis", "betas", "pca_mean", "pca_components", "pca_variances")
AVES_ARRAYS = ("mean", "components", "variances", "coefficients")

Model = Union[SpeciesModel, MultiSpeciesModel]


def write_model(path: Path, model: Model):
    """JSON 標頭 + <stem>.<欄位>.f64 原始陣列"""
    path = Path(path)
    if isinstance(model, SpeciesModel):
        header = {"kind": "species", "species": model.species, "sample_ids": list(model.sample_ids)}
        names = SPECIES_ARRAYS
    else:
        header = {"kind": "multispecies", "species": list(model.species), "source": model.source}
        names = AVES_ARRAYS
    header.update({"template_hash": model.template_hash, "normalized": bool(model.normalized), "arrays": {}})
    for name in names:
        value = getattr(model, name)
        if value is None:
            continue
        header["arrays"][name] = write_array(path.with_name(f"{path.stem}.{name}.f64"), value)
    write_json(path, header)
    logger.info("寫出模型 %s", path)


def read_model(path: Path) -> Model:
    path = Path(path)
    header = read_json(path)
    arrays = {name: read_array(path.parent / desc["file"], tuple(desc["shape"]))
              for name, desc in header.get("arrays", {}).items()}
    try:
        if header["kind"] == "species":
            return SpeciesModel(
                template_hash=header["template_hash"], dv=arrays["dv"], basis=arrays["basis"],
                betas=arrays["betas"], sample_ids=list(header.get("sample_ids", [])),
                species=header.get("species", ""), pca_mean=arrays.get("pca_mean"),
                pca_components=arrays.get("pca_components"), pca_variances=arrays.get("pca_variances"),
                normalized=bool(header.get("normalized", False)),
            )
        if header["kind"] == "multispecies":
            return MultiSpeciesModel(
                template_hash=header["template_hash"], mean=arrays["mean"], components=arrays["components"],
                variances=arrays["variances"], species=list(header["species"]),
                coefficients=arrays["coefficients"], normalized=bool(header.get("normalized", True)),
                source=header.get("source", "means"),
            )
    except KeyError as e:
        raise ShapeError(f"模型檔 {path} 缺少欄位 {e}", code="format") from e
    raise ShapeError(f"未知的模型種類: {header.get('kind')}", code="format")


# ---------------------------------------------------------------------------
# 封存真值
# ---------------------------------------------------------------------------

def _digest(body: dict) -> str:
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()


def write_sealed(path: Path, body: Dict):
    write_json(path, {"body": body, "sha256": _digest(body)})


def read_sealed(path: Path) -> Dict:
    data = read_json(path)
    if _digest(data["body"]) != data.get("sha256"):
        raise ShapeError(f"{path} 的 sha256 不符，檔案可能遭修改", code="sealed")
    return data["body"]
