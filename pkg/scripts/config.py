#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
config.py - 流程設定

PipelineConfig 收集所有可調參數（能量權重、σ、最佳化設定、門檻、基底數量等）。
設定檔為 `key=value` 格式（# 開頭為註解），命令列旗標覆寫設定檔，設定檔覆寫預設值。
"""

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import List, Optional

from scripts.errors import ShapeError
from scripts.model_energy import EnergyWeights
from scripts.model_optim import OptimConfig, Stage
from scripts.model_render import DEFAULT_SIGMA

# 資料路徑
BASE_DIR = Path(__file__).resolve().parent.parent
DATA_DIR = BASE_DIR / "data"

SECTION = "pipeline"


@dataclass
class PipelineConfig:
    # 能量權重
    w_kp: float = 1.0
    w_msk: float = 50.0
    w_prior: float = 1.0
    w_edge: float = 5.0
    w_lap: float = 50.0
    w_arap: float = 1.0
    w_sym: float = 10.0
    w_ortho: float = 0.0
    w_beta: float = 1.0
    gm_sigma: float = 0.0  # 0 表示外框對角線的 gm_sigma_fraction 倍
    gm_sigma_fraction: float = 0.05
    huber_delta: float = 0.5
    sigma: float = DEFAULT_SIGMA

    # 最佳化
    algorithm: str = "adam"
    step_size: float = 0.01
    tolerance: float = 1e-6
    grad_clip: float = 0.0
    step_anneal: float = 0.3
    sigma_anneal: float = 0.5
    iters_global: int = 150
    iters_pose: int = 150
    iters_silhouette: int = 60
    shape_iters: int = 300
    shape_step: float = 2e-3

    # 門檻與模型大小
    fail_pck: float = 0.5
    fail_iou: float = 0.4
    pck_threshold: float = 0.05
    n_basis: int = 4
    aves_rank: int = 4
    normalize: bool = True
    aves_source: str = "means"

    # 合成資料與相機
    db_size: int = 5000
    canonical_depth: float = 3.0
    image_width: int = 64
    image_height: int = 64
    prior_scale: float = 1.0

    # 執行
    threads: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.aves_source not in ("means", "individuals"):
            raise ShapeError(f"aves_source 必須為 means 或 individuals，實際 {self.aves_source}", code="config")
        if self.n_basis < 0 or self.db_size < 1 or self.threads < 1:
            raise ShapeError("n_basis ≥ 0、db_size ≥ 1、threads ≥ 1", code="config")
        if self.image_width <= 0 or self.image_height <= 0 or self.canonical_depth <= 0:
            raise ShapeError("影像尺寸與 canonical_depth 必須為正", code="config")
        self.energy_weights()
        self.optim_config()

    def energy_weights(self) -> EnergyWeights:
        return EnergyWeights(
            w_kp=self.w_kp, w_msk=self.w_msk, w_prior=self.w_prior, w_edge=self.w_edge, w_lap=self.w_lap,
            w_arap=self.w_arap, w_sym=self.w_sym, w_ortho=self.w_ortho, w_beta=self.w_beta,
            gm_sigma=self.gm_sigma or None, gm_sigma_fraction=self.gm_sigma_fraction,
            huber_delta=self.huber_delta,
        )

    def align_stages(self) -> List[Stage]:
        """粗到細：平移與整體旋轉 → 完整姿勢 → 加入輪廓與 κ"""
        return [
            Stage(("gamma", "theta_root"), self.iters_global, ("kp",)),
            Stage(("gamma", "theta_root", "theta", "alpha", "beta"), self.iters_pose, ("kp", "prior", "beta")),
            Stage(("gamma", "theta_root", "theta", "alpha", "kappa", "beta"), self.iters_silhouette,
                  ("kp", "prior", "msk", "beta")),
        ]

    def optim_config(self, stages: Optional[List[Stage]] = None) -> OptimConfig:
        return OptimConfig(
            algorithm=self.algorithm, max_iters=self.iters_pose, step_size=self.step_size,
            tolerance=self.tolerance, grad_clip=self.grad_clip, step_anneal=self.step_anneal,
            sigma_anneal=self.sigma_anneal, stages=list(stages) if stages is not None else self.align_stages(),
        )

    def shape_optim_config(self) -> OptimConfig:
        return OptimConfig(algorithm="adam", max_iters=self.shape_iters, step_size=self.shape_step,
                           tolerance=self.tolerance, grad_clip=self.grad_clip)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **overrides) -> "PipelineConfig":
        """以非 None 的值覆寫欄位（命令列旗標）"""
        values = {k: v for k, v in overrides.items() if v is not None}
        unknown = set(values) - {f.name for f in fields(self)}
        if unknown:
            raise ShapeError(f"未知的設定鍵: {sorted(unknown)}", code="config")
        return replace(self, **values)


def _coerce(parser: configparser.ConfigParser, key: str, kind):
    try:
        if kind is bool:
            return parser.getboolean(SECTION, key)
        if kind is int:
            return parser.getint(SECTION, key)
        if kind is float:
            return parser.getfloat(SECTION, key)
        return parser.get(SECTION, key)
    except ValueError as e:
        raise ShapeError(f"設定 {key} 的值無法轉換為 {kind.__name__}: {e}", code="config") from e


def parse_config(text: str, base: Optional[PipelineConfig] = None) -> PipelineConfig:
    """解析 key=value 文字；未知鍵視為錯誤"""
    parser = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(f"[{SECTION}]\n" + text)
    except configparser.Error as e:
        raise ShapeError(f"設定檔格式錯誤: {e}", code="config") from e
    kinds = {f.name: type(getattr(base or PipelineConfig(), f.name)) for f in fields(PipelineConfig)}
    values = {}
    for key in parser[SECTION]:
        if key not in kinds:
            raise ShapeError(f"未知的設定鍵: {key}", code="config")
        values[key] = _coerce(parser, key, kinds[key])
    return (base or PipelineConfig()).with_overrides(**values)


def load_config(path: Optional[Path] = None, **overrides) -> PipelineConfig:
    """預設值 ← 設定檔 ← 命令列旗標"""
    config = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ShapeError(f"找不到設定檔: {path}", code="missing-file")
        config = parse_config(path.read_text(encoding="utf-8"), config)
    return config.with_overrides(**overrides)


def format_config(config: PipelineConfig) -> str:
    lines = [f"{k}={str(v).lower() if isinstance(v, bool) else v}" for k, v in config.to_dict().items()]
    return "\n".join(lines) + "\n"
