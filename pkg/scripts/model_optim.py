#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
model_optim.py - 參數向量、梯度評估與最小化

ParamVector 把所有最佳化參數攤平成一個向量並記錄區塊配置；
evaluate 以 torch 自動微分回傳目標值與完整梯度（凍結區塊為 0）；
minimize 以 Adam 或帶強 Wolfe 線搜尋的 L-BFGS 求解，minimize_staged
依階段表切換啟用區塊並退火步長與 σ。
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from scripts.errors import DivergenceError, DimensionError, NonFiniteError, ProjectionError, ShapeError
from scripts.model_mesh import DTYPE, wrap_axis_angle

logger = logging.getLogger(__name__)

ALGORITHMS = ("adam", "lbfgs")
CONVERGENCE_WINDOW = 10
POSITIVE_FLOOR = 1e-3

Terms = Dict[str, torch.Tensor]
Objective = Callable[[Dict[str, torch.Tensor]], Union[torch.Tensor, Terms]]


def clamp_positive(x: torch.Tensor) -> torch.Tensor:
    return x.clamp(min=POSITIVE_FLOOR)


def wrap_rotations(x: torch.Tensor) -> torch.Tensor:
    return wrap_axis_angle(x.reshape(-1, 3)).reshape(x.shape)


@dataclass
class Block:
    name: str
    start: int
    stop: int
    shape: Tuple[int, ...]
    frozen: bool = False
    project: Optional[Callable[[torch.Tensor], torch.Tensor]] = None

    @property
    def size(self) -> int:
        return self.stop - self.start


class ParamVector:
    """攤平的參數向量與具名區塊；區塊互不重疊且涵蓋整個向量"""

    def __init__(self):
        self.values = np.zeros(0, dtype=np.float64)
        self.blocks: Dict[str, Block] = {}

    def add(self, name: str, value, frozen: bool = False, project=None) -> "ParamVector":
        if name in self.blocks:
            raise ShapeError(f"參數區塊 {name} 重複", code="param-layout")
        value = np.array(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise ShapeError(f"參數區塊 {name} 含非有限值", code="param-layout")
        start = len(self.values)
        self.blocks[name] = Block(name, start, start + value.size, value.shape, frozen, project)
        self.values = np.concatenate([self.values, value.ravel()])
        return self

    def __contains__(self, name: str) -> bool:
        return name in self.blocks

    def __len__(self) -> int:
        return len(self.values)

    def get(self, name: str) -> np.ndarray:
        b = self.blocks[name]
        return self.values[b.start:b.stop].reshape(b.shape).copy()

    def set(self, name: str, value):
        b = self.blocks[name]
        value = np.asarray(value, dtype=np.float64)
        if value.size != b.size:
            raise DimensionError(name, b.shape, value.shape)
        self.values[b.start:b.stop] = value.ravel()

    def set_active(self, names: Sequence[str]):
        """只啟用指定的區塊，其餘全部凍結"""
        unknown = set(names) - set(self.blocks)
        if unknown:
            raise ShapeError(f"未知的參數區塊: {sorted(unknown)}", code="param-layout")
        for b in self.blocks.values():
            b.frozen = b.name not in names

    def freeze(self, *names: str):
        for name in names:
            self.blocks[name].frozen = True

    @property
    def active(self) -> List[str]:
        return [b.name for b in self.blocks.values() if not b.frozen]

    def active_mask(self) -> np.ndarray:
        mask = np.zeros(len(self.values), dtype=bool)
        for b in self.blocks.values():
            if not b.frozen:
                mask[b.start:b.stop] = True
        return mask

    def views(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        return {b.name: x[b.start:b.stop].reshape(b.shape) for b in self.blocks.values()}

    def project(self, x: torch.Tensor) -> torch.Tensor:
        """對啟用區塊套用投影（例如 α、κ 下限）"""
        out = x
        for b in self.blocks.values():
            if b.project is not None and not b.frozen:
                out = out.clone() if out is x else out
                out[b.start:b.stop] = b.project(x[b.start:b.stop].reshape(b.shape)).reshape(-1)
        return out

    def copy(self) -> "ParamVector":
        other = ParamVector()
        other.values = self.values.copy()
        other.blocks = {k: Block(**vars(b)) for k, b in self.blocks.items()}
        return other

    def with_values(self, values: np.ndarray) -> "ParamVector":
        other = self.copy()
        other.values = np.array(values, dtype=np.float64)
        return other


@dataclass
class Stage:
    """一個最佳化階段：啟用的區塊、迭代數與使用的能量項"""

    active: Tuple[str, ...]
    iters: int
    terms: Tuple[str, ...] = ()

    def __post_init__(self):
        self.active = tuple(self.active)
        self.terms = tuple(self.terms)
        if self.iters <= 0:
            raise ShapeError("階段迭代數必須為正", code="optim-config")


@dataclass
class OptimConfig:
    algorithm: str = "adam"
    max_iters: int = 200
    step_size: float = 0.01
    tolerance: float = 1e-6
    grad_clip: float = 0.0  # 0 表示不裁剪
    step_anneal: float = 0.3
    sigma_anneal: float = 0.5
    history_size: int = 10
    stages: List[Stage] = field(default_factory=list)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ShapeError(f"未知的最佳化演算法 {self.algorithm}，可用: {ALGORITHMS}", code="optim-config")
        if self.max_iters <= 0 or self.step_size <= 0:
            raise ShapeError("max_iters 與 step_size 必須為正", code="optim-config")
        if self.tolerance < 0 or self.grad_clip < 0:
            raise ShapeError("tolerance 與 grad_clip 不可為負", code="optim-config")

    def for_stage(self, index: int, stage: Stage) -> "OptimConfig":
        return OptimConfig(algorithm=self.algorithm, max_iters=stage.iters,
                           step_size=self.step_size * self.step_anneal ** index,
                           tolerance=self.tolerance, grad_clip=self.grad_clip,
                           step_anneal=self.step_anneal, sigma_anneal=self.sigma_anneal,
                           history_size=self.history_size)


def _as_terms(result) -> Terms:
    if isinstance(result, dict):
        return result
    return {"objective": result}


def _first_bad_gradient(objective: Objective, params: ParamVector, x: torch.Tensor) -> str:
    """重新評估並逐項求梯度，找出第一個梯度非有限的能量項"""
    point = x.detach().clone().requires_grad_(True)
    terms = _as_terms(objective(params.views(point)))
    for name, term in terms.items():
        if not term.requires_grad:
            continue
        (grad,) = torch.autograd.grad(term, point, retain_graph=True, allow_unused=True)
        if grad is not None and not torch.isfinite(grad).all():
            return name
    return "total"


def evaluate_terms(objective: Objective, params: ParamVector,
                   x: Optional[torch.Tensor] = None) -> Tuple[float, np.ndarray, Dict[str, float]]:
    """回傳 (目標值, 梯度, 各項數值)；凍結區塊的梯度為 0"""
    if x is None:
        if not np.all(np.isfinite(params.values)):
            raise NonFiniteError("params")
        x = torch.tensor(params.values, dtype=DTYPE)
    x = x.detach().clone().requires_grad_(True)
    terms = _as_terms(objective(params.views(x)))
    breakdown = {}
    for name, term in terms.items():
        value = float(term.detach())
        if not np.isfinite(value):
            raise NonFiniteError(name)
        breakdown[name] = value
    total = sum(terms.values()) if terms else torch.zeros((), dtype=DTYPE)
    if total.requires_grad:
        (grad,) = torch.autograd.grad(total, x, allow_unused=True)
        grad = np.zeros(len(params)) if grad is None else grad.numpy().copy()
    else:
        grad = np.zeros(len(params))
    grad[~params.active_mask()] = 0.0
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(_first_bad_gradient(objective, params, x), what="gradient")
    return float(total.detach()), grad, breakdown


def evaluate(objective: Objective, params: ParamVector) -> Tuple[float, np.ndarray]:
    value, grad, _ = evaluate_terms(objective, params)
    return value, grad


@dataclass
class TraceEntry:
    stage: int
    iteration: int
    objective: float
    terms: Dict[str, float]


def trace_frame(trace: Sequence[TraceEntry]) -> pd.DataFrame:
    """每次迭代一列：stage、iteration、objective 與各能量項"""
    rows = [{"stage": t.stage, "iteration": t.iteration, "objective": t.objective, **t.terms} for t in trace]
    return pd.DataFrame(rows, columns=None if rows else ["stage", "iteration", "objective"])


def _converged(best: List[float], tolerance: float) -> bool:
    if len(best) <= CONVERGENCE_WINDOW:
        return False
    old, new = best[-1 - CONVERGENCE_WINDOW], best[-1]
    return (old - new) <= tolerance * max(abs(old), np.finfo(np.float64).tiny)


def _minimize_adam(objective, params, config, x, mask, frozen_values, record):
    opt = torch.optim.Adam([x], lr=config.step_size)
    best_value, best_x, best = np.inf, x.detach().clone(), []
    for _ in range(config.max_iters):
        value, grad, terms = evaluate_terms(objective, params, x)
        record(value, terms)
        if value < best_value:
            best_value, best_x = value, x.detach().clone()
        best.append(best_value)
        if _converged(best, config.tolerance):
            break
        x.grad = torch.as_tensor(grad, dtype=DTYPE)
        if config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_([x], config.grad_clip)
        opt.step()
        with torch.no_grad():
            x.copy_(params.project(x))
            x[~mask] = frozen_values
    return best_x


def _minimize_lbfgs(objective, params, config, x, mask, frozen_values, record):
    def make():
        return torch.optim.LBFGS([x], lr=1.0, max_iter=1, history_size=config.history_size,
                                 tolerance_grad=1e-12, tolerance_change=0.0, line_search_fn="strong_wolfe")

    opt = make()
    last = {}

    def closure():
        opt.zero_grad()
        value, grad, terms = evaluate_terms(objective, params, x)
        x.grad = torch.as_tensor(grad, dtype=DTYPE)
        last["value"], last["terms"], last["grad"] = value, terms, grad
        return torch.tensor(value, dtype=DTYPE)

    best = []
    prev_x, prev_value = None, np.inf
    for _ in range(config.max_iters):
        closure()
        if last["value"] > prev_value:
            # 投影使目標值上升：退回上一個點並停止
            with torch.no_grad():
                x.copy_(prev_x)
            break
        record(last["value"], last["terms"])
        best.append(last["value"])
        if _converged(best, config.tolerance) or np.abs(last["grad"]).max() <= 1e-12:
            break
        prev_x, prev_value = x.detach().clone(), last["value"]
        opt.step(closure)
        with torch.no_grad():
            projected = params.project(x)
            if not torch.equal(projected, x):
                x.copy_(projected)
                opt = make()
            x[~mask] = frozen_values
    else:
        closure()
        if last["value"] > prev_value:
            with torch.no_grad():
                x.copy_(prev_x)
    return x.detach().clone()


def minimize(objective: Objective, params: ParamVector, config: OptimConfig,
             trace: Optional[List[TraceEntry]] = None, stage: int = 0) -> Tuple[ParamVector, List[float]]:
    """回傳 (最佳參數, 目標值軌跡)；凍結區塊保持不變"""
    trace = trace if trace is not None else []
    values: List[float] = []
    x = torch.tensor(params.values, dtype=DTYPE, requires_grad=True)
    mask = torch.as_tensor(params.active_mask())
    frozen_values = x.detach()[~mask].clone()
    last_finite = {"x": params.values.copy()}

    def record(value: float, terms: Dict[str, float]):
        values.append(value)
        trace.append(TraceEntry(stage, len(values) - 1, value, terms))
        last_finite["x"] = x.detach().numpy().copy()

    if not mask.any():
        value, _, terms = evaluate_terms(objective, params)
        record(value, terms)
        return params.copy(), values

    runner = _minimize_adam if config.algorithm == "adam" else _minimize_lbfgs
    try:
        best_x = runner(objective, params, config, x, mask, frozen_values, record)
    except (NonFiniteError, ProjectionError) as e:
        raise DivergenceError(f"最佳化發散: {e}", params=params.with_values(last_finite["x"]), trace=values) from e

    result = params.with_values(best_x.numpy())
    logger.debug("minimize(%s): %d 次迭代, %.6g → %.6g", config.algorithm, len(values), values[0], min(values))
    return result, values


def minimize_staged(make_objective: Callable[[Stage, float], Objective], params: ParamVector,
                    config: OptimConfig, sigma: float) -> Tuple[ParamVector, List[TraceEntry]]:
    """依 config.stages 逐階段最小化；每階段步長 ×step_anneal、σ ×sigma_anneal"""
    if not config.stages:
        raise ShapeError("沒有設定最佳化階段", code="optim-config")
    trace: List[TraceEntry] = []
    current = params.copy()
    for i, stage in enumerate(config.stages):
        active = [name for name in stage.active if name in current]
        current.set_active(active)
        stage_sigma = sigma * config.sigma_anneal ** i
        current, _ = minimize(make_objective(stage, stage_sigma), current, config.for_stage(i, stage), trace, stage=i)
    return current, trace
