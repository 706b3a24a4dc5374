#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
eval_phylo.py - 系統發生訊號分析

讀取 Newick 系統樹，在布朗運動模型下：
1. 估計每個性狀維度的 Pagel's λ，並以 λ = 0 的概似比檢定求 p 值
2. 多維性狀以平均 λ 與 Fisher 合併 p 值彙總
3. 以廣義最小平方重建內部節點的祖先狀態
"""

import logging
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd
from Bio import Phylo
from scipy import linalg, stats
from scipy.optimize import minimize_scalar

from scripts.errors import DimensionError, ShapeError

logger = logging.getLogger(__name__)

LAMBDA_XATOL = 1e-4
SINGULAR_JITTER = 1e-10
MIN_SPECIES = 4


class PhyloTree:
    """有根系統樹；葉節點名稱唯一，枝長非負（缺少時視為 0）"""

    def __init__(self, tree):
        self.tree = tree
        self.clades = list(tree.find_clades(order="preorder"))
        self.leaves = [c for c in self.clades if c.is_terminal()]
        self.leaf_names = [str(c.name) for c in self.leaves]
        if any(c.name is None for c in self.leaves):
            raise ShapeError("系統樹有未命名的葉節點", code="tree")
        if len(set(self.leaf_names)) != len(self.leaf_names):
            raise ShapeError("系統樹的葉節點名稱重複", code="tree")
        for c in self.clades:
            if c.branch_length is not None and c.branch_length < 0:
                raise ShapeError(f"節點 {c.name} 的枝長為負", code="tree")

        self.internal = [c for c in self.clades if not c.is_terminal()]
        self.internal_names = []
        for k, c in enumerate(self.internal):
            self.internal_names.append(str(c.name) if c.name else f"node{k}")

        # 每個節點自根起算的深度（根節點本身的枝長不計）
        self.depth: Dict[int, float] = {id(self.clades[0]): 0.0}
        for c in self.clades:
            for child in c.clades:
                self.depth[id(child)] = self.depth[id(c)] + float(child.branch_length or 0.0)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def shared_path_matrix(self, nodes: Sequence = None) -> np.ndarray:
        """節點間共有路徑長度（自根到最近共同祖先的距離）"""
        nodes = list(self.leaves if nodes is None else nodes)
        index = {id(c): i for i, c in enumerate(nodes)}
        mat = np.zeros((len(nodes), len(nodes)))
        # 前序走訪：較深的共同祖先會覆寫較淺的
        for c in self.clades:
            members = [index[id(d)] for d in c.find_clades() if id(d) in index]
            if members:
                mat[np.ix_(members, members)] = self.depth[id(c)]
        return mat

    def covariance(self) -> np.ndarray:
        return self.shared_path_matrix()


def read_newick(text: str) -> PhyloTree:
    try:
        tree = Phylo.read(StringIO(text.strip()), "newick")
    except Exception as e:
        raise ShapeError(f"無法解析 Newick: {e}", code="newick") from e
    return PhyloTree(tree)


def load_tree(path: Path) -> PhyloTree:
    path = Path(path)
    if not path.exists():
        raise ShapeError(f"找不到系統樹檔案: {path}", code="missing-file")
    return read_newick(path.read_text(encoding="utf-8"))


@dataclass
class TraitMatrix:
    species: List[str]
    values: np.ndarray  # (S, D)
    columns: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != len(self.species):
            raise DimensionError("traits", len(self.species), self.values.shape[0])
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("性狀矩陣含非有限值", code="traits")
        if not self.columns:
            self.columns = [f"trait{i}" for i in range(self.values.shape[1])]

    def ordered(self, names: Sequence[str]) -> np.ndarray:
        """依給定物種順序排列；物種集合必須與系統樹葉節點一致"""
        if set(names) != set(self.species) or len(names) != len(self.species):
            missing = sorted(set(names) ^ set(self.species))
            raise ShapeError(f"性狀物種與系統樹葉節點不一致: {missing}", code="species-mismatch")
        row = {s: i for i, s in enumerate(self.species)}
        return self.values[[row[n] for n in names]]


def read_traits(path: Path) -> TraitMatrix:
    """CSV：species 欄加上數值欄"""
    df = pd.read_csv(path)
    if "species" not in df.columns:
        raise ShapeError(f"{path} 缺少 species 欄", code="traits")
    columns = [c for c in df.columns if c != "species"]
    return TraitMatrix(df["species"].astype(str).tolist(), df[columns].to_numpy(dtype=np.float64), columns)


def lambda_transform(cov: np.ndarray, lam: float) -> np.ndarray:
    """保留對角線，非對角元素乘以 λ"""
    return lam * cov + (1.0 - lam) * np.diag(np.diag(cov))


def _factor(cov: np.ndarray):
    try:
        return linalg.cho_factor(cov, lower=True)
    except linalg.LinAlgError:
        logger.warning("共變異數矩陣奇異，對角線加上 %.0e", SINGULAR_JITTER)
        return linalg.cho_factor(cov + SINGULAR_JITTER * np.eye(len(cov)), lower=True)


def gls_mean(cov: np.ndarray, x: np.ndarray) -> float:
    factor = _factor(cov)
    ones = np.ones(len(x))
    ci1 = linalg.cho_solve(factor, ones)
    return float(ci1 @ x / (ci1 @ ones))


def bm_log_likelihood(cov: np.ndarray, x: np.ndarray) -> float:
    """以 GLS 平均與最大概似速率 σ² 的剖面對數概似"""
    n = len(x)
    factor = _factor(cov)
    ones = np.ones(n)
    ci1 = linalg.cho_solve(factor, ones)
    mu = ci1 @ x / (ci1 @ ones)
    r = x - mu
    sigma2 = float(r @ linalg.cho_solve(factor, r)) / n
    log_det = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return float(-0.5 * (n * np.log(2.0 * np.pi * sigma2) + log_det + n))


@dataclass
class LambdaResult:
    columns: List[str]
    lambdas: np.ndarray
    p_values: np.ndarray
    log_likelihood: np.ndarray
    log_likelihood_null: np.ndarray

    @property
    def mean_lambda(self) -> float:
        return float(np.mean(self.lambdas))

    @property
    def std_lambda(self) -> float:
        return float(np.std(self.lambdas))

    @property
    def pooled_p(self) -> float:
        if len(self.p_values) == 1:
            return float(self.p_values[0])
        return float(stats.combine_pvalues(self.p_values, method="fisher")[1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"trait": self.columns, "lambda": self.lambdas, "p_value": self.p_values,
                             "log_likelihood": self.log_likelihood, "log_likelihood_lambda0": self.log_likelihood_null})


def _fit_lambda(cov: np.ndarray, x: np.ndarray):
    """回傳 (λ, p, logL(λ), logL(0))"""
    if np.ptp(x) == 0:
        return 0.0, 1.0, np.nan, np.nan
    offdiag = cov - np.diag(np.diag(cov))
    if not np.any(offdiag):
        ll = bm_log_likelihood(cov, x)
        return 0.0, 1.0, ll, ll

    def neg(lam):
        return -bm_log_likelihood(lambda_transform(cov, lam), x)

    res = minimize_scalar(neg, bounds=(0.0, 1.0), method="bounded", options={"xatol": LAMBDA_XATOL})
    candidates = [(float(res.fun), float(res.x)), (neg(0.0), 0.0), (neg(1.0), 1.0)]
    best_neg, lam = min(candidates)
    ll, ll0 = -best_neg, -candidates[1][0]
    stat = max(2.0 * (ll - ll0), 0.0)
    return lam, float(stats.chi2.sf(stat, df=1)), ll, ll0


def pagels_lambda(tree: PhyloTree, traits: TraitMatrix) -> LambdaResult:
    """每個性狀維度的 λ 最大概似估計與 λ = 0 概似比檢定（自由度 1）"""
    if tree.n_leaves < MIN_SPECIES:
        raise ShapeError(f"Pagel's λ 至少需要 {MIN_SPECIES} 個物種，實際 {tree.n_leaves}", code="too-few-species")
    cov = tree.covariance()
    x = traits.ordered(tree.leaf_names)
    rows = [_fit_lambda(cov, x[:, d]) for d in range(x.shape[1])]
    lambdas, p_values, ll, ll0 = (np.array(col, dtype=np.float64) for col in zip(*rows))
    result = LambdaResult(list(traits.columns), lambdas, p_values, ll, ll0)
    logger.info("Pagel's λ: 平均 %.3f ± %.3f, Fisher 合併 p = %.3g", result.mean_lambda, result.std_lambda,
                result.pooled_p)
    return result


def ancestral_states(tree: PhyloTree, traits: TraitMatrix) -> pd.DataFrame:
    """布朗運動下內部節點的最大概似祖先狀態：μ̂ + C_aT C_TT⁻¹ (x − μ̂)"""
    if tree.n_leaves < 2:
        raise ShapeError("祖先狀態重建至少需要 2 個物種", code="too-few-species")
    x = traits.ordered(tree.leaf_names)
    nodes = tree.leaves + tree.internal
    full = tree.shared_path_matrix(nodes)
    s = tree.n_leaves
    cov_tt, cov_at = full[:s, :s], full[s:, :s]
    factor = _factor(cov_tt)
    ones = np.ones(s)
    ci1 = linalg.cho_solve(factor, ones)
    mu = (ci1 @ x) / (ci1 @ ones)
    estimates = mu[None, :] + cov_at @ linalg.cho_solve(factor, x - mu[None, :])
    frame = pd.DataFrame(estimates, columns=traits.columns)
    frame.insert(0, "node", tree.internal_names)
    return frame
