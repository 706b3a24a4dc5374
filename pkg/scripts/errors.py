#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
errors.py - 例外類別

所有模組共用的例外階層。每個例外帶有簡短的 code，
命令列介面會以 `error code=<code> message=<text>` 單行格式輸出。
"""

from typing import Any, Optional


class ShapeError(ValueError):
    """所有本專案例外的基底類別"""

    code = "shape-error"

    def __init__(self, message: str, code: Optional[str] = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class DimensionError(ShapeError):
    """維度不一致，訊息中會指出出錯的欄位"""

    code = "dimension"

    def __init__(self, field: str, expected: Any, actual: Any):
        super().__init__(f"欄位 {field} 維度錯誤: 預期 {expected}，實際 {actual}")
        self.field = field


class ProjectionError(ShapeError):
    """點位於相機近平面之後，無法投影"""

    code = "projection"

    def __init__(self, index: int, depth: float, z_near: float):
        super().__init__(f"第 {index} 個點深度 {depth:.6g} 不大於 z_near={z_near:.6g}")
        self.index = index


class AnnotationError(ShapeError):
    """標註資料無法使用（例如沒有可見關鍵點）"""

    code = "annotation"


class NonFiniteError(ShapeError):
    """目標函數或梯度出現非有限值"""

    code = "non-finite"

    def __init__(self, term: str, what: str = "value"):
        super().__init__(f"能量項 {term} 的 {what} 出現非有限值")
        self.term = term


class DivergenceError(ShapeError):
    """最佳化發散，附帶最後一個有限狀態以便診斷"""

    code = "divergence"

    def __init__(self, message: str, params: Any = None, trace: Any = None):
        super().__init__(message)
        self.params = params
        self.trace = trace if trace is not None else []


class ModelMismatchError(ShapeError):
    """模型與資料集所用的模板不一致"""

    code = "hash-mismatch"
