"""
対称行列の基本演算

vech / unvech、重複行列 D_p とその擬似逆行列、漸近共分散 W(Σ)、
Cholesky による対数行列式と正定値判定を提供します。
vech の並びは列優先の下三角 (1,1),(2,1),…,(p,1),(2,2),… で全モジュール共通です。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np

from .errors import DimensionError, DomainError, NotPositiveDefiniteError

logger = logging.getLogger(__name__)

PD_PIVOT_RTOL = 1e-12


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def sym_matrix(values) -> np.ndarray:
    """
    正方行列を受け取り、厳密に対称な行列を返します。

    Args:
        values: p×p の配列

    Returns:
        np.ndarray: (A + Aᵀ)/2
    """
    m = np.array(values, dtype=float, ndmin=2)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise DimensionError(f"正方行列が必要です: shape={m.shape}")
    out = 0.5 * (m + m.T)
    return out


def half_dim(p: int) -> int:
    """p̄ = p(p+1)/2"""
    return p * (p + 1) // 2


def dim_from_half(length: int) -> int:
    """長さ p̄ から p を復元します。p̄ の形でなければ DimensionError。"""
    p = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if p < 1 or half_dim(p) != length:
        raise DimensionError(f"長さ {length} は p(p+1)/2 の形ではありません")
    return p


@lru_cache(maxsize=64)
def vech_indices(p: int) -> Tuple[np.ndarray, np.ndarray]:
    """vech の各成分に対応する (行, 列) 添字を返します。"""
    upper_rows, upper_cols = np.triu_indices(p)
    # Aᵀ の上三角を行優先で読むと A の下三角を列優先で読むことになる
    return _readonly(upper_cols.copy()), _readonly(upper_rows.copy())


def vech(m: np.ndarray) -> np.ndarray:
    """対称行列の下三角を列優先で並べたベクトルを返します。"""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"正方行列が必要です: shape={m.shape}")
    rows, cols = vech_indices(m.shape[0])
    return m[rows, cols]


def unvech(h) -> np.ndarray:
    """vech の逆写像。長さが p(p+1)/2 でなければ DimensionError。"""
    values = np.asarray(h, dtype=float).reshape(-1)
    p = dim_from_half(values.size)
    rows, cols = vech_indices(p)
    out = np.zeros((p, p))
    out[rows, cols] = values
    out[cols, rows] = values
    return out


@dataclass(frozen=True)
class DuplicationPair:
    """重複行列 D_p と D_p⁺ = (DᵀD)⁻¹Dᵀ の組。"""

    dim_p: int
    D: np.ndarray
    D_plus: np.ndarray


@lru_cache(maxsize=32)
def duplication(p: int) -> DuplicationPair:
    """
    p 次の重複行列とその擬似逆行列を返します。

    Args:
        p: 元の行列の次元 (p ≥ 1)

    Returns:
        DuplicationPair: vec A = D vech A を満たす D と D⁺
    """
    if not isinstance(p, (int, np.integer)) or p <= 0:
        raise DimensionError(f"p は正の整数が必要です: {p}")
    p = int(p)
    rows, cols = vech_indices(p)
    k = np.arange(half_dim(p))
    D = np.zeros((p * p, half_dim(p)))
    # vec は列優先: (i, j) -> i + j·p
    D[rows + cols * p, k] = 1.0
    D[cols + rows * p, k] = 1.0
    # DᵀD は対角（成分 1 または 2）
    D_plus = D.T / D.sum(axis=0)[:, None]
    return DuplicationPair(p, _readonly(D), _readonly(D_plus))


def cholesky_pd(m: np.ndarray) -> np.ndarray:
    """
    Cholesky 因子 L (m = LLᵀ) を返します。
    ピボットが 1e-12·最大対角 以下なら NotPositiveDefiniteError。
    """
    m = np.asarray(m, dtype=float)
    scale = float(np.max(np.diag(m))) if m.size else 0.0
    if not np.isfinite(scale) or scale <= 0.0:
        raise NotPositiveDefiniteError("対角成分が正ではありません")
    try:
        lower = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"Cholesky 分解に失敗しました: {exc}") from exc
    pivots = np.diag(lower) ** 2
    if not np.all(np.isfinite(pivots)) or np.min(pivots) <= PD_PIVOT_RTOL * scale:
        raise NotPositiveDefiniteError("ピボットが許容値以下です")
    return lower


def is_pd(m: np.ndarray) -> bool:
    try:
        cholesky_pd(m)
    except NotPositiveDefiniteError:
        return False
    return True


def logdet_pd(m: np.ndarray) -> float:
    """
    正定値行列の対数行列式を Cholesky 分解で求めます。

    Raises:
        NotPositiveDefiniteError: 正定値でない場合
    """
    lower = cholesky_pd(m)
    return float(2.0 * np.sum(np.log(np.diag(lower))))


def asymcov_w(sigma: np.ndarray) -> np.ndarray:
    """
    W(Σ) = 2 D⁺(Σ⊗Σ)D⁺ᵀ を返します（vech Q の漸近共分散）。

    Raises:
        DomainError: Σ が正定値でない場合
    """
    sigma = sym_matrix(sigma)
    if not is_pd(sigma):
        raise DomainError("W(Σ) には正定値の Σ が必要です")
    pair = duplication(sigma.shape[0])
    w = 2.0 * pair.D_plus @ np.kron(sigma, sigma) @ pair.D_plus.T
    return 0.5 * (w + w.T)


def asymcov_w_inv(sigma: np.ndarray) -> np.ndarray:
    """W(Σ)⁻¹ = ½ Dᵀ(Σ⁻¹⊗Σ⁻¹)D"""
    sigma = sym_matrix(sigma)
    lower = cholesky_pd(sigma)
    eye = np.eye(sigma.shape[0])
    inv = np.linalg.solve(lower.T, np.linalg.solve(lower, eye))
    inv = 0.5 * (inv + inv.T)
    pair = duplication(sigma.shape[0])
    w_inv = 0.5 * pair.D.T @ np.kron(inv, inv) @ pair.D
    return 0.5 * (w_inv + w_inv.T)


def trace_weights(p: int) -> np.ndarray:
    """
    tr(A·B) = vech(A)ᵀ diag(w) vech(B)（A, B 対称）となる重み w。
    対角は 1、非対角は 2。
    """
    rows, cols = vech_indices(p)
    return np.where(rows == cols, 1.0, 2.0)
