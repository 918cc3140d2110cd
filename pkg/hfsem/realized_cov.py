"""
実現共分散

Q_XX = (1/T) Σ ΔX_i ΔX_iᵀ を固定長チャンクごとに計算し、
チャンク和を決まった順序のペアワイズ加算でまとめます。
チャンク長を固定しているので、並列実行の有無に関わらず結果はビット単位で一致します。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from .errors import DataError, DimensionError
from .matrix_core import asymcov_w, sym_matrix, vech
from .sde_sim import PathSample

logger = logging.getLogger(__name__)

CHUNK_ROWS = 4096


@dataclass(frozen=True, eq=False)
class RealizedCov:
    """実現共分散 Q（p×p）、使用した増分の数 n、期間 T"""

    Q: np.ndarray
    n: int
    T: float

    @property
    def p(self) -> int:
        return self.Q.shape[0]

    @property
    def h(self) -> float:
        return self.T / self.n


def _pairwise_sum(parts: List[np.ndarray]) -> np.ndarray:
    while len(parts) > 1:
        paired = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            paired.append(parts[-1])
        parts = paired
    return parts[0]


def realized_sum(increments: np.ndarray, chunk_rows: int = CHUNK_ROWS) -> np.ndarray:
    """Σ ΔX_i ΔX_iᵀ（正規化前）"""
    if chunk_rows < 1:
        raise DimensionError(f"chunk_rows は 1 以上が必要です: {chunk_rows}")
    parts = [
        increments[start:start + chunk_rows].T @ increments[start:start + chunk_rows]
        for start in range(0, increments.shape[0], chunk_rows)
    ]
    return _pairwise_sum(parts)


def realized_cov(path: PathSample, chunk_rows: int = CHUNK_ROWS) -> RealizedCov:
    """
    観測経路から実現共分散を計算します。

    Args:
        path: 観測経路（2 行以上）
        chunk_rows: 部分和に使う行数

    Returns:
        RealizedCov

    Raises:
        DataError: 非有限値を含む場合（最初の行番号付き）
    """
    X = path.X
    if X.shape[0] < 2:
        raise DataError("2 行以上の観測が必要です")
    finite = np.all(np.isfinite(X), axis=1)
    if not np.all(finite):
        raise DataError("観測に非有限値が含まれます", int(np.flatnonzero(~finite)[0]))
    increments = np.diff(X, axis=0)
    Q = sym_matrix(realized_sum(increments, chunk_rows) / path.grid.T)
    return RealizedCov(Q, increments.shape[0], float(path.grid.T))


def clt_zscores(q: RealizedCov, sigma0: np.ndarray) -> np.ndarray:
    """
    √n(vech Q − vech Σ₀) を √diag W(Σ₀) で割った標準化量（長さ p̄）。

    Raises:
        DomainError: Σ₀ が正定値でない場合
    """
    sigma0 = np.asarray(sigma0, dtype=float)
    if sigma0.shape != q.Q.shape:
        raise DimensionError(f"Σ₀ の形状 {sigma0.shape} が Q の形状 {q.Q.shape} と一致しません")
    w = asymcov_w(sigma0)
    return np.sqrt(q.n) * (vech(q.Q) - vech(sigma0)) / np.sqrt(np.diag(w))
