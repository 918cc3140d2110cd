"""
潜在拡散過程のシミュレーション

ξ, δ, ε, ζ の 4 過程を Euler–Maruyama 法で生成し、
測定方程式・構造方程式から観測過程 X = (X1ᵀ, X2ᵀ)ᵀ を組み立てます。

乱数: 各過程は SeedSequence(seed, spawn_key=(replication, index)) から作る
PCG64 の独立ストリームを使い、standard_normal((n, r)) の i 行目を
i ステップ目の Z_i として消費します（index: ξ=0, δ=1, ε=2, ζ=3）。
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np

from .errors import ConfigError, DataError, DimensionError, DomainError, HfsemError, ModelError, SimulationError
from .lisrel_model import invert_psi
from .matrix_core import is_pd

logger = logging.getLogger(__name__)

PROCESS_NAMES = ("xi", "delta", "eps", "zeta")
GRID_RTOL = 1e-12

VectorField = Callable[[np.ndarray], np.ndarray]


def stream_rng(seed: int, replication: int, index: int) -> np.random.Generator:
    """(seed, replication, index) から決定的に導かれる独立な乱数ストリーム。"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(int(replication), int(index)))
    return np.random.Generator(np.random.PCG64(sequence))


@dataclass(frozen=True)
class SamplingGrid:
    """t_i = i·h (i = 0..n), T = n·h"""

    n: int
    h: float
    T: Optional[float] = None

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n は 1 以上の整数が必要です: {self.n}")
        if not np.isfinite(self.h) or self.h <= 0:
            raise DomainError(f"h は正の値が必要です: {self.h}")
        object.__setattr__(self, "n", int(self.n))
        horizon = self.n * float(self.h)
        if self.T is None:
            object.__setattr__(self, "T", horizon)
        elif abs(float(self.T) - horizon) > GRID_RTOL * abs(float(self.T)):
            raise DomainError(f"T={self.T} が n·h={horizon} と一致しません")

    def times(self) -> np.ndarray:
        return np.arange(self.n + 1) * self.h


@dataclass(frozen=True, eq=False)
class AffineDrift:
    """x ↦ −(A·x − b) の OU 型ドリフト。プロセス間で pickle できるようクラスで持ちます。"""

    A: np.ndarray
    b: np.ndarray

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return -(self.A @ x - self.b)


def ou_drift(A, b) -> AffineDrift:
    """
    OU 型ドリフト x ↦ −(A·x − b) を作ります。

    Raises:
        DimensionError: A が正方でない、または b の長さが合わない場合
    """
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"A は正方行列が必要です: shape={A.shape}")
    if b.size != A.shape[0]:
        raise DimensionError(f"b の長さ {b.size} が A の次元 {A.shape[0]} と一致しません")
    return AffineDrift(A, b)


def euler_maruyama(drift: VectorField, S, c0, grid: SamplingGrid, rng: np.random.Generator) -> np.ndarray:
    """
    Euler–Maruyama 法で (n+1)×d の経路を生成します。

    Y_0 = c0,  Y_i = Y_{i-1} + drift(Y_{i-1})·h + S·√h·Z_i

    Args:
        drift: 状態 -> ドリフトベクトル
        S: d×r の拡散行列
        c0: 初期値（長さ d）
        grid: 時間格子
        rng: 乱数ストリーム（standard_normal((n, r)) を 1 回だけ消費）

    Raises:
        SimulationError: ドリフトが非有限値を返した場合（ステップ番号付き）
    """
    S = np.array(S, dtype=float, ndmin=2)
    y = np.array(c0, dtype=float).reshape(-1)
    if S.shape[0] != y.size:
        raise DimensionError(f"S の行数 {S.shape[0]} が状態次元 {y.size} と一致しません")
    n, h = grid.n, grid.h
    noise = rng.standard_normal((n, S.shape[1])) @ S.T * np.sqrt(h)
    path = np.empty((n + 1, y.size))
    path[0] = y
    for i in range(1, n + 1):
        dy = np.asarray(drift(y), dtype=float)
        if dy.shape != y.shape or not np.all(np.isfinite(dy)):
            raise SimulationError("ドリフトが有限値を返しませんでした", i)
        y = y + dy * h + noise[i - 1]
        path[i] = y
    return path


@dataclass(frozen=True, eq=False)
class LatentProcess:
    """ドリフト、拡散行列 S、初期値 c の組。"""

    drift: VectorField
    S: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S", np.array(self.S, dtype=float, ndmin=2))
        object.__setattr__(self, "c", np.array(self.c, dtype=float).reshape(-1))


@dataclass(frozen=True, eq=False)
class DiffusionSystem:
    """
    真のモデル: 4 つの潜在過程と構造行列。

        X1 = Λx1·ξ + δ,  X2 = Λx2·η + ε,  η = Bη + Γξ + ζ
    """

    xi: LatentProcess
    delta: LatentProcess
    eps: LatentProcess
    zeta: LatentProcess
    Lx1: np.ndarray
    Lx2: np.ndarray
    Gamma: np.ndarray
    B: np.ndarray
    name: str = "system"
    strict: bool = True

    def __post_init__(self):
        for attr in ("Lx1", "Lx2", "Gamma", "B"):
            object.__setattr__(self, attr, np.array(getattr(self, attr), dtype=float, ndmin=2))
        p1, k1 = self.Lx1.shape
        p2, k2 = self.Lx2.shape
        expected = {
            "Gamma": (k2, k1),
            "B": (k2, k2),
        }
        for attr, shape in expected.items():
            if getattr(self, attr).shape != shape:
                raise DimensionError(f"{attr} の形状 {getattr(self, attr).shape} が {shape} と一致しません")
        for attr, dim in (("xi", k1), ("delta", p1), ("eps", p2), ("zeta", k2)):
            process = getattr(self, attr)
            if process.S.shape[0] != dim or np.size(process.c) != dim:
                raise DimensionError(f"{attr} の次元が {dim} と一致しません")
        if np.any(np.diag(self.B) != 0.0):
            raise ModelError("B の対角成分は 0 である必要があります")
        psi = np.eye(k2) - self.B
        if k2 and not is_pd(psi @ psi.T):
            raise ModelError("Ψ = I − B が正則ではありません")
        if np.linalg.matrix_rank(self.Lx1) < k1:
            raise ModelError("Λx1 が列フルランクではありません")
        if not self.strict:
            return
        if not is_pd(self.delta.S @ self.delta.S.T):
            raise ModelError("Σδδ = S2S2ᵀ が正定値ではありません")
        if p2 and not is_pd(self.eps.S @ self.eps.S.T):
            raise ModelError("Σεε = S3S3ᵀ が正定値ではありません")

    @property
    def p1(self) -> int:
        return self.Lx1.shape[0]

    @property
    def p2(self) -> int:
        return self.Lx2.shape[0]

    @property
    def k1(self) -> int:
        return self.Lx1.shape[1]

    @property
    def k2(self) -> int:
        return self.Lx2.shape[1]

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    def psi_inv(self) -> np.ndarray:
        return invert_psi(np.eye(self.k2) - self.B)

    def sigma0(self) -> np.ndarray:
        """
        真の共分散行列 Σ₀ をブロックごとに直接計算します。

        Returns:
            np.ndarray: p×p の対称行列
        """
        sxx = self.xi.S @ self.xi.S.T
        sdd = self.delta.S @ self.delta.S.T
        see = self.eps.S @ self.eps.S.T
        szz = self.zeta.S @ self.zeta.S.T
        psi_inv = self.psi_inv()
        s11 = self.Lx1 @ sxx @ self.Lx1.T + sdd
        s12 = self.Lx1 @ sxx @ self.Gamma.T @ psi_inv.T @ self.Lx2.T
        s22 = self.Lx2 @ psi_inv @ (self.Gamma @ sxx @ self.Gamma.T + szz) @ psi_inv.T @ self.Lx2.T + see
        sigma = np.block([[s11, s12], [s12.T, s22]])
        return 0.5 * (sigma + sigma.T)


@dataclass(frozen=True, eq=False)
class PathSample:
    """格子点 t_0..t_n 上の観測 X（(n+1)×p）"""

    grid: SamplingGrid
    X: np.ndarray
    seed: Optional[int] = None
    replication: int = 0
    latent: Optional[Dict[str, np.ndarray]] = field(default=None)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2 or X.shape[0] != self.grid.n + 1:
            raise DimensionError(f"X の行数 {X.shape[0] if X.ndim == 2 else X.shape} が n+1={self.grid.n + 1} と一致しません")
        object.__setattr__(self, "X", X)

    @property
    def p(self) -> int:
        return self.X.shape[1]


def simulate_observations(
    system: DiffusionSystem,
    grid: SamplingGrid,
    seed: int,
    *,
    replication: int = 0,
    keep_latent: bool = False,
) -> PathSample:
    """
    潜在過程を生成して観測過程 X を組み立てます。

    Args:
        system: 真のモデル
        grid: 時間格子
        seed: 基底シード
        replication: 反復番号（サブストリームの導出に使用）
        keep_latent: 潜在経路を保持するか

    Returns:
        PathSample
    """
    paths = {}
    for index, pname in enumerate(PROCESS_NAMES):
        process: LatentProcess = getattr(system, pname)
        paths[pname] = euler_maruyama(process.drift, process.S, process.c, grid, stream_rng(seed, replication, index))
    psi_inv = system.psi_inv()
    eta = (paths["xi"] @ system.Gamma.T + paths["zeta"]) @ psi_inv.T
    x1 = paths["xi"] @ system.Lx1.T + paths["delta"]
    x2 = eta @ system.Lx2.T + paths["eps"]
    X = np.hstack([x1, x2])
    if not np.all(np.isfinite(X)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(X), axis=1))[0])
        raise SimulationError("観測過程に非有限値が含まれます", bad)
    latent = dict(paths, eta=eta) if keep_latent else None
    logger.debug("経路を生成しました: seed=%s, rep=%s, n=%s", seed, replication, grid.n)
    return PathSample(grid, X, int(seed), int(replication), latent)


# ---------------------------------------------------------------------------
# 真のモデル設定ファイル (JSON)
# ---------------------------------------------------------------------------

def _matrix(value: Any, where: str, square: Optional[int] = None) -> np.ndarray:
    if isinstance(value, Mapping) and "diag" in value:
        return np.diag(np.asarray(value["diag"], dtype=float))
    matrix = np.array(value, dtype=float, ndmin=2)
    if matrix.ndim != 2:
        raise ConfigError(f"{where} は行列である必要があります")
    if square is not None and matrix.shape != (square, square):
        raise ConfigError(f"{where} は {square}×{square} である必要があります")
    return matrix


def _process_from_dict(payload: Mapping[str, Any], pname: str) -> LatentProcess:
    block = payload.get(pname)
    if not isinstance(block, Mapping):
        raise ConfigError(f"潜在過程 {pname} の指定がありません")
    S = _matrix(block.get("S"), f"{pname}.S")
    c = np.asarray(block.get("c", np.zeros(S.shape[0])), dtype=float).reshape(-1)
    drift_spec = block.get("drift", {})
    A = _matrix(drift_spec.get("A", np.zeros((S.shape[0], S.shape[0]))), f"{pname}.drift.A", S.shape[0])
    b = np.asarray(drift_spec.get("b", np.zeros(S.shape[0])), dtype=float).reshape(-1)
    return LatentProcess(ou_drift(A, b), S, c)


def system_from_dict(payload: Mapping[str, Any], name: Optional[str] = None) -> DiffusionSystem:
    """JSON から読み込んだ辞書を DiffusionSystem に変換します。"""
    if not isinstance(payload, Mapping):
        raise ConfigError("真のモデル設定はオブジェクトである必要があります")
    try:
        processes = {pname: _process_from_dict(payload, pname) for pname in PROCESS_NAMES}
        k2 = processes["zeta"].S.shape[0]
        B = payload.get("B")
        return DiffusionSystem(
            xi=processes["xi"],
            delta=processes["delta"],
            eps=processes["eps"],
            zeta=processes["zeta"],
            Lx1=_matrix(payload["Lx1"], "Lx1"),
            Lx2=_matrix(payload["Lx2"], "Lx2"),
            Gamma=_matrix(payload["Gamma"], "Gamma"),
            B=np.zeros((k2, k2)) if B is None else _matrix(B, "B", k2),
            name=str(payload.get("name", name or "system")),
        )
    except ConfigError:
        raise
    except HfsemError as exc:
        raise ConfigError(f"真のモデル設定が不正です: {exc}") from exc
    except KeyError as exc:
        raise ConfigError(f"真のモデル設定に {exc} がありません") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"真のモデル設定の数値が不正です: {exc}") from exc


def load_system(path: str) -> DiffusionSystem:
    """真のモデル設定 JSON を読み込みます。"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"真のモデル設定が見つかりません: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"真のモデル設定の JSON が不正です: {path}: {exc}") from exc
    return system_from_dict(payload, name=os.path.splitext(os.path.basename(path))[0])


# ---------------------------------------------------------------------------
# CSV 入出力
# ---------------------------------------------------------------------------

def write_path_csv(sample: PathSample, path: str) -> None:
    """ヘッダ t,x1,...,xp で 1 格子点 1 行、有効数字 17 桁で書き出します。"""
    times = sample.grid.times()
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["t"] + [f"x{j + 1}" for j in range(sample.p)])
        for t, row in zip(times, sample.X):
            writer.writerow([format(float(t), ".17g")] + [format(float(v), ".17g") for v in row])


def read_path_csv(path: str, *, rtol: float = 1e-9) -> PathSample:
    """
    write_path_csv 形式の CSV を読み込みます。

    Raises:
        DataError: 非有限値、列数の不一致、等間隔でない時刻列
    """
    times, rows = [], []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0].strip() != "t" or len(header) < 2:
            raise DataError("ヘッダ t,x1,...,xp が必要です", 0)
        width = len(header)
        for index, record in enumerate(reader, start=1):
            if not record:
                continue
            if len(record) != width:
                raise DataError(f"列数が {width} ではありません", index)
            try:
                values = [float(v) for v in record]
            except ValueError as exc:
                raise DataError(f"数値に変換できません: {exc}", index) from exc
            if not all(np.isfinite(values)):
                raise DataError("非有限値が含まれます", index)
            times.append(values[0])
            rows.append(values[1:])
    if len(rows) < 2:
        raise DataError("2 行以上の観測が必要です")
    t = np.asarray(times)
    n = t.size - 1
    h = (t[-1] - t[0]) / n
    if h <= 0:
        raise DataError("時刻列が増加していません", 1)
    expected = t[0] + np.arange(n + 1) * h
    deviation = np.abs(t - expected)
    tolerance = rtol * max(abs(t[-1]), 1.0)
    if np.any(deviation > tolerance):
        raise DataError("時刻列が等間隔ではありません", int(np.argmax(deviation > tolerance)) + 1)
    return PathSample(SamplingGrid(n, h), np.asarray(rows, dtype=float))
