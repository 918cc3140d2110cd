"""
LISREL 型共分散構造モデル

パラメータマスク（自由／固定）、θ の pack / unpack、Σ(θ) の組み立て、
解析的ヤコビアン Δ = ∂vech Σ(θ)/∂θ、数値的な局所識別性チェックを提供します。

Σ(θ) は次の形で組み立てます:
    L = blockdiag(Λx1, Λx2),  T = [[I, 0], [Ψ⁻¹Γ, Ψ⁻¹]],  M = L·T
    Φ = blockdiag(Σξξ, Σζζ),  E = blockdiag(Σδδ, Σεε)
    Σ(θ) = M Φ Mᵀ + E   (Ψ = I − B)
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple, Union

import numpy as np
import scipy.linalg

import config
import utils

from .errors import (
    ConfigError,
    ConsistencyError,
    DimensionError,
    DomainError,
    HfsemError,
    ModelError,
)
from .matrix_core import half_dim, vech

logger = logging.getLogger(__name__)

MATRIX_NAMES = ("Lx1", "Lx2", "Gamma", "B", "Sxx", "Sdd", "See", "Szz")
SYMMETRIC_NAMES = frozenset({"Sxx", "Sdd", "See", "Szz"})
VARIANCE_BOUNDS = (0.1, 100.0)
GENERAL_BOUNDS = (-100.0, 100.0)
PSI_PIVOT_RTOL = 1e-12
RANK_RTOL = 1e-8


@dataclass(frozen=True)
class Fixed:
    value: float


@dataclass(frozen=True)
class Free:
    slot: int


Tag = Union[Fixed, Free]


def matrix_shapes(p1: int, p2: int, k1: int, k2: int) -> Dict[str, Tuple[int, int]]:
    """各構造行列の形状を返します。"""
    return {
        "Lx1": (p1, k1),
        "Lx2": (p2, k2),
        "Gamma": (k2, k1),
        "B": (k2, k2),
        "Sxx": (k1, k1),
        "Sdd": (p1, p1),
        "See": (p2, p2),
        "Szz": (k2, k2),
    }


def scan_positions(name: str, shape: Tuple[int, int]) -> List[Tuple[int, int]]:
    """
    スロット番号を振る走査順。
    一般行列は行優先、対称行列は vech 順（列優先の下三角）。
    """
    rows, cols = shape
    if name in SYMMETRIC_NAMES:
        return [(i, j) for j in range(cols) for i in range(j, rows)]
    return [(i, j) for i in range(rows) for j in range(cols)]


@dataclass(frozen=True, eq=False)
class ParameterMask:
    """
    構造行列ごとの自由／固定タグと、自由スロットの箱型制約 Θ。

    Attributes:
        name: モデル名
        p1, p2, k1, k2: 観測・潜在変数の次元
        tags: 行列名 -> タグの 2 次元タプル（対称行列は鏡映済み）
        bounds: (q, 2) の下限・上限
        labels: スロットのラベル
        theta_init: 最適化の初期値
        theta_true: 真値（わかっている場合のみ）
        penalize_positive_lower: 下限 > 0 のスロットも罰則対象にするか
    """

    name: str
    p1: int
    p2: int
    k1: int
    k2: int
    tags: Mapping[str, Tuple[Tuple[Tag, ...], ...]]
    bounds: np.ndarray
    labels: Tuple[str, ...]
    theta_init: Optional[np.ndarray] = None
    theta_true: Optional[np.ndarray] = None
    penalize_positive_lower: bool = False

    def __post_init__(self):
        if self.p1 < 1 or self.k1 < 1 or self.p2 < 0 or self.k2 < 0:
            raise DimensionError(f"次元が不正です: p1={self.p1}, p2={self.p2}, k1={self.k1}, k2={self.k2}")
        if (self.p2 == 0) != (self.k2 == 0):
            raise DimensionError("p2 と k2 は同時に 0 である必要があります")
        bounds = np.array(self.bounds, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(
            self,
            "tags",
            {name: tuple(tuple(row) for row in self.tags.get(name, ())) for name in MATRIX_NAMES},
        )
        q = bounds.shape[0]
        if len(self.labels) != q:
            raise DimensionError(f"labels の長さ {len(self.labels)} が q={q} と一致しません")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ModelError("下限が上限を超えるスロットがあります")

        used = set()
        for name, shape in matrix_shapes(self.p1, self.p2, self.k1, self.k2).items():
            grid = self.tags.get(name, ())
            if len(grid) != shape[0] or any(len(row) != shape[1] for row in grid):
                raise DimensionError(f"{name} のタグ配列の形状が {shape} と一致しません")
            for i, row in enumerate(grid):
                for j, tag in enumerate(row):
                    if isinstance(tag, Free):
                        if not 0 <= tag.slot < q:
                            raise ModelError(f"{name}[{i + 1},{j + 1}] のスロット {tag.slot} が範囲外です")
                        used.add(tag.slot)
                    if name in SYMMETRIC_NAMES and grid[j][i] != tag:
                        raise ModelError(f"{name} のタグ配列が対称ではありません")
        if used != set(range(q)):
            raise ModelError(f"使われていないスロットがあります: {sorted(set(range(q)) - used)}")

        for i in range(self.k2):
            if self.tags["B"][i][i] != Fixed(0.0):
                raise ModelError("B の対角成分は 0 に固定する必要があります")
        for name in SYMMETRIC_NAMES:
            for i, row in enumerate(self.tags[name]):
                tag = row[i]
                if isinstance(tag, Free) and bounds[tag.slot, 0] <= 0.0:
                    raise ModelError(f"分散スロット {self.labels[tag.slot]} の下限は正である必要があります")

        for attr in ("theta_init", "theta_true"):
            value = getattr(self, attr)
            if value is None:
                continue
            value = np.array(value, dtype=float).reshape(-1)
            if value.size != q:
                raise DimensionError(f"{attr} の長さ {value.size} が q={q} と一致しません")
            object.__setattr__(self, attr, value)
        if self.theta_init is not None and not self.within_bounds(self.theta_init):
            raise DomainError("theta_init が Θ の外にあります")

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def k(self) -> int:
        return self.k1 + self.k2

    @property
    def q(self) -> int:
        return self.bounds.shape[0]

    @property
    def p_bar(self) -> int:
        return half_dim(self.p)

    @property
    def lower(self) -> np.ndarray:
        return self.bounds[:, 0]

    @property
    def upper(self) -> np.ndarray:
        return self.bounds[:, 1]

    @property
    def shapes(self) -> Dict[str, Tuple[int, int]]:
        return matrix_shapes(self.p1, self.p2, self.k1, self.k2)

    def within_bounds(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def clip(self, theta) -> np.ndarray:
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)

    def positive_lower_slots(self) -> np.ndarray:
        """下限 > 0 のスロット（分散など）。"""
        return np.flatnonzero(self.lower > 0.0)

    @cached_property
    def layout(self) -> Dict[str, Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """行列名 -> (固定値で埋めた基底行列, 行添字, 列添字, スロット)"""
        out = {}
        for name, shape in self.shapes.items():
            base = np.zeros(shape)
            rows, cols, slots = [], [], []
            for i, row in enumerate(self.tags[name]):
                for j, tag in enumerate(row):
                    if isinstance(tag, Fixed):
                        base[i, j] = tag.value
                    else:
                        rows.append(i)
                        cols.append(j)
                        slots.append(tag.slot)
            out[name] = (
                base,
                np.array(rows, dtype=int),
                np.array(cols, dtype=int),
                np.array(slots, dtype=int),
            )
        return out

    @cached_property
    def slot_entries(self) -> Tuple[Tuple[Tuple[str, int, int], ...], ...]:
        """スロットごとの (行列名, i, j) の一覧（対称行列は両側を含む）。"""
        entries: List[List[Tuple[str, int, int]]] = [[] for _ in range(self.q)]
        for name in MATRIX_NAMES:
            _, rows, cols, slots = self.layout[name]
            for i, j, s in zip(rows, cols, slots):
                entries[s].append((name, int(i), int(j)))
        return tuple(tuple(item) for item in entries)

    def pin_slots(self, inactive: Iterable[int]) -> Tuple["ParameterMask", np.ndarray]:
        """
        指定したスロットを 0 に固定した縮約マスクを作ります。

        Args:
            inactive: 0 に固定するスロット番号

        Returns:
            (縮約マスク, 残したスロットの元の番号)

        Raises:
            ModelError: 0 が箱の外にあるスロット（下限 > 0 の分散など）を固定しようとした場合
        """
        pinned = sorted({int(s) for s in inactive})
        for s in pinned:
            if not 0 <= s < self.q:
                raise ModelError(f"スロット番号 {s} が範囲外です")
            lo, hi = self.bounds[s]
            if lo > 0.0 or hi < 0.0:
                raise ModelError(f"スロット {self.labels[s]} は 0 に固定できません（範囲 [{lo}, {hi}]）")
        pinned_set = set(pinned)
        kept = np.array([s for s in range(self.q) if s not in pinned_set], dtype=int)
        remap = {int(old): new for new, old in enumerate(kept)}

        def convert(tag: Tag) -> Tag:
            if isinstance(tag, Free):
                return Fixed(0.0) if tag.slot in pinned_set else Free(remap[tag.slot])
            return tag

        tags = {
            name: tuple(tuple(convert(tag) for tag in row) for row in grid)
            for name, grid in self.tags.items()
        }
        reduced = ParameterMask(
            name=self.name,
            p1=self.p1,
            p2=self.p2,
            k1=self.k1,
            k2=self.k2,
            tags=tags,
            bounds=self.bounds[kept],
            labels=tuple(self.labels[s] for s in kept),
            theta_init=None if self.theta_init is None else self.clip(self.theta_init)[kept],
            theta_true=None if self.theta_true is None else self.theta_true[kept],
            penalize_positive_lower=self.penalize_positive_lower,
        )
        return reduced, kept


def _as_theta(mask: ParameterMask, theta) -> np.ndarray:
    values = np.asarray(theta, dtype=float).reshape(-1)
    if values.size != mask.q:
        raise DimensionError(f"θ の長さ {values.size} が q={mask.q} と一致しません")
    return values


def unpack(mask: ParameterMask, theta) -> Dict[str, np.ndarray]:
    """θ から 8 つの構造行列を復元します。"""
    values = _as_theta(mask, theta)
    out = {}
    for name in MATRIX_NAMES:
        base, rows, cols, slots = mask.layout[name]
        matrix = base.copy()
        matrix[rows, cols] = values[slots]
        out[name] = matrix
    return out


def pack(mask: ParameterMask, matrices: Mapping[str, Any]) -> np.ndarray:
    """
    構造行列から θ を取り出します。

    Raises:
        ConsistencyError: 固定成分の値が違う、または同じスロットの成分が食い違う場合
    """
    theta = np.full(mask.q, np.nan)
    offending = []
    for name, shape in mask.shapes.items():
        if shape[0] * shape[1] == 0:
            continue
        if name not in matrices:
            raise DimensionError(f"{name} がありません")
        matrix = np.asarray(matrices[name], dtype=float)
        if matrix.shape != shape:
            raise DimensionError(f"{name} の形状 {matrix.shape} が {shape} と一致しません")
        for i, row in enumerate(mask.tags[name]):
            for j, tag in enumerate(row):
                value = matrix[i, j]
                if isinstance(tag, Fixed):
                    if value != tag.value:
                        offending.append(f"{name}[{i + 1},{j + 1}]={value!r} (固定値 {tag.value!r})")
                elif np.isnan(theta[tag.slot]):
                    theta[tag.slot] = value
                elif theta[tag.slot] != value:
                    offending.append(f"{name}[{i + 1},{j + 1}]={value!r} (スロット {mask.labels[tag.slot]}={theta[tag.slot]!r})")
    if offending:
        raise ConsistencyError("固定成分またはスロット共有に反する値があります: " + ", ".join(offending), offending)
    return theta


@dataclass
class StructureParts:
    """Σ(θ) の組み立てに使う中間行列。"""

    matrices: Dict[str, np.ndarray]
    psi_inv: np.ndarray
    L: np.ndarray
    T: np.ndarray
    M: np.ndarray
    Phi: np.ndarray
    E: np.ndarray

    @property
    def sigma(self) -> np.ndarray:
        sigma = self.M @ self.Phi @ self.M.T + self.E
        return 0.5 * (sigma + sigma.T)


def invert_psi(psi: np.ndarray) -> np.ndarray:
    if psi.size == 0:
        return np.zeros((0, 0))
    lu, piv = scipy.linalg.lu_factor(psi, check_finite=False)
    threshold = PSI_PIVOT_RTOL * max(np.linalg.norm(psi), 1.0)
    if np.min(np.abs(np.diag(lu))) < threshold:
        raise ModelError("Ψ = I − B が数値的に特異です")
    return scipy.linalg.lu_solve((lu, piv), np.eye(psi.shape[0]), check_finite=False)


def structure_parts(mask: ParameterMask, theta) -> StructureParts:
    m = unpack(mask, theta)
    p1, p2, k1, k2 = mask.p1, mask.p2, mask.k1, mask.k2
    psi_inv = invert_psi(np.eye(k2) - m["B"])

    L = np.zeros((mask.p, mask.k))
    L[:p1, :k1] = m["Lx1"]
    L[p1:, k1:] = m["Lx2"]
    T = np.zeros((mask.k, mask.k))
    T[:k1, :k1] = np.eye(k1)
    T[k1:, :k1] = psi_inv @ m["Gamma"]
    T[k1:, k1:] = psi_inv
    Phi = np.zeros((mask.k, mask.k))
    Phi[:k1, :k1] = m["Sxx"]
    Phi[k1:, k1:] = m["Szz"]
    E = np.zeros((mask.p, mask.p))
    E[:p1, :p1] = m["Sdd"]
    E[p1:, p1:] = m["See"]
    return StructureParts(m, psi_inv, L, T, L @ T, Phi, E)


def build_sigma(mask: ParameterMask, theta) -> np.ndarray:
    """
    Σ(θ) を組み立てます。

    Raises:
        ModelError: Ψ = I − B が数値的に特異な場合
    """
    return structure_parts(mask, theta).sigma


@dataclass(frozen=True)
class SigmaJacobian:
    """Δ = ∂vech Σ(θ)/∂θ（p̄×q）"""

    delta: np.ndarray

    def rank(self, rtol: float = RANK_RTOL) -> int:
        return _numerical_rank(self.delta, rtol)[0]


def _numerical_rank(matrix: np.ndarray, rtol: float) -> Tuple[int, np.ndarray]:
    if matrix.size == 0:
        return 0, np.zeros(0)
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[0] == 0.0:
        return 0, singular
    return int(np.sum(singular > rtol * singular[0])), singular


def sigma_direction(parts: StructureParts, mask: ParameterMask, direction: Mapping[str, np.ndarray]) -> np.ndarray:
    """
    構造行列の方向微分 direction に対する dΣ を返します。
    dΨ⁻¹ = Ψ⁻¹ dB Ψ⁻¹ を使います。
    """
    p1, k1, k = mask.p1, mask.k1, mask.k
    zeros = {name: np.zeros(shape) for name, shape in mask.shapes.items()}
    d = {name: direction.get(name, zeros[name]) for name in MATRIX_NAMES}

    dL = np.zeros_like(parts.L)
    dL[:p1, :k1] = d["Lx1"]
    dL[p1:, k1:] = d["Lx2"]
    dT = np.zeros((k, k))
    if mask.k2:
        psi_inv = parts.psi_inv
        dpsi_inv = psi_inv @ d["B"] @ psi_inv
        dT[k1:, :k1] = psi_inv @ d["Gamma"] + dpsi_inv @ parts.matrices["Gamma"]
        dT[k1:, k1:] = dpsi_inv
    dPhi = np.zeros((k, k))
    dPhi[:k1, :k1] = d["Sxx"]
    dPhi[k1:, k1:] = d["Szz"]
    dE = np.zeros((mask.p, mask.p))
    dE[:p1, :p1] = d["Sdd"]
    dE[p1:, p1:] = d["See"]

    dM = dL @ parts.T + parts.L @ dT
    half = dM @ parts.Phi @ parts.M.T
    return half + half.T + parts.M @ dPhi @ parts.M.T + dE


def sigma_jacobian(mask: ParameterMask, theta, parts: Optional[StructureParts] = None) -> SigmaJacobian:
    """
    解析的ヤコビアン Δ を返します。同じスロットを共有する成分の寄与は合算されます。
    """
    if parts is None:
        parts = structure_parts(mask, theta)
    delta = np.zeros((mask.p_bar, mask.q))
    shapes = mask.shapes
    for s, entries in enumerate(mask.slot_entries):
        direction: Dict[str, np.ndarray] = {}
        for name, i, j in entries:
            if name not in direction:
                direction[name] = np.zeros(shapes[name])
            direction[name][i, j] += 1.0
        delta[:, s] = vech(sigma_direction(parts, mask, direction))
    return SigmaJacobian(delta)


@dataclass(frozen=True)
class RankReport:
    rank: int
    q: int
    passed: bool
    singular_values: Tuple[float, ...] = field(default=())

    def to_dict(self) -> Dict[str, Any]:
        return {"rank": self.rank, "q": self.q, "passed": self.passed}


def check_local_identifiability(mask: ParameterMask, theta, rtol: float = RANK_RTOL) -> RankReport:
    """rank(Δ) == q かどうかを SVD で判定します（許容値 rtol·σ_max）。"""
    delta = sigma_jacobian(mask, theta).delta
    rank, singular = _numerical_rank(delta, rtol)
    report = RankReport(rank, mask.q, rank == mask.q, tuple(float(v) for v in singular))
    if not report.passed:
        logger.warning("局所識別性を満たしていません: rank=%s, q=%s (%s)", rank, mask.q, mask.name)
    return report


# ---------------------------------------------------------------------------
# モデル設定ファイル (JSON)
# ---------------------------------------------------------------------------

def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _expand_matrix(name: str, spec: Any, shape: Tuple[int, int]) -> List[List[Any]]:
    rows, cols = shape
    if spec is None:
        if rows * cols == 0 or name == "B":
            return [[0.0] * cols for _ in range(rows)]
        raise ConfigError(f"行列 {name} の指定がありません")
    if isinstance(spec, dict) and "diag" in spec:
        diag = spec["diag"]
        if rows != cols or not isinstance(diag, list) or len(diag) != rows:
            raise ConfigError(f"{name} の diag 指定は長さ {rows} のリストが必要です")
        return [[diag[i] if i == j else 0.0 for j in range(cols)] for i in range(rows)]
    if isinstance(spec, dict) and "fill" in spec:
        return [[spec["fill"]] * cols for _ in range(rows)]
    if isinstance(spec, list):
        if len(spec) != rows or any(not isinstance(row, list) or len(row) != cols for row in spec):
            raise ConfigError(f"{name} は {rows}×{cols} の行リストが必要です")
        return [list(row) for row in spec]
    # 単一エントリは全成分に適用
    return [[spec] * cols for _ in range(rows)]


def _default_bounds(name: str, i: int, j: int) -> Tuple[float, float]:
    if name in SYMMETRIC_NAMES and i == j:
        return VARIANCE_BOUNDS
    return GENERAL_BOUNDS


def _parse_free_bounds(raw: Any, default: Tuple[float, float], where: str) -> Tuple[float, float]:
    if raw is True or raw is None:
        return default
    if isinstance(raw, dict):
        try:
            lo = float(raw.get("lo", default[0]))
            hi = float(raw.get("hi", default[1]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where} の範囲指定が不正です: {raw}") from exc
        return lo, hi
    raise ConfigError(f"{where} の free 指定が不正です: {raw}")


def mask_from_dict(payload: Mapping[str, Any], name: Optional[str] = None) -> ParameterMask:
    """
    JSON から読み込んだ辞書を ParameterMask に変換します。

    Args:
        payload: モデル設定（dims, matrices, theta_init, ...）
        name: モデル名（payload に name がなければ使用）

    Returns:
        ParameterMask

    Raises:
        ConfigError: 形式が不正な場合
    """
    if not isinstance(payload, Mapping):
        raise ConfigError("モデル設定はオブジェクトである必要があります")
    try:
        dims = payload["dims"]
        p1, p2, k1, k2 = (int(dims[key]) for key in ("p1", "p2", "k1", "k2"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"dims の指定が不正です: {exc}") from exc
    matrices = payload.get("matrices", {})
    if not isinstance(matrices, Mapping):
        raise ConfigError("matrices はオブジェクトである必要があります")
    unknown = set(matrices) - set(MATRIX_NAMES)
    if unknown:
        raise ConfigError(f"未知の行列名があります: {sorted(unknown)}")

    shapes = matrix_shapes(p1, p2, k1, k2)
    bounds: List[Tuple[float, float]] = []
    labels: List[str] = []
    shared: Dict[str, int] = {}
    tags: Dict[str, Tuple[Tuple[Tag, ...], ...]] = {}

    for mname in MATRIX_NAMES:
        shape = shapes[mname]
        grid = _expand_matrix(mname, matrices.get(mname), shape)
        tag_grid: List[List[Optional[Tag]]] = [[None] * shape[1] for _ in range(shape[0])]
        for i, j in scan_positions(mname, shape):
            raw = grid[i][j]
            where = f"{mname}[{i + 1},{j + 1}]"
            default = _default_bounds(mname, i, j)
            if _is_number(raw):
                tag: Tag = Fixed(float(raw))
            elif raw == "free":
                tag = Free(len(bounds))
                bounds.append(default)
                labels.append(where)
            elif isinstance(raw, Mapping) and "fixed" in raw:
                if not _is_number(raw["fixed"]):
                    raise ConfigError(f"{where} の fixed 値が数値ではありません")
                tag = Fixed(float(raw["fixed"]))
            elif isinstance(raw, Mapping) and "free" in raw:
                lo_hi = _parse_free_bounds(raw["free"], default, where)
                key = raw.get("slot")
                if key is not None and str(key) in shared:
                    slot = shared[str(key)]
                    if bounds[slot] != lo_hi:
                        raise ConfigError(f"{where} は共有スロット {key} と範囲が異なります")
                    tag = Free(slot)
                else:
                    tag = Free(len(bounds))
                    bounds.append(lo_hi)
                    labels.append(str(raw.get("label", where)))
                    if key is not None:
                        shared[str(key)] = tag.slot
            else:
                raise ConfigError(f"{where} の指定が不正です: {raw!r}")
            tag_grid[i][j] = tag
            if mname in SYMMETRIC_NAMES:
                tag_grid[j][i] = tag
        tags[mname] = tuple(tuple(row) for row in tag_grid)

    q = len(bounds)
    theta_init = payload.get("theta_init")
    if theta_init is None:
        theta_init = np.clip(np.ones(q), [b[0] for b in bounds], [b[1] for b in bounds]) if q else np.zeros(0)
    penalize = payload.get("penalize_positive_lower")
    if penalize is None:
        penalize = config.get_effective_settings("sparse").get("penalize_positive_lower", False)
    try:
        return ParameterMask(
            name=str(payload.get("name", name or "model")),
            p1=p1,
            p2=p2,
            k1=k1,
            k2=k2,
            tags=tags,
            bounds=np.array(bounds, dtype=float).reshape(-1, 2),
            labels=tuple(labels),
            theta_init=np.asarray(theta_init, dtype=float),
            theta_true=None if payload.get("theta_true") is None else np.asarray(payload["theta_true"], dtype=float),
            penalize_positive_lower=utils.coerce_bool(penalize, False),
        )
    except HfsemError as exc:
        raise ConfigError(f"モデル設定が不正です: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"モデル設定の数値が不正です: {exc}") from exc


def load_mask(path: str) -> ParameterMask:
    """モデル設定 JSON ファイルを読み込みます。"""
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"モデル設定が見つかりません: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"モデル設定の JSON が不正です: {path}: {exc}") from exc
    stem = os.path.splitext(os.path.basename(path))[0]
    mask = mask_from_dict(payload, name=stem)
    logger.info("モデル設定を読み込みました: %s (q=%s)", mask.name, mask.q)
    return mask
