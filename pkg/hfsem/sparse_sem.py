"""
スパース推定

初期推定量 θ̂ のまわりで、適応的重み κ 付きの L1 罰則をもつ二次近似
    Q_G(θ) = (θ − θ̂)ᵀ G (θ − θ̂) + Σ κ_j |θ_j|
を最小化します（G = I が LSA、一般の正定値 G が PLSA）。
得られた活性集合以外を 0 に固定してコントラストを再最小化したものが P-O 推定量です。
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Dict, Iterable, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError, ConsistencyError, DimensionError, DomainError, HfsemError
from .lisrel_model import ParameterMask
from .matrix_core import is_pd
from .qmle import Contrast, FitResult, fit
from .realized_cov import RealizedCov

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.1
DEFAULT_LAMBDA1_RATE = -0.6
DEFAULT_GAMMA = 4.0
PLSA_TOL = 1e-10
PLSA_MAX_SWEEPS = 10000
HESSIAN_STEP_RTOL = 1e-4
DELTA_WARNING_BAND = 0.2
SUPPORT_SOURCES = ("lsa", "plsa")


@dataclass(frozen=True)
class PenaltyConfig:
    """罰則パラメータ λ₁, λ₂, γ, δ（すべて正）"""

    lambda1: float
    lambda2: float
    gamma: float
    delta: float

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "gamma", "delta"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0.0:
                raise DomainError(f"{name} は正の有限値が必要です: {value}")
            object.__setattr__(self, name, value)

    @classmethod
    def from_dict(
        cls,
        payload: Optional[Mapping[str, Any]],
        n: int,
        defaults: Optional[Mapping[str, Any]] = None,
    ) -> "PenaltyConfig":
        """
        辞書から作ります。lambda1 が無ければ lambda1 = n^lambda1_rate、
        lambda2 が無ければ 1/delta を使います。

        Raises:
            ConfigError: 値が不正な場合
        """
        settings: Dict[str, Any] = {
            "delta": DEFAULT_DELTA,
            "lambda1_rate": DEFAULT_LAMBDA1_RATE,
            "gamma": DEFAULT_GAMMA,
        }
        for source in (defaults, payload):
            if source:
                settings.update({k: v for k, v in source.items() if v is not None})
        try:
            delta = float(settings["delta"])
            if "lambda1" in settings:
                lambda1 = float(settings["lambda1"])
            else:
                if int(n) < 1:
                    raise DomainError(f"n は 1 以上が必要です: {n}")
                lambda1 = float(n) ** float(settings["lambda1_rate"])
            lambda2 = float(settings["lambda2"]) if "lambda2" in settings else 1.0 / delta
            return cls(lambda1=lambda1, lambda2=lambda2, gamma=float(settings["gamma"]), delta=delta)
        except ConfigError:
            raise
        except (HfsemError, TypeError, ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"罰則設定が不正です: {exc}") from exc

    def to_dict(self) -> Dict[str, float]:
        return dataclasses.asdict(self)


def adaptive_weights(theta_init, cfg: PenaltyConfig) -> np.ndarray:
    """κ_j = λ₁|θ̂_j|^(−γ)（|θ̂_j| ≥ δ）、λ₂（|θ̂_j| < δ）"""
    magnitude = np.abs(np.asarray(theta_init, dtype=float).reshape(-1))
    kappa = np.full(magnitude.shape, cfg.lambda2)
    large = magnitude >= cfg.delta
    kappa[large] = cfg.lambda1 * magnitude[large] ** (-cfg.gamma)
    return kappa


def effective_weights(mask: ParameterMask, kappa) -> np.ndarray:
    """下限 > 0 のスロットは penalize_positive_lower が偽なら κ = 0"""
    kappa = np.array(kappa, dtype=float).reshape(-1)
    if kappa.size != mask.q:
        raise DimensionError(f"κ の長さ {kappa.size} が q={mask.q} と一致しません")
    if not mask.penalize_positive_lower:
        kappa[mask.positive_lower_slots()] = 0.0
    return kappa


@dataclass
class PenalizedEstimate:
    """LSA / PLSA の推定値"""

    theta: np.ndarray
    clipped: Tuple[int, ...] = ()
    converged: bool = True
    sweeps: int = 0
    fallback_identity: bool = False
    method: str = "lsa"

    @property
    def active_set(self) -> Tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.theta != 0.0))


def _soft_threshold(value, threshold):
    return np.sign(value) * np.maximum(np.abs(value) - threshold, 0.0)


def _exact_zero(values: np.ndarray) -> np.ndarray:
    # -0.0 を +0.0 にそろえる
    return np.where(values == 0.0, 0.0, values)


def _check_inputs(theta_init, kappa, bounds) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta_hat = np.asarray(theta_init, dtype=float).reshape(-1)
    kappa = np.asarray(kappa, dtype=float).reshape(-1)
    bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
    if not theta_hat.size == kappa.size == bounds.shape[0]:
        raise DimensionError(
            f"θ̂ ({theta_hat.size})・κ ({kappa.size})・bounds ({bounds.shape[0]}) の長さが一致しません"
        )
    if np.any(~np.isfinite(kappa)) or np.any(kappa < 0.0):
        raise DomainError("κ は非負の有限値が必要です")
    if np.any(bounds[:, 0] > bounds[:, 1]):
        raise DomainError("下限が上限を超えるスロットがあります")
    return theta_hat, kappa, bounds


def lsa_estimate(theta_init, kappa, bounds) -> PenalizedEstimate:
    """
    Σ(θ_j − θ̂_j)² + Σκ_j|θ_j| の座標ごとの厳密解（ソフト閾値）を箱に射影します。

    Args:
        theta_init: 初期推定量 θ̂
        kappa: 重み（0 のスロットは罰則なし）
        bounds: (q, 2) の下限・上限

    Returns:
        PenalizedEstimate（clipped は箱で値が変わったスロット）
    """
    theta_hat, kappa, bounds = _check_inputs(theta_init, kappa, bounds)
    shrunk = _soft_threshold(theta_hat, 0.5 * kappa)
    theta = np.clip(shrunk, bounds[:, 0], bounds[:, 1])
    clipped = tuple(int(j) for j in np.flatnonzero(theta != shrunk))
    if clipped:
        logger.debug("LSA 推定値が箱に射影されました: %s", clipped)
    return PenalizedEstimate(theta=_exact_zero(theta), clipped=clipped, method="lsa")


def plsa_estimate(
    theta_init,
    kappa,
    G,
    bounds,
    *,
    tol: float = PLSA_TOL,
    max_sweeps: int = PLSA_MAX_SWEEPS,
) -> PenalizedEstimate:
    """
    (θ − θ̂)ᵀG(θ − θ̂) + Σκ_j|θ_j| を巡回座標降下で最小化します。

    各座標の部分問題は二次式 + 絶対値なので閾値 κ_j/(2G_jj) のソフト閾値で厳密に解けます。
    G が正定値でなければ単位行列で代用し fallback_identity を立てます。
    最大変化量が tol 未満になるか max_sweeps 回で停止します。
    """
    theta_hat, kappa, bounds = _check_inputs(theta_init, kappa, bounds)
    q = theta_hat.size
    G = np.asarray(G, dtype=float)
    if G.shape != (q, q):
        raise DimensionError(f"G の形状 {G.shape} が ({q}, {q}) ではありません")
    G = 0.5 * (G + G.T)
    fallback = False
    if q and not is_pd(G):
        logger.warning("G が正定値でないため単位行列で代用します")
        G = np.eye(q)
        fallback = True

    lower, upper = bounds[:, 0], bounds[:, 1]
    theta = np.clip(theta_hat, lower, upper)
    offset = theta - theta_hat
    coupled = G @ offset
    clipped = np.zeros(q, dtype=bool)
    converged = q == 0
    sweeps = 0
    while not converged and sweeps < max_sweeps:
        sweeps += 1
        largest = 0.0
        for j in range(q):
            gjj = G[j, j]
            others = coupled[j] - gjj * offset[j]
            target = theta_hat[j] - others / gjj
            shrunk = float(_soft_threshold(target, 0.5 * kappa[j] / gjj))
            value = min(max(shrunk, lower[j]), upper[j])
            clipped[j] = value != shrunk
            change = value - theta[j]
            if change != 0.0:
                theta[j] = value
                offset[j] = value - theta_hat[j]
                coupled += G[:, j] * change
                largest = max(largest, abs(change))
        converged = largest < tol

    if not converged:
        logger.warning("PLSA の座標降下が %s 回で収束しませんでした", max_sweeps)
    return PenalizedEstimate(
        theta=_exact_zero(theta),
        clipped=tuple(int(j) for j in np.flatnonzero(clipped)),
        converged=converged,
        sweeps=sweeps,
        fallback_identity=fallback,
        method="plsa",
    )


def penalized_objective(theta, theta_init, kappa, G=None) -> float:
    """(θ − θ̂)ᵀG(θ − θ̂) + Σκ|θ|（G 省略時は単位行列）"""
    d = np.asarray(theta, dtype=float) - np.asarray(theta_init, dtype=float)
    quad = float(d @ d) if G is None else float(d @ np.asarray(G, dtype=float) @ d)
    return quad + float(np.sum(np.asarray(kappa) * np.abs(theta)))


def default_g(q: RealizedCov, mask: ParameterMask, theta_hat) -> np.ndarray:
    """
    G = ½∂²F̃(θ̂)。解析勾配の中心差分（刻み 1e-4·(1+|θ_j|)）を対称化します。

    Raises:
        DomainError: 差分点で Σ(θ) が正定値でない場合
    """
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    contrast = Contrast(q, mask)
    hessian = np.zeros((mask.q, mask.q))
    for j in range(mask.q):
        step = HESSIAN_STEP_RTOL * (1.0 + abs(theta_hat[j]))
        shifted = theta_hat.copy()
        shifted[j] += step
        forward = contrast.evaluate(shifted)
        shifted[j] = theta_hat[j] - step
        backward = contrast.evaluate(shifted)
        if not (forward.sigma_pd and backward.sigma_pd):
            raise DomainError(f"スロット {mask.labels[j]} の差分点で Σ(θ) が正定値ではありません")
        hessian[:, j] = (forward.grad - backward.grad) / (2.0 * step)
    return 0.25 * (hessian + hessian.T)


def po_refit(
    q: RealizedCov,
    mask: ParameterMask,
    active_set: Iterable[int],
    theta_init=None,
    **fit_kwargs,
) -> FitResult:
    """
    活性集合以外のスロットを 0 に固定してコントラストを最小化し、
    長さ q に埋め戻した θ̌ を返します（固定スロットの se は 0）。

    Raises:
        ModelError: 下限 > 0 のスロットを 0 に固定しようとした場合
    """
    active = {int(j) for j in active_set}
    inactive = [j for j in range(mask.q) if j not in active]
    if theta_init is None:
        theta_init = mask.theta_init
    start = mask.clip(theta_init)
    if not inactive:
        return fit(q, mask, start, **fit_kwargs)

    reduced, kept = mask.pin_slots(inactive)
    result = fit(q, reduced, reduced.clip(start[kept]), **fit_kwargs)
    theta = np.zeros(mask.q)
    theta[kept] = result.theta_hat
    se = None
    if result.se is not None:
        se = np.zeros(mask.q)
        se[kept] = result.se
    return dataclasses.replace(result, labels=mask.labels, theta_hat=theta, se=se)


@dataclass
class SparseFitResult:
    """スパース推定パイプラインの結果"""

    labels: Tuple[str, ...]
    penalty: PenaltyConfig
    initial_fit: FitResult
    kappa: np.ndarray
    lsa: PenalizedEstimate
    plsa: Optional[PenalizedEstimate]
    support_from: str
    active_set: Tuple[int, ...]
    po_fit: FitResult
    delta_warnings: Tuple[str, ...] = ()

    @property
    def theta_init(self) -> np.ndarray:
        return self.initial_fit.theta_hat

    @property
    def theta_lsa(self) -> np.ndarray:
        return self.lsa.theta

    @property
    def theta_plsa(self) -> Optional[np.ndarray]:
        return None if self.plsa is None else self.plsa.theta

    @property
    def theta_po(self) -> np.ndarray:
        return self.po_fit.theta_hat

    @property
    def supports_agree(self) -> Optional[bool]:
        if self.plsa is None:
            return None
        return self.lsa.active_set == self.plsa.active_set

    def to_dict(self) -> Dict[str, Any]:
        def named(values):
            return None if values is None else {k: float(v) for k, v in zip(self.labels, values)}

        def label_set(indices):
            return [self.labels[j] for j in indices]

        return {
            "penalty": self.penalty.to_dict(),
            "theta_init": named(self.theta_init),
            "kappa": named(self.kappa),
            "theta_lsa": named(self.theta_lsa),
            "theta_plsa": named(self.theta_plsa),
            "lsa_active_set": label_set(self.lsa.active_set),
            "plsa_active_set": None if self.plsa is None else label_set(self.plsa.active_set),
            "plsa_converged": None if self.plsa is None else self.plsa.converged,
            "plsa_fallback_identity": None if self.plsa is None else self.plsa.fallback_identity,
            "clipped": label_set(self.lsa.clipped),
            "support_from": self.support_from,
            "supports_agree": self.supports_agree,
            "active_set": label_set(self.active_set),
            "theta_po": named(self.theta_po),
            "po_fit": self.po_fit.to_dict(),
            "delta_warnings": list(self.delta_warnings),
        }


def delta_proximity(theta_init, labels: Tuple[str, ...], delta: float, band: float = DELTA_WARNING_BAND) -> Tuple[str, ...]:
    """|θ̂_j| が δ の ±band 以内にあるスロットのラベル"""
    magnitude = np.abs(np.asarray(theta_init, dtype=float))
    near = (magnitude >= delta * (1.0 - band)) & (magnitude <= delta * (1.0 + band))
    return tuple(labels[j] for j in np.flatnonzero(near))


def sparse_pipeline(
    q: RealizedCov,
    mask: ParameterMask,
    penalty: PenaltyConfig,
    *,
    initial_fit: Optional[FitResult] = None,
    support_from: str = "lsa",
    with_plsa: bool = True,
    plsa_tol: float = PLSA_TOL,
    plsa_max_sweeps: int = PLSA_MAX_SWEEPS,
    delta_warning_band: float = DELTA_WARNING_BAND,
    **fit_kwargs,
) -> SparseFitResult:
    """
    θ̂ → κ → LSA（と PLSA）→ 活性集合 → P-O 再推定 を実行します。

    Args:
        q: 実現共分散
        mask: パラメータマスク
        penalty: 罰則パラメータ
        initial_fit: 計算済みの初期推定（省略時は fit を実行）
        support_from: 活性集合の出所 "lsa" または "plsa"
        with_plsa: PLSA も計算するか
        **fit_kwargs: fit に渡す最適化設定

    Raises:
        ConsistencyError: 初期推定が収束していない場合
        ModelError: 分散スロットが 0 に固定されようとした場合
    """
    if support_from not in SUPPORT_SOURCES:
        raise ConfigError(f"support_from は {SUPPORT_SOURCES} のいずれかです: {support_from}")
    initial = initial_fit if initial_fit is not None else fit(q, mask, **fit_kwargs)
    if not initial.converged:
        raise ConsistencyError(f"初期推定が収束していません: {mask.name} ({initial.message})")
    theta_hat = initial.theta_hat

    kappa = adaptive_weights(theta_hat, penalty)
    weights = effective_weights(mask, kappa)
    lsa = lsa_estimate(theta_hat, weights, mask.bounds)
    plsa = None
    if with_plsa or support_from == "plsa":
        plsa = plsa_estimate(
            theta_hat,
            weights,
            default_g(q, mask, theta_hat),
            mask.bounds,
            tol=plsa_tol,
            max_sweeps=plsa_max_sweeps,
        )
    selected = plsa if support_from == "plsa" else lsa
    active = selected.active_set

    warnings = delta_proximity(theta_hat, mask.labels, penalty.delta, delta_warning_band)
    if warnings:
        logger.warning("δ=%s に近い推定値があります: %s", penalty.delta, ", ".join(warnings))

    po = po_refit(q, mask, active, theta_hat, **fit_kwargs)
    logger.debug("活性集合 %s/%s (%s)", len(active), mask.q, mask.name)
    return SparseFitResult(
        labels=mask.labels,
        penalty=penalty,
        initial_fit=initial,
        kappa=kappa,
        lsa=lsa,
        plsa=plsa,
        support_from=support_from,
        active_set=active,
        po_fit=po,
        delta_warnings=warnings,
    )
