"""
擬似最尤推定

コントラスト関数
    F(Q, Σ(θ)) = log det Σ(θ) − log det Q + tr(Σ(θ)⁻¹Q) − p
（Q が特異なときは単位重みの二乗距離 ‖vech Q − vech Σ(θ)‖²）を
箱型制約 Θ 上で射影付き準ニュートン法（BFGS 更新 + Armijo バックトラック）で最小化します。
"""

from __future__ import annotations

import logging
import sys
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, ModelError, NotPositiveDefiniteError
from .lisrel_model import ParameterMask, sigma_jacobian, structure_parts
from .matrix_core import asymcov_w_inv, cholesky_pd, is_pd, logdet_pd, sym_matrix, trace_weights, vech
from .realized_cov import RealizedCov

logger = logging.getLogger(__name__)

NONPD_SURROGATE = sys.float_info.max
GTOL = 1e-8
MAX_ITER = 2000
ARMIJO_C1 = 1e-4
MAX_BACKTRACKS = 60
PRECISION_FLOOR_GTOL = 1e-5
CURVATURE_RTOL = 1e-12
INFORMATION_RTOL = 1e-10


@dataclass
class ContrastValue:
    value: float
    grad: Optional[np.ndarray]
    sigma_pd: bool


class Contrast:
    """
    Q を固定したコントラスト関数 θ ↦ F̃(θ) と解析的勾配。

    Σ(θ) が正定値でない点では最大の有限値を返し、sigma_pd=False を立てます。
    """

    def __init__(self, q: RealizedCov, mask: ParameterMask):
        if q.p != mask.p:
            raise DimensionError(f"Q の次元 {q.p} がモデルの p={mask.p} と一致しません")
        self.q = q
        self.mask = mask
        self.Q = q.Q
        self.vech_q = vech(q.Q)
        self.weights = trace_weights(mask.p)
        self.nonpd_evaluations = 0
        try:
            self.logdet_q = logdet_pd(q.Q)
            self.identity_weight = False
        except NotPositiveDefiniteError:
            self.logdet_q = None
            self.identity_weight = True
            logger.warning("Q が特異なため単位重みのコントラストを使用します (%s)", mask.name)

    def _surrogate(self) -> ContrastValue:
        self.nonpd_evaluations += 1
        return ContrastValue(NONPD_SURROGATE, None, False)

    def evaluate(self, theta, with_grad: bool = True) -> ContrastValue:
        try:
            parts = structure_parts(self.mask, theta)
        except ModelError:
            return self._surrogate()
        sigma = parts.sigma
        try:
            lower = cholesky_pd(sigma)
        except NotPositiveDefiniteError:
            return self._surrogate()

        if self.identity_weight:
            resid = self.vech_q - vech(sigma)
            value = float(resid @ resid)
            if not with_grad:
                return ContrastValue(value, None, True)
            delta = sigma_jacobian(self.mask, theta, parts).delta
            return ContrastValue(value, -2.0 * delta.T @ resid, True)

        # Σ = LLᵀ の下で L⁻¹QL⁻ᵀ の固有値 λ を使う: F = Σ(λ − 1 − log λ)
        inv_lower = scipy.linalg.solve_triangular(lower, np.eye(self.mask.p), lower=True)
        whitened = inv_lower @ self.Q @ inv_lower.T
        excess = np.linalg.eigvalsh(0.5 * (whitened + whitened.T)) - 1.0
        value = float(np.sum(np.maximum(excess - np.log1p(excess), 0.0)))
        if not with_grad:
            return ContrastValue(value, None, True)
        sigma_inv = inv_lower.T @ inv_lower
        weight = sigma_inv @ (sigma - self.Q) @ sigma_inv
        delta = sigma_jacobian(self.mask, theta, parts).delta
        grad = (self.weights * vech(0.5 * (weight + weight.T))) @ delta
        return ContrastValue(value, grad, True)


def contrast_f(q: RealizedCov, mask: ParameterMask, theta) -> float:
    """F̃(Q, Σ(θ)) の値。Σ(θ) が正定値でなければ最大の有限値。"""
    return Contrast(q, mask).evaluate(theta, with_grad=False).value


def quasi_loglik(q_matrix, sigma, n: int, h: float) -> float:
    """
    擬似対数尤度
        log L = −(pn/2)log 2π − (pn/2)log h − (n/2)log det Σ − (n/2)tr(Σ⁻¹Q)
    """
    q_matrix = np.asarray(q_matrix, dtype=float)
    sigma = sym_matrix(sigma)
    p = sigma.shape[0]
    lower = cholesky_pd(sigma)
    solved = scipy.linalg.cho_solve((lower, True), q_matrix)
    logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
    return float(
        -0.5 * p * n * np.log(2.0 * np.pi)
        - 0.5 * p * n * np.log(h)
        - 0.5 * n * logdet
        - 0.5 * n * np.trace(solved)
    )


@dataclass
class OptimizeOutcome:
    x: np.ndarray
    f: float
    grad_norm: float
    iterations: int
    converged: bool
    message: str


def projected_gradient(x: np.ndarray, g: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    return x - np.clip(x - g, lower, upper)


def minimize_box(
    evaluate: Callable[[np.ndarray, bool], ContrastValue],
    x0: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    *,
    gtol: float = GTOL,
    max_iter: int = MAX_ITER,
    c1: float = ARMIJO_C1,
    max_backtracks: int = MAX_BACKTRACKS,
) -> OptimizeOutcome:
    """
    箱型制約付きの射影 BFGS。

    境界で勾配が外を向いている変数は固定し、残りの変数で逆ヘッセ近似 H の方向をとります。
    降下方向にならなければ H を単位行列に戻します。
    収束判定は ‖射影勾配‖∞ < gtol·(1+|F|)。
    """
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    size = x.size
    current = evaluate(x, True)
    if not current.sigma_pd:
        return OptimizeOutcome(x, current.value, float("inf"), 0, False, "初期値で Σ(θ) が正定値ではありません")
    if size == 0:
        return OptimizeOutcome(x, current.value, 0.0, 0, True, "自由パラメータなし")
    f, g = current.value, current.grad
    eye = np.eye(size)
    H = eye.copy()
    scaled = False
    identity_retry = False
    pg_norm = float(np.max(np.abs(projected_gradient(x, g, lower, upper))))

    for iteration in range(max_iter):
        if pg_norm < gtol * (1.0 + abs(f)):
            return OptimizeOutcome(x, f, pg_norm, iteration, True, "収束")
        bound = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        free = ~bound
        direction = np.zeros(size)
        direction[free] = -(H[np.ix_(free, free)] @ g[free])
        if not g @ direction < 0:
            H = eye.copy()
            direction[free] = -g[free]
        if not g @ direction < 0:
            return OptimizeOutcome(x, f, pg_norm, iteration, False, "降下方向が見つかりません")

        alpha = 1.0
        accepted = None
        for _ in range(max_backtracks):
            trial = np.clip(x + alpha * direction, lower, upper)
            value = evaluate(trial, False)
            if value.sigma_pd and value.value <= f + c1 * float(g @ (trial - x)):
                accepted = trial
                break
            alpha *= 0.5

        if accepted is None or np.array_equal(accepted, x):
            if not identity_retry and not np.array_equal(H, eye):
                H = eye.copy()
                identity_retry = True
                continue
            if pg_norm <= PRECISION_FLOOR_GTOL * (1.0 + abs(f)):
                return OptimizeOutcome(x, f, pg_norm, iteration, True, "precision floor")
            return OptimizeOutcome(x, f, pg_norm, iteration, False, "直線探索に失敗しました")
        identity_retry = False

        updated = evaluate(accepted, True)
        s = accepted - x
        y = updated.grad - g
        x, f, g = accepted, updated.value, updated.grad
        pg_norm = float(np.max(np.abs(projected_gradient(x, g, lower, upper))))

        sy = float(s @ y)
        if sy > CURVATURE_RTOL * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled:
                H = (sy / float(y @ y)) * eye
                scaled = True
            rho = 1.0 / sy
            V = eye - rho * np.outer(s, y)
            H = V @ H @ V.T + rho * np.outer(s, s)

    if pg_norm < gtol * (1.0 + abs(f)):
        return OptimizeOutcome(x, f, pg_norm, max_iter, True, "収束")
    return OptimizeOutcome(x, f, pg_norm, max_iter, False, "最大反復回数に達しました")


@dataclass
class FitResult:
    """最小コントラスト推定の結果"""

    model: str
    labels: Tuple[str, ...]
    theta_hat: np.ndarray
    contrast: float
    loglik: Optional[float]
    converged: bool
    iterations: int
    grad_norm: float
    fallback_identity_v: bool
    n: int
    T: float
    message: str = ""
    se: Optional[np.ndarray] = None
    latent_pd: bool = True
    nonpd_evaluations: int = 0
    starts: int = 1

    def to_dict(self) -> Dict[str, Any]:
        def named(values):
            if values is None:
                return None
            return {label: float(v) for label, v in zip(self.labels, values)}

        def finite(value):
            return float(value) if value is not None and np.isfinite(value) else None

        return {
            "model": self.model,
            "theta": named(self.theta_hat),
            "se": named(self.se),
            "contrast": finite(self.contrast),
            "loglik": finite(self.loglik),
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": finite(self.grad_norm),
            "fallback_identity_v": self.fallback_identity_v,
            "latent_pd": self.latent_pd,
            "nonpd_evaluations": self.nonpd_evaluations,
            "starts": self.starts,
            "message": self.message,
            "n": self.n,
            "T": self.T,
        }


def _latent_pd(mask: ParameterMask, theta: np.ndarray) -> bool:
    parts = structure_parts(mask, theta)
    sxx, szz = parts.matrices["Sxx"], parts.matrices["Szz"]
    return is_pd(sxx) and (szz.size == 0 or is_pd(szz))


def fit(
    q: RealizedCov,
    mask: ParameterMask,
    theta_init=None,
    *,
    gtol: float = GTOL,
    max_iter: int = MAX_ITER,
    c1: float = ARMIJO_C1,
    max_backtracks: int = MAX_BACKTRACKS,
    multistart: int = 0,
    spread: float = 0.5,
    rng: Optional[np.random.Generator] = None,
    compute_se: bool = True,
) -> FitResult:
    """
    θ̂ = argmin_{θ∈Θ} F̃(Q, Σ(θ)) を求めます。

    Args:
        q: 実現共分散
        mask: パラメータマスク
        theta_init: 初期値（省略時は mask.theta_init）
        gtol: 収束判定の許容値
        max_iter: 最大反復回数
        c1: Armijo 条件の係数
        max_backtracks: 直線探索で step を半分にする最大回数
        multistart: 追加するランダム初期値の数
        spread: ランダム初期値の幅（θ_init ± spread·(1+|θ_init|)）
        rng: ランダム初期値用の乱数ストリーム
        compute_se: 標準誤差も計算するか

    Returns:
        FitResult（収束しなかった場合も例外は送出せず converged=False）
    """
    if theta_init is None:
        theta_init = mask.theta_init if mask.theta_init is not None else mask.clip(np.ones(mask.q))
    start = np.asarray(theta_init, dtype=float).reshape(-1)
    if start.size != mask.q:
        raise DimensionError(f"初期値の長さ {start.size} が q={mask.q} と一致しません")
    if not mask.within_bounds(start):
        raise DomainError("初期値が Θ の外にあります")

    starts = [start]
    if multistart > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        for _ in range(multistart):
            jitter = rng.uniform(-spread, spread, size=mask.q) * (1.0 + np.abs(start))
            starts.append(mask.clip(start + jitter))

    contrast = Contrast(q, mask)
    outcomes: List[OptimizeOutcome] = [
        minimize_box(
            contrast.evaluate, s, mask.lower, mask.upper,
            gtol=gtol, max_iter=max_iter, c1=c1, max_backtracks=max_backtracks,
        )
        for s in starts
    ]
    converged = [o for o in outcomes if o.converged]
    best = min(converged or outcomes, key=lambda o: o.f)

    loglik = None
    latent_pd = False
    if best.f < NONPD_SURROGATE:
        sigma = structure_parts(mask, best.x).sigma
        loglik = quasi_loglik(q.Q, sigma, q.n, q.h)
        latent_pd = _latent_pd(mask, best.x)
    result = FitResult(
        model=mask.name,
        labels=mask.labels,
        theta_hat=best.x,
        contrast=best.f,
        loglik=loglik,
        converged=best.converged,
        iterations=best.iterations,
        grad_norm=best.grad_norm,
        fallback_identity_v=contrast.identity_weight,
        n=q.n,
        T=q.T,
        message=best.message,
        latent_pd=latent_pd,
        nonpd_evaluations=contrast.nonpd_evaluations,
        starts=len(starts),
    )
    if not result.converged:
        logger.warning("最適化が収束しませんでした: %s (%s)", mask.name, best.message)
    elif not latent_pd:
        logger.warning("Σξξ または Σζζ の推定値が正定値ではありません: %s", mask.name)
    if compute_se and result.converged:
        try:
            result.se = standard_errors(result, mask)
        except (DomainError, ModelError) as exc:
            logger.debug("標準誤差を計算できませんでした: %s", exc)
    return result


def asymptotic_information(mask: ParameterMask, theta) -> np.ndarray:
    """A(θ) = Δᵀ W(Σ(θ))⁻¹ Δ"""
    parts = structure_parts(mask, theta)
    delta = sigma_jacobian(mask, theta, parts).delta
    w_inv = asymcov_w_inv(parts.sigma)
    info = delta.T @ w_inv @ delta
    return 0.5 * (info + info.T)


def asymptotic_se(mask: ParameterMask, theta, n: int) -> np.ndarray:
    """
    √([(ΔᵀW⁻¹Δ)⁻¹]_jj / n)

    Raises:
        ModelError: 情報行列が数値的に特異な場合（識別できない方向のラベル付き）
    """
    info = asymptotic_information(mask, theta)
    if info.size == 0:
        return np.zeros(0)
    eigval, eigvec = np.linalg.eigh(info)
    top = float(np.max(np.abs(eigval)))
    deficient = eigval <= INFORMATION_RTOL * top
    if top == 0.0 or np.any(deficient):
        directions = []
        for column in eigvec[:, deficient].T:
            involved = [mask.labels[j] for j in np.flatnonzero(np.abs(column) > 0.1)]
            directions.append("+".join(involved))
        raise ModelError("情報行列 ΔᵀW⁻¹Δ が特異です。識別できない方向: " + "; ".join(directions))
    covariance = (eigvec / eigval) @ eigvec.T
    return np.sqrt(np.diag(covariance) / n)


def standard_errors(fit_result: FitResult, mask: ParameterMask) -> np.ndarray:
    """
    θ̂ における漸近標準誤差。

    Raises:
        DomainError: 収束していない、または Σ(θ̂) が正定値でない場合
        ModelError: ΔᵀW⁻¹Δ が特異な場合
    """
    if not fit_result.converged:
        raise DomainError("収束していない推定結果の標準誤差は計算できません")
    return asymptotic_se(mask, fit_result.theta_hat, fit_result.n)


def population_fit(sigma0, mask: ParameterMask, theta_init=None, **kwargs) -> FitResult:
    """
    U(θ) = F(Σ₀, Σ(θ)) を最小化した疑似真値 θ̄ と U(θ̄)（contrast）を返します。
    """
    target = RealizedCov(sym_matrix(sigma0), 1, 1.0)
    kwargs.setdefault("compute_se", False)
    return fit(target, mask, theta_init, **kwargs)
