"""
適合度検定

χ² 分布の上側 α 点（正則化不完全ガンマ関数の逆算）と、
擬似尤度比検定 T_n = n·F̃(θ̂)、罰則付き検定 Ť_n = n·F̃(θ̌) を提供します。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np
from scipy import special

from .errors import ConsistencyError, DomainError, TestUndefinedError
from .lisrel_model import ParameterMask, build_sigma
from .matrix_core import is_pd
from .qmle import FitResult, quasi_loglik
from .realized_cov import RealizedCov

logger = logging.getLogger(__name__)

QUANTILE_MAX_ITER = 200
QUANTILE_RTOL = 1e-14

TEST_CSV_HEADER = ["statistic", "df", "critical", "p_value", "reject"]


def _validate_chi2_args(df: int, alpha: float) -> None:
    if int(df) != df or df < 1:
        raise DomainError(f"自由度は 1 以上の整数が必要です: {df}")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"α は (0, 1) の範囲が必要です: {alpha}")


def chi2_sf(x: float, df: int) -> float:
    """P(χ²_df > x)"""
    if x <= 0.0:
        return 1.0
    return float(special.gammaincc(0.5 * df, 0.5 * x))


def _chi2_pdf(x: float, df: int) -> float:
    if x <= 0.0:
        return 0.0
    a = 0.5 * df
    return math.exp((a - 1.0) * math.log(x) - 0.5 * x - a * math.log(2.0) - special.gammaln(a))


def chi2_upper_quantile(df: int, alpha: float) -> float:
    """
    P(χ²_df > x) = α となる x を返します。

    Wilson–Hilferty 近似を初期値に、不完全ガンマ関数に対するニュートン法を
    二分法の括弧で保護しながら解きます。α > 0.5 では下側確率 1−α を解きます。

    Raises:
        DomainError: df < 1 または α ∉ (0, 1)
    """
    _validate_chi2_args(df, alpha)
    df = int(df)
    a = 0.5 * df
    if alpha > 0.5:
        target = 1.0 - alpha

        def residual(x: float) -> float:
            return float(special.gammainc(a, 0.5 * x)) - target

        sign = 1.0
    else:
        target = alpha

        def residual(x: float) -> float:
            return float(special.gammaincc(a, 0.5 * x)) - target

        sign = -1.0

    # residual は sign 方向に単調: sign·residual は x について増加
    lo, hi = 0.0, max(1.0, float(df))
    while sign * residual(hi) < 0.0:
        lo, hi = hi, 2.0 * hi

    z = float(special.ndtri(1.0 - alpha))
    wh = df * (1.0 - 2.0 / (9.0 * df) + z * math.sqrt(2.0 / (9.0 * df))) ** 3
    x = wh if lo < wh < hi else 0.5 * (lo + hi)

    for _ in range(QUANTILE_MAX_ITER):
        r = residual(x)
        if r == 0.0:
            return x
        if sign * r < 0.0:
            lo = x
        else:
            hi = x
        slope = sign * _chi2_pdf(x, df)
        candidate = x - r / slope if slope != 0.0 else float("nan")
        if not lo < candidate < hi:
            candidate = 0.5 * (lo + hi)
        step = abs(candidate - x)
        x = candidate
        if step <= QUANTILE_RTOL * max(1.0, x) or hi - lo <= QUANTILE_RTOL * max(1.0, x):
            return x
    logger.warning("χ² 分位点の反復が上限に達しました: df=%s, alpha=%s", df, alpha)
    return x


@dataclass(frozen=True)
class TestReport:
    """検定結果"""

    __test__ = False

    statistic: float
    df: int
    critical: float
    p_value: float
    alpha: float
    reject: bool
    kind: str = "plain"
    df_source: str = "fixed"
    model: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model": self.model,
            "kind": self.kind,
            "statistic": float(self.statistic),
            "df": int(self.df),
            "df_source": self.df_source,
            "critical": float(self.critical),
            "p_value": float(self.p_value),
            "alpha": float(self.alpha),
            "reject": bool(self.reject),
        }

    def csv_row(self) -> List[Any]:
        return [self.statistic, self.df, self.critical, self.p_value, int(self.reject)]


def _report(statistic: float, df: int, alpha: float, kind: str, df_source: str, model: str) -> TestReport:
    critical = chi2_upper_quantile(df, alpha)
    p_value = min(max(chi2_sf(statistic, df), 0.0), 1.0)
    return TestReport(float(statistic), int(df), critical, p_value, float(alpha), bool(statistic > critical), kind, df_source, model)


def gof_test(q: RealizedCov, fit_result: FitResult, mask: ParameterMask, alpha: float = 0.05) -> TestReport:
    """
    擬似尤度比検定。T_n = n·F̃(θ̂)、自由度 p̄ − q。

    Raises:
        ConsistencyError: 推定が収束していない場合
        TestUndefinedError: 自由度が 0 以下（飽和モデル）の場合
    """
    if not fit_result.converged:
        raise ConsistencyError("収束していない推定結果では検定できません")
    df = mask.p_bar - mask.q
    if df <= 0:
        raise TestUndefinedError(f"自由度 p̄ − q = {df} のため検定が定義できません")
    report = _report(q.n * fit_result.contrast, df, alpha, "plain", "fixed", mask.name)
    logger.debug("T_n=%.6g, df=%s, reject=%s (%s)", report.statistic, df, report.reject, mask.name)
    return report


def penalized_gof_test(
    q: RealizedCov,
    po_fit: FitResult,
    active_count: int,
    mask: ParameterMask,
    alpha: float = 0.05,
) -> TestReport:
    """
    罰則付き擬似尤度比検定。Ť_n = n·F̃(θ̌)、自由度 p̄ − |推定された活性集合|。

    Raises:
        TestUndefinedError: active_count ≥ p̄ の場合
    """
    if not po_fit.converged:
        raise ConsistencyError("収束していない P-O 推定では検定できません")
    if active_count < 0:
        raise DomainError(f"活性集合の大きさが負です: {active_count}")
    df = mask.p_bar - int(active_count)
    if df <= 0:
        raise TestUndefinedError(f"活性集合の大きさ {active_count} が p̄={mask.p_bar} 以上のため検定が定義できません")
    return _report(q.n * po_fit.contrast, df, alpha, "penalized", "estimated-active-set", mask.name)


def likelihood_ratio(q: RealizedCov, fit_result: FitResult, mask: ParameterMask) -> float:
    """
    −2 log Λ_n = −2 max log L(Σ(θ)) + 2 max log L(Σ)（Q が正定値のとき）。

    Raises:
        DomainError: Q が正定値でない場合
    """
    if not is_pd(q.Q):
        raise DomainError("尤度比は Q が正定値のときのみ定義されます")
    restricted = quasi_loglik(q.Q, build_sigma(mask, fit_result.theta_hat), q.n, q.h)
    saturated = quasi_loglik(q.Q, q.Q, q.n, q.h)
    return -2.0 * restricted + 2.0 * saturated


def chi2_plotting_quantiles(df: int, count: int) -> np.ndarray:
    """Q-Q プロット用の χ²_df 分位点（プロット位置 (i − 0.5)/count）"""
    probs = (np.arange(1, count + 1) - 0.5) / count
    return np.array([chi2_upper_quantile(df, 1.0 - prob) for prob in probs])
