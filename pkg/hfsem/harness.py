"""
モンテカルロ実験ハーネス

実験設定（真のモデル・当てはめるモデル・格子・反復数・シード）を読み込み、
反復ごとに シミュレーション → 実現共分散 → 推定 → 検定（→ スパース推定）を実行して集計します。
各反復の乱数は (シード, 反復番号) から導くので、並列数に関係なく出力は同一です。
"""

from __future__ import annotations

import json
import logging
import math
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import scipy
from scipy import stats

import config
import utils

from .errors import ConfigError, HarnessError, HfsemError, ModelError
from .inference import TEST_CSV_HEADER, TestReport, chi2_plotting_quantiles, gof_test, penalized_gof_test
from .lisrel_model import ParameterMask, mask_from_dict
from .matrix_core import asymcov_w, vech_indices
from .qmle import FitResult, asymptotic_se, fit, population_fit
from .realized_cov import clt_zscores, realized_cov
from .sde_sim import PROCESS_NAMES, DiffusionSystem, SamplingGrid, simulate_observations, stream_rng, system_from_dict
from .sparse_sem import PenaltyConfig, SUPPORT_SOURCES, sparse_pipeline

logger = logging.getLogger(__name__)

DATA_MODEL = "data"
MULTISTART_STREAM_BASE = 4
REGIME_LABELS = ("non-ergodic", "ergodic")
POPULATION_ZERO_ATOL = 1e-10

SUMMARY_HEADER = ["model", "quantity", "count", "mean", "sd", "theory_mean", "theory_sd", "min", "q1", "median", "q3", "max"]
TESTS_HEADER = ["rep", "model", "kind"] + TEST_CSV_HEADER
ESTIMATES_HEADER = ["rep", "model", "quantity", "value"]
QQ_HEADER = ["model", "quantity", "rank", "sample", "theoretical", "reference"]


# ---------------------------------------------------------------------------
# 実験設定
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitModel:
    """当てはめるモデルと、そのモデル設定に書かれた罰則（あれば）"""

    mask: ParameterMask
    source: str
    penalty: Optional[Dict[str, Any]] = None

    @property
    def name(self) -> str:
        return self.mask.name


@dataclass(frozen=True)
class ExperimentConfig:
    """実験設定"""

    name: str
    system: DiffusionSystem
    system_source: str
    fit_models: Tuple[FitModel, ...]
    grid: SamplingGrid
    replications: int
    seed: int
    alpha: float = 0.05
    penalty: Optional[Dict[str, Any]] = None
    regime_label: str = "non-ergodic"
    outputs: str = ""
    multistart: int = 0
    failure_ratio: float = 0.01
    chunk_rows: int = 4096
    optimizer: Dict[str, Any] = field(default_factory=dict)
    sparse: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError(f"replications は 1 以上が必要です: {self.replications}")
        if self.seed < 0:
            raise ConfigError(f"seed は 0 以上の整数が必要です: {self.seed}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha は (0, 1) の範囲が必要です: {self.alpha}")
        if self.regime_label not in REGIME_LABELS:
            raise ConfigError(f"regime_label は {REGIME_LABELS} のいずれかです: {self.regime_label}")
        if not self.fit_models:
            raise ConfigError("fit_models が空です")
        names = [m.name for m in self.fit_models]
        if len(set(names)) != len(names) or DATA_MODEL in names:
            raise ConfigError(f"fit_models の名前が重複しているか予約語です: {names}")
        for model in self.fit_models:
            if model.mask.p != self.system.p:
                raise ConfigError(f"モデル {model.name} の p={model.mask.p} が真のモデルの p={self.system.p} と一致しません")
        if self.sparse.get("support_from", "lsa") not in SUPPORT_SOURCES:
            raise ConfigError(f"support_from は {SUPPORT_SOURCES} のいずれかです")

    def penalty_for(self, model: FitModel) -> Optional[PenaltyConfig]:
        """実験の penalty を優先し、なければモデル設定の penalty を使います。"""
        payload = self.penalty if self.penalty is not None else model.penalty
        if payload is None:
            return None
        return PenaltyConfig.from_dict(payload, self.grid.n, defaults=self.sparse)

    def fit_options(self) -> Dict[str, Any]:
        return {
            "gtol": float(self.optimizer.get("gtol", 1e-8)),
            "max_iter": int(self.optimizer.get("max_iter", 2000)),
            "c1": float(self.optimizer.get("c1", 1e-4)),
            "max_backtracks": int(self.optimizer.get("max_backtracks", 60)),
            "multistart": int(self.multistart),
            "spread": float(self.optimizer.get("multistart_spread", 0.5)),
        }

    def to_dict(self) -> Dict[str, Any]:
        """run.json 用の設定エコー（スレッド数・出力先は含めない）"""
        return {
            "name": self.name,
            "true_model": self.system_source,
            "fit_models": [m.source for m in self.fit_models],
            "grid": {"n": self.grid.n, "h": self.grid.h, "T": self.grid.T},
            "replications": self.replications,
            "seed": self.seed,
            "alpha": self.alpha,
            "penalty": self.penalty,
            "regime_label": self.regime_label,
            "multistart": self.multistart,
            "failure_ratio": self.failure_ratio,
            "chunk_rows": self.chunk_rows,
            "optimizer": dict(self.optimizer),
            "sparse": dict(self.sparse),
        }


def _read_json(path: str, what: str) -> Any:
    try:
        return utils.read_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"{what}が見つかりません: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what}の JSON が不正です: {path}: {exc}") from exc


def _resolve(reference: str, kind: str, base_dir: Optional[str]) -> str:
    try:
        return config.resolve_fixture(reference, kind, base_dir)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc


def _load_system_ref(ref: Any, base_dir: Optional[str]) -> Tuple[DiffusionSystem, str]:
    if isinstance(ref, Mapping):
        return system_from_dict(ref, name=str(ref.get("name", "inline"))), str(ref.get("name", "inline"))
    if not isinstance(ref, str):
        raise ConfigError("true_model はファイル名かオブジェクトが必要です")
    path = _resolve(ref, "systems", base_dir)
    payload = _read_json(path, "真のモデル設定")
    stem = os.path.splitext(os.path.basename(path))[0]
    return system_from_dict(payload, name=stem), ref


def _load_model_ref(ref: Any, base_dir: Optional[str]) -> FitModel:
    if isinstance(ref, Mapping):
        payload, source = ref, str(ref.get("name", "inline"))
        stem = source
    elif isinstance(ref, str):
        path = _resolve(ref, "models", base_dir)
        payload, source = _read_json(path, "モデル設定"), ref
        stem = os.path.splitext(os.path.basename(path))[0]
    else:
        raise ConfigError("fit_models の要素はファイル名かオブジェクトが必要です")
    penalty = payload.get("penalty") if isinstance(payload, Mapping) else None
    return FitModel(mask_from_dict(payload, name=stem), source, dict(penalty) if penalty else None)


def experiment_from_dict(
    payload: Mapping[str, Any],
    *,
    base_dir: Optional[str] = None,
    name: str = "experiment",
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    実験設定の辞書を ExperimentConfig に変換します。

    値の優先順位は overrides（CLI）> payload（実験 JSON）> data/config.json > FEATURES。

    Raises:
        ConfigError: 形式が不正、または参照先のフィクスチャが無い場合
    """
    if not isinstance(payload, Mapping):
        raise ConfigError("実験設定はオブジェクトである必要があります")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    harness = config.get_effective_settings("harness")
    optimizer = config.get_effective_settings("optimizer")
    optimizer.update(payload.get("optimizer") or {})
    sparse = config.get_effective_settings("sparse")
    if payload.get("support_from") is not None:
        sparse["support_from"] = payload["support_from"]

    try:
        system, system_source = _load_system_ref(payload["true_model"], base_dir)
        fit_models = tuple(_load_model_ref(ref, base_dir) for ref in payload["fit_models"])
        grid_payload = payload["grid"]
        grid = SamplingGrid(int(grid_payload["n"]), float(grid_payload["h"]), grid_payload.get("T"))
        replications = overrides.get("replications", payload.get("replications", 1))
        seed = overrides.get("seed", payload.get("seed", 0))
        alpha = overrides.get("alpha", payload.get("alpha", harness.get("alpha", 0.05)))
        return ExperimentConfig(
            name=str(payload.get("name", name)),
            system=system,
            system_source=system_source,
            fit_models=fit_models,
            grid=grid,
            replications=int(replications),
            seed=int(seed),
            alpha=float(alpha),
            penalty=dict(payload["penalty"]) if payload.get("penalty") else None,
            regime_label=str(payload.get("regime_label", "non-ergodic")),
            outputs=str(overrides.get("outputs", payload.get("outputs", os.path.join(config.OUTPUT_DIR, str(payload.get("name", name)))))),
            multistart=utils.coerce_int(overrides.get("multistart", payload.get("multistart", optimizer.get("multistart", 0))), 0, minimum=0),
            failure_ratio=utils.coerce_float(payload.get("failure_ratio", harness.get("failure_ratio", 0.01)), 0.01, minimum=0.0),
            chunk_rows=utils.coerce_int(payload.get("chunk_rows", harness.get("chunk_rows", 4096)), 4096, minimum=1),
            optimizer=optimizer,
            sparse=sparse,
        )
    except ConfigError:
        raise
    except HfsemError as exc:
        raise ConfigError(f"実験設定が不正です: {exc}") from exc
    except KeyError as exc:
        raise ConfigError(f"実験設定に {exc} がありません") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"実験設定の値が不正です: {exc}") from exc


def load_experiment(path: str, overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """実験設定 JSON を読み込みます（参照は JSON のあるディレクトリ → データディレクトリの順に解決）。"""
    resolved = _resolve(path, "experiments", None)
    payload = _read_json(resolved, "実験設定")
    stem = os.path.splitext(os.path.basename(resolved))[0]
    cfg = experiment_from_dict(payload, base_dir=os.path.dirname(os.path.abspath(resolved)), name=stem, overrides=overrides)
    logger.info(
        "実験設定を読み込みました: %s (reps=%s, n=%s, h=%s, models=%s)",
        cfg.name, cfg.replications, cfg.grid.n, cfg.grid.h, ",".join(m.name for m in cfg.fit_models),
    )
    return cfg


# ---------------------------------------------------------------------------
# 1 反復
# ---------------------------------------------------------------------------

@dataclass
class ReplicationResult:
    """1 反復分の記録"""

    rep: int
    values: List[Tuple[str, str, float]] = field(default_factory=list)
    tests: List[TestReport] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)

    def record(self, model: str, quantity: str, value: float) -> None:
        self.values.append((model, str(quantity), float(value)))

    def fail(self, model: str, reason: str) -> None:
        self.failures.append((model, reason))
        logger.debug("反復 %s のモデル %s を除外します: %s", self.rep, model, reason)


def vech_names(p: int, prefix: str = "Q") -> List[str]:
    rows, cols = vech_indices(p)
    return [f"{prefix}[{i + 1},{j + 1}]" for i, j in zip(rows, cols)]


def true_support(mask: ParameterMask) -> Optional[Tuple[int, ...]]:
    if mask.theta_true is None:
        return None
    return tuple(int(j) for j in np.flatnonzero(mask.theta_true != 0.0))


def _fit_model(cfg: ExperimentConfig, rep: int, index: int, model: FitModel, q, result: ReplicationResult) -> None:
    mask = model.mask
    options = cfg.fit_options()
    rng = stream_rng(cfg.seed, rep, MULTISTART_STREAM_BASE + index) if options["multistart"] else None
    fitted: FitResult = fit(q, mask, rng=rng, compute_se=False, **options)
    if not fitted.converged:
        result.fail(mask.name, f"not converged: {fitted.message}")
        return
    for label, value in zip(mask.labels, fitted.theta_hat):
        result.record(mask.name, label, value)
    result.record(mask.name, "contrast", fitted.contrast)

    report = gof_test(q, fitted, mask, cfg.alpha)
    result.tests.append(report)
    result.record(mask.name, "T_n", report.statistic)

    penalty = cfg.penalty_for(model)
    if penalty is None:
        return
    sparse = sparse_pipeline(
        q,
        mask,
        penalty,
        initial_fit=fitted,
        support_from=str(cfg.sparse.get("support_from", "lsa")),
        plsa_tol=float(cfg.sparse.get("plsa_tol", 1e-10)),
        plsa_max_sweeps=int(cfg.sparse.get("plsa_max_sweeps", 10000)),
        delta_warning_band=float(cfg.sparse.get("delta_warning_band", 0.2)),
        gtol=options["gtol"],
        max_iter=options["max_iter"],
        compute_se=False,
    )
    if not sparse.po_fit.converged:
        result.fail(mask.name, f"P-O not converged: {sparse.po_fit.message}")
        return
    penalized = penalized_gof_test(q, sparse.po_fit, len(sparse.active_set), mask, cfg.alpha)
    result.tests.append(penalized)
    result.record(mask.name, "T_pen", penalized.statistic)
    result.record(mask.name, "active_size", len(sparse.active_set))
    if sparse.supports_agree is not None:
        result.record(mask.name, "supports_agree", float(sparse.supports_agree))
    support = true_support(mask)
    if support is not None:
        result.record(mask.name, "oracle_hit", float(sparse.active_set == support))


def run_replication(cfg: ExperimentConfig, rep: int, sigma0: Optional[np.ndarray] = None) -> ReplicationResult:
    """
    1 反復を実行します。反復単位・モデル単位の失敗は例外にせず記録します。
    """
    result = ReplicationResult(rep)
    try:
        sample = simulate_observations(cfg.system, cfg.grid, cfg.seed, replication=rep)
        q = realized_cov(sample, cfg.chunk_rows)
    except HfsemError as exc:
        result.fail("*", f"{type(exc).__name__}: {exc}")
        return result
    sigma0 = cfg.system.sigma0() if sigma0 is None else sigma0
    names = vech_names(q.p)
    rows, cols = vech_indices(q.p)
    for name, value in zip(names, q.Q[rows, cols]):
        result.record(DATA_MODEL, name, value)
    for name, value in zip(vech_names(q.p, "z_Q"), clt_zscores(q, sigma0)):
        result.record(DATA_MODEL, name, value)

    for index, model in enumerate(cfg.fit_models):
        try:
            _fit_model(cfg, rep, index, model, q, result)
        except (HfsemError, np.linalg.LinAlgError) as exc:
            result.fail(model.name, f"{type(exc).__name__}: {exc}")
    return result


_WORKER_CONFIG: Optional[ExperimentConfig] = None
_WORKER_SIGMA0: Optional[np.ndarray] = None


def _init_worker(cfg: ExperimentConfig) -> None:
    global _WORKER_CONFIG, _WORKER_SIGMA0
    _WORKER_CONFIG = cfg
    _WORKER_SIGMA0 = cfg.system.sigma0()


def _run_in_worker(rep: int) -> ReplicationResult:
    return run_replication(_WORKER_CONFIG, rep, _WORKER_SIGMA0)


def _iter_replications(cfg: ExperimentConfig, threads: int) -> Iterator[ReplicationResult]:
    reps = range(cfg.replications)
    if threads <= 1 or cfg.replications == 1:
        sigma0 = cfg.system.sigma0()
        for rep in reps:
            yield run_replication(cfg, rep, sigma0)
        return
    chunksize = max(1, cfg.replications // (threads * 8))
    with ProcessPoolExecutor(max_workers=threads, initializer=_init_worker, initargs=(cfg,)) as executor:
        # map は投入順に結果を返す
        yield from executor.map(_run_in_worker, reps, chunksize=chunksize)


# ---------------------------------------------------------------------------
# 集計
# ---------------------------------------------------------------------------

@dataclass
class SummaryRow:
    model: str
    quantity: str
    count: int
    mean: Optional[float]
    sd: Optional[float]
    theory_mean: Optional[float]
    theory_sd: Optional[float]
    minimum: Optional[float]
    q1: Optional[float]
    median: Optional[float]
    q3: Optional[float]
    maximum: Optional[float]

    def csv_row(self) -> List[Any]:
        return [
            self.model, self.quantity, self.count, self.mean, self.sd, self.theory_mean, self.theory_sd,
            self.minimum, self.q1, self.median, self.q3, self.maximum,
        ]


def describe(values: Sequence[float]) -> Dict[str, Optional[float]]:
    """平均・標本標準偏差（n−1）・最小・四分位（線形補間）・最大"""
    data = np.asarray(values, dtype=float)
    if data.size == 0:
        return {key: None for key in ("mean", "sd", "min", "q1", "median", "q3", "max")}
    quartiles = np.quantile(data, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {
        "mean": float(np.mean(data)),
        "sd": float(np.std(data, ddof=1)) if data.size > 1 else None,
        "min": float(quartiles[0]),
        "q1": float(quartiles[1]),
        "median": float(quartiles[2]),
        "q3": float(quartiles[3]),
        "max": float(quartiles[4]),
    }


@dataclass
class ModelTheory:
    """モデルごとの理論値"""

    theta_mean: Optional[np.ndarray] = None
    theta_sd: Optional[np.ndarray] = None
    population_contrast: Optional[float] = None
    df: Optional[int] = None
    penalized_df: Optional[int] = None
    true_support: Optional[Tuple[int, ...]] = None

    def to_dict(self, labels: Sequence[str], n: int) -> Dict[str, Any]:
        def named(values):
            return None if values is None else {k: float(v) for k, v in zip(labels, values)}

        return {
            "theta_mean": named(self.theta_mean),
            "theta_sd": named(self.theta_sd),
            "population_contrast": self.population_contrast,
            "n_population_contrast": None if self.population_contrast is None else n * self.population_contrast,
            "df": self.df,
            "penalized_df": self.penalized_df,
            "true_support": None if self.true_support is None else [labels[j] for j in self.true_support],
        }


def model_theory(cfg: ExperimentConfig, model: FitModel, sigma0: np.ndarray) -> ModelTheory:
    """θ₀ があれば θ₀ と漸近標準誤差、なければ母集団コントラストの最小点 θ̄ を使います。"""
    mask = model.mask
    theory = ModelTheory(df=mask.p_bar - mask.q)
    options = cfg.fit_options()
    options.pop("multistart")
    options.pop("spread")
    population = population_fit(sigma0, mask, **options)
    if population.converged:
        theory.population_contrast = float(population.contrast)
    support = true_support(mask)
    if support is not None:
        theory.theta_mean = mask.theta_true
        theory.true_support = support
        theory.penalized_df = mask.p_bar - len(support)
        try:
            theory.theta_sd = asymptotic_se(mask, mask.theta_true, cfg.grid.n)
        except (ModelError, HfsemError) as exc:
            logger.warning("θ₀ での漸近標準誤差を計算できませんでした: %s (%s)", mask.name, exc)
    elif population.converged:
        theory.theta_mean = population.theta_hat
    return theory


@dataclass
class AggregateReport:
    """集計結果"""

    config: ExperimentConfig
    summary: List[SummaryRow]
    tests: List[Tuple[int, TestReport]]
    estimates: List[Tuple[int, str, str, float]]
    qq: List[Tuple[str, str, int, float, float, str]]
    failures: List[Tuple[int, str, str]]
    rejections: Dict[str, Dict[str, Any]]
    theory: Dict[str, ModelTheory]

    @property
    def failed_replications(self) -> int:
        return len({rep for rep, _, _ in self.failures})

    def summary_row(self, model: str, quantity: str) -> Optional[SummaryRow]:
        for row in self.summary:
            if row.model == model and row.quantity == quantity:
                return row
        return None


def _is_correct(theory: ModelTheory) -> bool:
    return theory.true_support is not None or (
        theory.population_contrast is not None and theory.population_contrast <= POPULATION_ZERO_ATOL
    )


def _theory_for(cfg: ExperimentConfig, theory: Dict[str, ModelTheory], sigma0: np.ndarray, w_diag: np.ndarray,
                model: str, quantity: str) -> Tuple[Optional[float], Optional[float]]:
    n = cfg.grid.n
    p = sigma0.shape[0]
    if model == DATA_MODEL:
        names = vech_names(p)
        if quantity in names:
            k = names.index(quantity)
            rows, cols = vech_indices(p)
            return float(sigma0[rows[k], cols[k]]), float(math.sqrt(w_diag[k] / n))
        return 0.0, 1.0
    info = theory[model]
    mask = next(m.mask for m in cfg.fit_models if m.name == model)
    if quantity in mask.labels:
        j = mask.labels.index(quantity)
        mean = None if info.theta_mean is None else float(info.theta_mean[j])
        sd = None if info.theta_sd is None else float(info.theta_sd[j])
        return mean, sd
    if quantity == "T_n":
        if _is_correct(info) and info.df and info.df > 0:
            return float(info.df), math.sqrt(2.0 * info.df)
        if info.population_contrast is not None:
            return n * info.population_contrast, None
    if quantity == "T_pen" and info.penalized_df:
        return float(info.penalized_df), math.sqrt(2.0 * info.penalized_df)
    if quantity == "active_size" and info.true_support is not None:
        return float(len(info.true_support)), None
    if quantity == "oracle_hit":
        return 1.0, None
    return None, None


def _quantity_order(cfg: ExperimentConfig, p: int) -> List[Tuple[str, str]]:
    order = [(DATA_MODEL, name) for name in vech_names(p)]
    order += [(DATA_MODEL, name) for name in vech_names(p, "z_Q")]
    for model in cfg.fit_models:
        order += [(model.name, label) for label in model.mask.labels]
        order += [(model.name, name) for name in ("contrast", "T_n", "T_pen", "active_size", "supports_agree", "oracle_hit")]
    return order


def _qq_rows(cfg, theory, samples, sigma0, w_diag) -> List[Tuple[str, str, int, float, float, str]]:
    rows: List[Tuple[str, str, int, float, float, str]] = []
    for (model, quantity), values in samples.items():
        if not values:
            continue
        data = np.sort(np.asarray(values, dtype=float))
        m = data.size
        probs = (np.arange(1, m + 1) - 0.5) / m
        if model == DATA_MODEL and quantity.startswith("z_Q"):
            reference = "normal"
        elif model != DATA_MODEL and quantity in ("T_n", "T_pen"):
            info = theory[model]
            df = info.df if quantity == "T_n" else info.penalized_df
            if not df or df < 1:
                continue
            rows += [(model, quantity, k + 1, float(v), float(t), f"chi2_{df}")
                     for k, (v, t) in enumerate(zip(data, chi2_plotting_quantiles(df, m)))]
            continue
        else:
            mean, sd = _theory_for(cfg, theory, sigma0, w_diag, model, quantity)
            if mean is None or not sd or quantity in ("active_size", "oracle_hit", "supports_agree"):
                continue
            data = np.sort((data - mean) / sd)
            reference = "normal"
        quantiles = stats.norm.ppf(probs)
        rows += [(model, quantity, k + 1, float(v), float(t), reference) for k, (v, t) in enumerate(zip(data, quantiles))]
    return rows


def aggregate(cfg: ExperimentConfig, results: Sequence[ReplicationResult], theory: Dict[str, ModelTheory]) -> AggregateReport:
    """反復番号順に並んだ結果を集計します。"""
    sigma0 = cfg.system.sigma0()
    w_diag = np.diag(asymcov_w(sigma0))
    samples: Dict[Tuple[str, str], List[float]] = {key: [] for key in _quantity_order(cfg, sigma0.shape[0])}
    estimates: List[Tuple[int, str, str, float]] = []
    tests: List[Tuple[int, TestReport]] = []
    failures: List[Tuple[int, str, str]] = []
    for result in sorted(results, key=lambda r: r.rep):
        excluded = {model for model, _ in result.failures}
        failures += [(result.rep, model, reason) for model, reason in result.failures]
        for model, quantity, value in result.values:
            if model in excluded:
                continue
            samples.setdefault((model, quantity), []).append(value)
            estimates.append((result.rep, model, quantity, value))
        tests += [(result.rep, report) for report in result.tests if report.model not in excluded]

    summary = []
    for (model, quantity), values in samples.items():
        if not values:
            continue
        stats_ = describe(values)
        theory_mean, theory_sd = _theory_for(cfg, theory, sigma0, w_diag, model, quantity)
        summary.append(SummaryRow(
            model, quantity, len(values), stats_["mean"], stats_["sd"], theory_mean, theory_sd,
            stats_["min"], stats_["q1"], stats_["median"], stats_["q3"], stats_["max"],
        ))

    rejections: Dict[str, Dict[str, Any]] = {}
    for _, report in tests:
        key = f"{report.model}:{report.kind}"
        entry = rejections.setdefault(key, {"model": report.model, "kind": report.kind, "rejected": 0, "count": 0})
        entry["count"] += 1
        entry["rejected"] += int(report.reject)
    for entry in rejections.values():
        entry["rate"] = entry["rejected"] / entry["count"]

    return AggregateReport(
        config=cfg,
        summary=summary,
        tests=tests,
        estimates=estimates,
        qq=_qq_rows(cfg, theory, samples, sigma0, w_diag),
        failures=failures,
        rejections=rejections,
        theory=theory,
    )


def run_experiment(cfg: ExperimentConfig, threads: Optional[int] = None) -> AggregateReport:
    """
    実験を実行して集計します。

    Args:
        cfg: 実験設定
        threads: ワーカープロセス数（1 なら同一プロセスで逐次実行）

    Returns:
        AggregateReport

    Raises:
        HarnessError: 失敗した反復の割合が failure_ratio を超えた場合
    """
    threads = config.get_default_threads() if threads is None else max(1, int(threads))
    logger.info("実験を開始します: %s (reps=%s, threads=%s, regime=%s)", cfg.name, cfg.replications, threads, cfg.regime_label)
    sigma0 = cfg.system.sigma0()
    theory = {model.name: model_theory(cfg, model, sigma0) for model in cfg.fit_models}

    results: List[ReplicationResult] = []
    step = max(1, cfg.replications // 10)
    for result in _iter_replications(cfg, threads):
        results.append(result)
        done = len(results)
        if done % step == 0 or done == cfg.replications:
            logger.info("進捗: %s/%s", done, cfg.replications)

    report = aggregate(cfg, results, theory)
    failed = report.failed_replications
    if failed:
        logger.warning("失敗した反復: %s/%s", failed, cfg.replications)
    if failed > cfg.failure_ratio * cfg.replications:
        raise HarnessError(
            f"失敗した反復が {failed}/{cfg.replications} で上限 {cfg.failure_ratio:.2%} を超えました",
            report.failures,
        )
    for entry in report.rejections.values():
        logger.info("棄却率 %s (%s): %.4f", entry["model"], entry["kind"], entry["rate"])
    return report


# ---------------------------------------------------------------------------
# 出力
# ---------------------------------------------------------------------------

def _versions() -> Dict[str, str]:
    from . import __version__

    return {
        "hfsem": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def replication_spawn_keys(cfg: ExperimentConfig, rep: int) -> Dict[str, List[int]]:
    """stream_rng に渡す spawn_key（潜在過程ごと、multistart はモデルごと）"""
    keys = {name: [rep, index] for index, name in enumerate(PROCESS_NAMES)}
    if cfg.multistart:
        for index, model in enumerate(cfg.fit_models):
            keys[f"multistart:{model.name}"] = [rep, MULTISTART_STREAM_BASE + index]
    return keys


def run_manifest(report: AggregateReport) -> Dict[str, Any]:
    cfg = report.config
    return {
        "config": cfg.to_dict(),
        "environment": config.ENV,
        "versions": _versions(),
        "base_seed": cfg.seed,
        "replication_seeds": [
            {"rep": rep, "entropy": cfg.seed, "spawn_keys": replication_spawn_keys(cfg, rep)}
            for rep in range(cfg.replications)
        ],
        "regime_label": cfg.regime_label,
        "failures": [{"rep": rep, "model": model, "reason": reason} for rep, model, reason in report.failures],
        "rejections": list(report.rejections.values()),
        "theory": {
            m.name: report.theory[m.name].to_dict(m.mask.labels, cfg.grid.n) for m in cfg.fit_models
        },
    }


def emit_tables(report: AggregateReport, out_dir: Optional[str] = None) -> List[str]:
    """
    summary.csv / tests.csv / estimates.csv / qq.csv / run.json を書き出します。

    Returns:
        書き出したファイルのパス

    Raises:
        OSError: 出力先に書き込めない場合
    """
    out_dir = out_dir or report.config.outputs
    utils.ensure_dir(out_dir)
    paths = {name: os.path.join(out_dir, name) for name in ("summary.csv", "tests.csv", "estimates.csv", "qq.csv", "run.json")}
    utils.write_csv(paths["summary.csv"], SUMMARY_HEADER, (row.csv_row() for row in report.summary))
    utils.write_csv(
        paths["tests.csv"],
        TESTS_HEADER,
        ([rep, r.model, r.kind] + r.csv_row() for rep, r in report.tests),
    )
    utils.write_csv(paths["estimates.csv"], ESTIMATES_HEADER, report.estimates)
    utils.write_csv(paths["qq.csv"], QQ_HEADER, report.qq)
    utils.write_json(paths["run.json"], run_manifest(report))
    logger.info("結果を書き出しました: %s", out_dir)
    return list(paths.values())
