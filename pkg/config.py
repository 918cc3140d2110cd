"""
設定ファイル
このモジュールは、推定・シミュレーションの既定値と環境変数の管理を行います。
"""

import os
import json
import logging
from typing import Dict, Any, Optional
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

try:
    load_dotenv()
except Exception as e:
    logger.error(f".envファイルの読み込みに失敗しました: {e}")
    raise

ENV = os.getenv('HFSEM_ENV', 'development')  # デフォルトは開発環境

_ROOT_DIR = os.path.dirname(os.path.abspath(__file__))
_DATA_DIR = os.path.join(_ROOT_DIR, 'data')
_RUNTIME_CONFIG_PATH = os.path.join(_DATA_DIR, 'config.json')


def _safe_int(value: Optional[str], default: Optional[int]) -> Optional[int]:
    """環境変数を整数として解釈し、失敗時はデフォルト値を返す。"""
    try:
        if value is None or value == '':
            return default
        return int(value)
    except (TypeError, ValueError):
        logger.warning("環境変数の整数変換に失敗しました。value=%s, default=%s", value, default)
        return default


# =============================================================================
# ディレクトリ設定
# =============================================================================

# 同梱フィクスチャ（systems/ models/ experiments/）のルート
DATA_DIR = os.getenv('HFSEM_DATA_DIR', _DATA_DIR)

# mc / simulate などの既定出力先
OUTPUT_DIR = os.getenv('HFSEM_OUTPUT_DIR', os.path.join(_ROOT_DIR, 'results'))

LOG_LEVEL = os.getenv('HFSEM_LOG_LEVEL', 'INFO').upper()

# 0 以下・未設定は全コア
THREADS = _safe_int(os.getenv('HFSEM_THREADS'), None)

FIXTURE_KINDS = ('systems', 'models', 'experiments')

# =============================================================================

FEATURES = {
    "optimizer": {
        "settings": {
            "gtol": 1e-8,
            "max_iter": 2000,
            "c1": 1e-4,
            "max_backtracks": 60,
            "multistart": 0,
            "multistart_spread": 0.5,
        }
    },
    "sparse": {
        "settings": {
            "delta": 0.1,
            "lambda1_rate": -0.6,
            "lambda2": None,  # None のときは 1/delta
            "gamma": 4.0,
            "penalize_positive_lower": False,
            "plsa_tol": 1e-10,
            "plsa_max_sweeps": 10000,
            "delta_warning_band": 0.2,
            "support_from": "lsa",
        }
    },
    "harness": {
        "settings": {
            "alpha": 0.05,
            "failure_ratio": 0.01,
            "chunk_rows": 4096,
        }
    },
    "identifiability": {
        "settings": {
            "rank_rtol": 1e-8,
        }
    },
}


def get_feature_settings(feature: str) -> Dict[str, Any]:
    """
    指定された機能の設定を取得します。

    Args:
        feature (str): 機能名

    Returns:
        Dict[str, Any]: 機能の設定（コピー）
    """
    return dict(FEATURES.get(feature, {}).get('settings', {}))


def get_default_threads() -> int:
    """ワーカー数の既定値（HFSEM_THREADS、未設定なら全コア）"""
    threads = _safe_int(os.getenv('HFSEM_THREADS'), THREADS)
    if threads is None or threads <= 0:
        return os.cpu_count() or 1
    return threads


def _ensure_data_dir() -> None:
    os.makedirs(_DATA_DIR, exist_ok=True)


def _load_runtime_config() -> Dict[str, Any]:
    _ensure_data_dir()
    if not os.path.exists(_RUNTIME_CONFIG_PATH):
        return {}
    try:
        with open(_RUNTIME_CONFIG_PATH, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except json.JSONDecodeError as exc:
        logger.warning("runtime config の読み込みに失敗しました: %s", exc)
        return {}
    except OSError as exc:
        logger.error("runtime config のアクセス時にエラーが発生しました: %s", exc)
        return {}
    if isinstance(payload, dict):
        return payload
    logger.warning("runtime config の形式が不正です。空の設定として扱います。")
    return {}


def _save_runtime_config(data: Dict[str, Any]) -> None:
    _ensure_data_dir()
    with open(_RUNTIME_CONFIG_PATH, "w", encoding="utf-8") as handle:
        json.dump(data, handle, ensure_ascii=False, indent=2)


def get_runtime_section(section: str) -> Dict[str, Any]:
    """設定ファイル (data/config.json) から指定セクションを取得します。"""
    payload = _load_runtime_config()
    value = payload.get(section)
    return dict(value) if isinstance(value, dict) else {}


def set_runtime_section(section: str, values: Dict[str, Any]) -> Dict[str, Any]:
    """設定ファイル (data/config.json) に指定セクションを書き込みます。"""
    if not isinstance(values, dict):
        raise ValueError("values must be a dict")
    payload = _load_runtime_config()
    payload[section] = dict(values)
    _save_runtime_config(payload)
    return dict(values)


def get_effective_settings(feature: str) -> Dict[str, Any]:
    """
    FEATURES の既定値に data/config.json の同名セクションを上書きした設定を返します。
    実験 JSON と CLI フラグはこの上にさらに重ねます。
    """
    settings = get_feature_settings(feature)
    settings.update(get_runtime_section(feature))
    return settings


def resolve_fixture(reference: str, kind: str, base_dir: Optional[str] = None) -> str:
    """
    フィクスチャ参照をファイルパスに解決します。

    参照元ファイルのディレクトリ → DATA_DIR/<kind>/ の順に探し、
    拡張子が無ければ .json を補います。

    Args:
        reference: ファイル名・相対パス・絶対パス
        kind: systems / models / experiments
        base_dir: 参照元ファイルのディレクトリ

    Returns:
        str: 存在するファイルのパス

    Raises:
        FileNotFoundError: どこにも見つからない場合
    """
    if kind not in FIXTURE_KINDS:
        raise ValueError(f"unknown fixture kind: {kind}")
    names = [reference]
    if not os.path.splitext(reference)[1]:
        names.append(reference + '.json')
    candidates = []
    for name in names:
        if os.path.isabs(name):
            candidates.append(name)
            continue
        if base_dir:
            candidates.append(os.path.join(base_dir, name))
        candidates.append(os.path.join(DATA_DIR, kind, name))
        candidates.append(os.path.join(DATA_DIR, kind, os.path.basename(name)))
        candidates.append(os.path.abspath(name))
    for candidate in candidates:
        if os.path.isfile(candidate):
            return candidate
    raise FileNotFoundError(f"フィクスチャが見つかりません: {reference} ({kind})")
