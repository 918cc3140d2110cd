"""
共通ユーティリティ関数
CLI・ハーネス・テストで使用される値の正規化と CSV/JSON 出力を提供します。
"""

import csv
import json
import logging
import math
import os
from typing import Any, Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".17g"


def coerce_bool(value: Any, fallback: bool) -> bool:
    """
    値をブール値に変換します。

    Args:
        value: 変換する値
        fallback: 変換に失敗した場合のデフォルト値

    Returns:
        bool: 変換されたブール値
    """
    if isinstance(value, bool):
        return value
    if value is None:
        return fallback
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in {"true", "1", "yes", "on"}:
            return True
        if lowered in {"false", "0", "no", "off"}:
            return False
        return fallback
    try:
        return bool(value)
    except Exception:
        return fallback


def coerce_int(value: Any, fallback: int, *, minimum: Optional[int] = None, maximum: Optional[int] = None) -> int:
    """
    値を整数に変換し、範囲内に制限します。

    Args:
        value: 変換する値
        fallback: 変換に失敗した場合のデフォルト値
        minimum: 最小値（Noneの場合は制限なし）
        maximum: 最大値（Noneの場合は制限なし）

    Returns:
        int: 変換・制限された整数値
    """
    try:
        if value is None or isinstance(value, bool):
            raise TypeError
        number = int(value)
    except (TypeError, ValueError):
        number = fallback

    if minimum is not None:
        number = max(minimum, number)
    if maximum is not None:
        number = min(maximum, number)

    return number


def coerce_float(value: Any, fallback: float, *, minimum: Optional[float] = None, maximum: Optional[float] = None) -> float:
    """
    値を有限の実数に変換し、範囲内に制限します。NaN・無限大は fallback。
    """
    try:
        if value is None or isinstance(value, bool):
            raise TypeError
        number = float(value)
        if not math.isfinite(number):
            raise ValueError
    except (TypeError, ValueError):
        number = fallback

    if minimum is not None:
        number = max(minimum, number)
    if maximum is not None:
        number = min(maximum, number)

    return number


def format_float(value: Any) -> str:
    """実数を有効数字 17 桁（往復で同じ値に戻る表現）で文字列化します。"""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if value is None:
        return ""
    return format(float(value), FLOAT_FORMAT)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """
    CSV（RFC 4180、小数点は '.'、実数は 17 桁）を書き出します。

    Returns:
        int: 書き出したデータ行数
    """
    directory = os.path.dirname(path)
    if directory:
        ensure_dir(directory)
    count = 0
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\r\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([value if isinstance(value, str) else format_float(value) for value in row])
            count += 1
    logger.debug("CSV を書き出しました: %s (%s 行)", path, count)
    return count


def write_json(path: str, payload: Any) -> None:
    """JSON をキー順に整形して書き出します。"""
    directory = os.path.dirname(path)
    if directory:
        ensure_dir(directory)
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=False, indent=2, sort_keys=True, allow_nan=False)
        handle.write("\n")


def read_json(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as handle:
        return json.load(handle)
