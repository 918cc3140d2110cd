"""
例外クラス定義
hfsem パッケージ内で送出される例外をまとめて定義します。
CLI (main.py) はこの階層を見て終了コードを決めます。
"""

from typing import Optional


class HfsemError(Exception):
    """hfsem の全例外の基底クラス。"""


class DimensionError(HfsemError, ValueError):
    """行列・ベクトルの次元が整合しない場合の例外。"""


class DomainError(HfsemError, ValueError):
    """引数が定義域外（正定値でない、範囲外の確率など）の場合の例外。"""


class NotPositiveDefiniteError(DomainError):
    """Cholesky 分解で正定値と判定できなかった場合の例外。"""


class ModelError(HfsemError, ValueError):
    """構造行列やマスクがモデルとして成り立たない場合の例外（Ψ の特異など）。"""


class ConsistencyError(HfsemError, ValueError):
    """固定値やスロット共有の不整合を表す例外。"""

    def __init__(self, message: str, entries: Optional[list] = None):
        super().__init__(message)
        self.entries = list(entries or [])


class SimulationError(HfsemError, ValueError):
    """シミュレーション中にドリフトが有限値を返さなかった場合の例外。"""

    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step={step})")
        self.step = step


class DataError(HfsemError, ValueError):
    """観測データに非有限値や不正な時刻列が含まれる場合の例外。"""

    def __init__(self, message: str, row: Optional[int] = None):
        text = message if row is None else f"{message} (row={row})"
        super().__init__(text)
        self.row = row


class TestUndefinedError(HfsemError, ValueError):
    """自由度が 0 以下で検定が定義できない場合の例外。"""

    __test__ = False  # unittest/pytest の収集対象外


class ConfigError(HfsemError, ValueError):
    """設定ファイル（JSON）の読み込み・解釈に失敗した場合の例外。"""


class HarnessError(HfsemError):
    """モンテカルロ実験の失敗率が許容値を超えた場合の例外。"""

    def __init__(self, message: str, failures: Optional[list] = None):
        super().__init__(message)
        self.failures = list(failures or [])
