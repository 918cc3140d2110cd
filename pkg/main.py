"""
コマンドラインのエントリポイント
simulate / estimate / gof / sparse / mc の各サブコマンドを提供します。

終了コード: 0 正常, 2 使い方の誤り, 3 設定の誤り, 4 実行時エラー
"""
import os

# ワーカープロセスごとの BLAS スレッドを 1 に固定（numpy の読み込み前に設定する）
for _name in ('OPENBLAS_NUM_THREADS', 'OMP_NUM_THREADS', 'MKL_NUM_THREADS'):
    os.environ.setdefault(_name, '1')

import argparse
import json
import logging
import sys
import traceback
from typing import Any, Dict, List, Optional

import numpy as np

import config
import utils
from hfsem import __version__
from hfsem.errors import ConfigError, HarnessError, HfsemError
from hfsem.harness import emit_tables, load_experiment, run_experiment
from hfsem.inference import gof_test, likelihood_ratio, penalized_gof_test
from hfsem.lisrel_model import check_local_identifiability, mask_from_dict
from hfsem.qmle import fit
from hfsem.realized_cov import realized_cov
from hfsem.sde_sim import SamplingGrid, load_system, read_path_csv, simulate_observations, write_path_csv
from hfsem.sparse_sem import PenaltyConfig, sparse_pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4

DEFAULT_N = 10000
DEFAULT_H = 1e-3
DEFAULT_SEED = 0


def setup_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.LOG_LEVEL, logging.INFO)
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        force=True,
    )


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"整数ではありません: {text}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"1 以上が必要です: {text}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"整数ではありません: {text}")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"シードは 0 以上 2^64 未満です: {text}")
    return value


def _probability(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"実数ではありません: {text}")
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"(0, 1) の範囲が必要です: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='設定 JSON（simulate: 真のモデル, estimate/gof/sparse: モデル, mc: 実験）')
    common.add_argument('--seed', type=_seed, help='基底シード')
    common.add_argument('--reps', type=_positive_int, help='反復数（mc）')
    common.add_argument('--out', help='出力先（ファイルまたはディレクトリ）')
    common.add_argument('--alpha', type=_probability, help='有意水準（既定 0.05）')
    common.add_argument('--threads', type=_positive_int, help='ワーカープロセス数（既定: 全コア）')
    common.add_argument('--verbose', '-v', action='store_true', help='DEBUG ログを出力')

    parser = argparse.ArgumentParser(prog='hfsem', description='高頻度データの潜在因子 SEM')
    parser.add_argument('--version', action='version', version=f'hfsem {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', parents=[common], help='1 本の経路を生成して CSV に書き出す')
    simulate.add_argument('--n', type=_positive_int, default=DEFAULT_N, help='増分の数')
    simulate.add_argument('--h', type=float, default=DEFAULT_H, help='刻み幅')
    simulate.add_argument('--rep', type=int, default=0, help='反復番号（サブストリーム）')

    for name, text in (
        ('estimate', '経路 CSV とモデルから擬似最尤推定'),
        ('gof', '推定に適合度検定を加える'),
        ('sparse', 'スパース推定と罰則付き検定'),
    ):
        command = sub.add_parser(name, parents=[common], help=text)
        command.add_argument('--path', required=True, help='経路 CSV（t,x1,...,xp）')
        command.add_argument('--multistart', type=int, default=None, help='追加のランダム初期値の数')
        if name == 'sparse':
            command.add_argument('--support-from', choices=('lsa', 'plsa'), default=None, help='活性集合の出所')

    sub.add_parser('mc', parents=[common], help='モンテカルロ実験')
    return parser


class HfsemCli:
    """サブコマンドの実行"""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.optimizer = config.get_effective_settings('optimizer')
        self.harness = config.get_effective_settings('harness')
        self.sparse = config.get_effective_settings('sparse')

    def run(self) -> int:
        handler = getattr(self, f'cmd_{self.args.command}')
        return handler()

    # -- helpers ----------------------------------------------------------

    def _require_config(self) -> str:
        if not self.args.config:
            raise ConfigError(f'{self.args.command} には --config が必要です')
        return self.args.config

    def _alpha(self) -> float:
        return self.args.alpha if self.args.alpha is not None else float(self.harness.get('alpha', 0.05))

    def _fit_options(self) -> Dict[str, Any]:
        multistart = self.args.multistart if self.args.multistart is not None else self.optimizer.get('multistart', 0)
        return {
            'gtol': float(self.optimizer.get('gtol', 1e-8)),
            'max_iter': int(self.optimizer.get('max_iter', 2000)),
            'c1': float(self.optimizer.get('c1', 1e-4)),
            'max_backtracks': int(self.optimizer.get('max_backtracks', 60)),
            'multistart': utils.coerce_int(multistart, 0, minimum=0),
            'spread': float(self.optimizer.get('multistart_spread', 0.5)),
        }

    def _load_model(self):
        path = config.resolve_fixture(self._require_config(), 'models')
        try:
            payload = utils.read_json(path)
        except json.JSONDecodeError as exc:
            raise ConfigError(f'モデル設定の JSON が不正です: {path}: {exc}') from exc
        mask = mask_from_dict(payload, name=os.path.splitext(os.path.basename(path))[0])
        return mask, (payload.get('penalty') if isinstance(payload, dict) else None)

    def _estimate(self):
        mask, penalty = self._load_model()
        sample = read_path_csv(self.args.path)
        q = realized_cov(sample, int(self.harness.get('chunk_rows', 4096)))
        seed = self.args.seed if self.args.seed is not None else DEFAULT_SEED
        rng = np.random.default_rng(seed)
        result = fit(q, mask, rng=rng, **self._fit_options())
        logger.info('推定が終了しました: %s (converged=%s, F=%.6g)', mask.name, result.converged, result.contrast)
        return mask, penalty, q, result

    def _emit(self, payload: Dict[str, Any], default_name: str) -> None:
        out = self.args.out
        if not out:
            print(json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True))
            return
        target = os.path.join(out, default_name) if os.path.isdir(out) or out.endswith(os.sep) else out
        utils.write_json(target, payload)
        logger.info('結果を書き出しました: %s', target)

    # -- commands ---------------------------------------------------------

    def cmd_simulate(self) -> int:
        path = config.resolve_fixture(self._require_config(), 'systems')
        system = load_system(path)
        grid = SamplingGrid(self.args.n, self.args.h)
        seed = self.args.seed if self.args.seed is not None else DEFAULT_SEED
        sample = simulate_observations(system, grid, seed, replication=self.args.rep)
        out = self.args.out or os.path.join(config.OUTPUT_DIR, 'path.csv')
        if os.path.isdir(out) or out.endswith(os.sep):
            out = os.path.join(out, 'path.csv')
        if os.path.dirname(out):
            utils.ensure_dir(os.path.dirname(out))
        write_path_csv(sample, out)
        logger.info('経路を書き出しました: %s (n=%s, h=%s, seed=%s)', out, grid.n, grid.h, seed)
        return EXIT_OK

    def cmd_estimate(self) -> int:
        mask, _, q, result = self._estimate()
        payload = {'fit': result.to_dict()}
        if result.converged:
            payload['identifiability'] = check_local_identifiability(
                mask, result.theta_hat, float(config.get_effective_settings('identifiability').get('rank_rtol', 1e-8))
            ).to_dict()
        self._emit(payload, 'fit.json')
        return EXIT_OK if result.converged else EXIT_RUNTIME

    def cmd_gof(self) -> int:
        mask, _, q, result = self._estimate()
        report = gof_test(q, result, mask, self._alpha())
        payload = {'fit': result.to_dict(), 'test': report.to_dict()}
        if not result.fallback_identity_v:
            payload['likelihood_ratio'] = likelihood_ratio(q, result, mask)
        logger.info('T_n=%.6g, df=%s, reject=%s', report.statistic, report.df, report.reject)
        self._emit(payload, 'gof.json')
        return EXIT_OK

    def cmd_sparse(self) -> int:
        mask, penalty_payload, q, result = self._estimate()
        penalty = PenaltyConfig.from_dict(penalty_payload, q.n, defaults=self.sparse)
        options = self._fit_options()
        options.pop('multistart')
        options.pop('spread')
        sparse = sparse_pipeline(
            q,
            mask,
            penalty,
            initial_fit=result,
            support_from=self.args.support_from or str(self.sparse.get('support_from', 'lsa')),
            plsa_tol=float(self.sparse.get('plsa_tol', 1e-10)),
            plsa_max_sweeps=int(self.sparse.get('plsa_max_sweeps', 10000)),
            delta_warning_band=float(self.sparse.get('delta_warning_band', 0.2)),
            **options,
        )
        alpha = self._alpha()
        payload = {
            'fit': result.to_dict(),
            'test': gof_test(q, result, mask, alpha).to_dict(),
            'sparse': sparse.to_dict(),
            'penalized_test': penalized_gof_test(q, sparse.po_fit, len(sparse.active_set), mask, alpha).to_dict(),
        }
        self._emit(payload, 'sparse.json')
        return EXIT_OK

    def cmd_mc(self) -> int:
        overrides = {
            'replications': self.args.reps,
            'seed': self.args.seed,
            'alpha': self.args.alpha,
            'outputs': self.args.out,
        }
        cfg = load_experiment(self._require_config(), overrides)
        report = run_experiment(cfg, threads=self.args.threads)
        emit_tables(report)
        return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    setup_logging(args.verbose)

    try:
        return HfsemCli(args).run()
    except FileNotFoundError as exc:
        logger.error('ファイルが見つかりません: %s', exc)
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        logger.error('JSON の形式が不正です: %s', exc)
        return EXIT_CONFIG
    except ConfigError as exc:
        logger.error('設定エラー: %s', exc)
        return EXIT_CONFIG
    except HarnessError as exc:
        logger.error('実験を中止しました: %s', exc)
        for failure in exc.failures[:20]:
            logger.error('  失敗: %s', failure)
        return EXIT_RUNTIME
    except (HfsemError, OSError) as exc:
        logger.error('実行時エラー: %s', exc)
        logger.debug(traceback.format_exc())
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.info('停止要求を受信しました (Ctrl+C). 終了します。')
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
