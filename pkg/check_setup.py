"""
環境セットアップの検証スクリプト
依存パッケージとフィクスチャが揃っているかをチェックします。
"""

import importlib
import os
import sys

REQUIRED_PACKAGES = [
    ('numpy', 'numpy'),
    ('scipy', 'scipy'),
    ('dotenv', 'python-dotenv'),
]

REQUIRED_FIXTURES = {
    'systems': ['small_true.json', 'sparse_true.json'],
    'models': [
        'small_correct.json',
        'small_model_a.json',
        'small_model_b.json',
        'sparse_correct.json',
        'sparse_misspecified.json',
    ],
    'experiments': [
        'small_nonergodic.json',
        'small_ergodic.json',
        'small_ergodic_long.json',
        'sparse_study.json',
    ],
}


def check_file_exists(path, description):
    """ファイルの存在をチェック"""
    exists = os.path.exists(path)
    status = "✅" if exists else "❌"
    print(f"{status} {description}: {path}")
    return exists


def check_package(module_name, display_name):
    """パッケージが import できるかをチェック"""
    try:
        module = importlib.import_module(module_name)
    except ImportError as e:
        print(f"❌ {display_name}: {e}")
        return False
    version = getattr(module, '__version__', '?')
    print(f"✅ {display_name}: {version}")
    return True


def check_fixture_loads(kind, path):
    """フィクスチャが読み込めるかをチェック"""
    from hfsem.errors import HfsemError
    from hfsem.harness import load_experiment
    from hfsem.lisrel_model import load_mask
    from hfsem.sde_sim import load_system

    loader = {'systems': load_system, 'models': load_mask, 'experiments': load_experiment}[kind]
    try:
        loader(path)
    except (HfsemError, OSError, ValueError) as e:
        print(f"   ⚠️  読み込みに失敗しました: {os.path.basename(path)}: {e}")
        return False
    return True


def main():
    print("=" * 60)
    print("hfsem - 環境セットアップチェック")
    print("=" * 60)
    print()

    # プロジェクトルートを取得（環境に依存しない）
    script_dir = os.path.dirname(os.path.abspath(__file__))
    if script_dir not in sys.path:
        sys.path.insert(0, script_dir)

    all_ok = True

    print("📦 依存パッケージ")
    print("-" * 60)
    packages_ok = True
    for module_name, display_name in REQUIRED_PACKAGES:
        if not check_package(module_name, display_name):
            packages_ok = False
    if not packages_ok:
        print("   ⚠️  pip install -r requirements.txt を実行してください")
        all_ok = False
    print()

    print("📋 環境変数ファイル (オプション)")
    print("-" * 60)
    env_path = os.path.join(script_dir, '.env')
    if not check_file_exists(env_path, '.env ファイル'):
        print("   💡 HFSEM_DATA_DIR などを変更しない場合は不要です")
    print()

    print("📁 フィクスチャ")
    print("-" * 60)
    data_dir = os.environ.get('HFSEM_DATA_DIR') or os.path.join(script_dir, 'data')
    missing = []
    for kind, names in REQUIRED_FIXTURES.items():
        for name in names:
            path = os.path.join(data_dir, kind, name)
            if not check_file_exists(path, f'{kind}/{name}'):
                missing.append(f'{kind}/{name}')
            elif packages_ok and not check_fixture_loads(kind, path):
                all_ok = False
    if missing:
        print()
        print("   ⚠️  不足しているフィクスチャ:")
        for name in missing:
            print(f"      - {name}")
        print("   📖 詳細は data/README.md を参照してください")
        all_ok = False

    print()
    print("=" * 60)

    if all_ok:
        print("✅ すべての必須ファイルが揃っています！")
        print("   python main.py mc --config small_nonergodic で実験を開始できます。")
    else:
        print("⚠️  いくつかの必須ファイルが不足しています。")
        print("   上記のメッセージを確認して、必要なファイルを設定してください。")

    print("=" * 60)
    return all_ok


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
