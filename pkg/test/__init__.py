"""
テストパッケージ
このパッケージは、hfsem と CLI のユニットテストを提供します。
"""
