"""ロギング設定モジュール"""

import logging

from rich.console import Console
from rich.logging import RichHandler

from .config import Settings

# グローバル設定の読み込み
settings = Settings()

# 標準出力はレポート専用なのでログは標準エラーへ
console = Console(stderr=True)

# ロガーの設定
logger = logging.getLogger("integral_stopping")
logger.setLevel(getattr(logging, settings.log_level.upper(), logging.INFO))

# Rich ハンドラーの追加（まだ追加されていない場合のみ）
if not logger.handlers:
    rich_handler = RichHandler(
        console=console,
        show_time=True,
        show_path=False,
        rich_tracebacks=True,
    )
    rich_handler.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(rich_handler)


def set_level(level: str) -> None:
    """パッケージロガーのレベルを変更する

    Args:
        level: ログレベル名 (DEBUG, INFO など)
    """
    logger.setLevel(getattr(logging, level.upper(), logging.INFO))
