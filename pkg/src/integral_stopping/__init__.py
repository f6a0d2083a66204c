"""積分汎関数の最適停止ソルバー (一次元拡散過程)"""

__version__ = "0.1.0"
