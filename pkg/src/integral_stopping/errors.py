"""例外定義モジュール"""

from typing import Any, Optional


class StoppingError(Exception):
    """パッケージ共通の基底例外

    exit_code は CLI の終了コードに対応する。
    """

    exit_code = 2

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class DomainError(StoppingError):
    """状態区間の外での評価"""


class IntegrabilityError(StoppingError):
    """非可積分な特異性"""


class ExtendedArithmeticError(StoppingError):
    """拡張実数の不定形 (inf - inf など)"""


class ShapeError(StoppingError):
    """利得関数 f の符号パターンが想定の形でない"""

    exit_code = 4


class CoefficientError(StoppingError):
    """係数 (b, sigma, f) の構造条件違反"""

    exit_code = 4

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report


class FormError(StoppingError):
    """区間関数形のパラメータ不正"""

    exit_code = 4


class ProblemFileError(StoppingError):
    """問題ファイルの解析エラー"""

    exit_code = 4

    def __init__(
        self,
        message: str,
        function: Optional[str] = None,
        segment: Optional[int] = None,
        field: Optional[str] = None,
    ) -> None:
        location = ".".join(
            part
            for part in (
                function,
                f"segments[{segment}]" if segment is not None else None,
                field,
            )
            if part
        )
        super().__init__(f"{location}: {message}" if location else message)
        self.function = function
        self.segment = segment
        self.field = field


class RootDomainError(StoppingError):
    """根探索の前提となる不等式が成り立たない"""

    def __init__(self, message: str, inequality: str) -> None:
        super().__init__(f"{message} (failed: {inequality})")
        self.inequality = inequality


class BracketError(StoppingError):
    """符号変化を含むブラケットが見つからない"""


class NotSolvableError(StoppingError):
    """分類結果が要求された解法と一致しない"""


class PreconditionError(StoppingError):
    """前提となる仮定が成り立たない"""

    def __init__(self, message: str, hypothesis: str) -> None:
        super().__init__(f"{message} (hypothesis: {hypothesis})")
        self.hypothesis = hypothesis


class NonConvergentError(StoppingError):
    """反復計算が収束しない"""


class ValidationFailedError(StoppingError):
    """候補解が検証に失敗した"""

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report


class NoSolutionError(StoppingError):
    """解が存在しないという結論 (エラーではなく情報としての結果)"""

    exit_code = 3


class NoRootError(NoSolutionError):
    """シューティング走査で符号変化が見つからない"""

    def __init__(self, message: str, scan: Any = None) -> None:
        super().__init__(message)
        self.scan = scan


class NoOptimumError(NoSolutionError):
    """最適停止時刻が存在しない"""

    def __init__(self, message: str, report: Any = None) -> None:
        super().__init__(message)
        self.report = report
