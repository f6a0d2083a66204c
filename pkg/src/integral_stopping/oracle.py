"""グリーン関数による退出ルールの期待利得オラクル"""

import math
from typing import List, Optional

import numpy as np

from .config import Settings
from .errors import DomainError, NonConvergentError, PreconditionError
from .funcmodel import (
    Direction,
    PointwiseFunction,
    ProblemSpec,
    RealFunction,
    quad_cell,
    ratio,
)
from .logging_cfg import logger

settings = Settings()


def green_kernel(a: float, b: float, x: float, y: float) -> float:
    """
    区間 (a, b) 上の連続局所マルチンゲールのグリーン関数

    Args:
        a: 左端
        b: 右端
        x: 出発点
        y: 滞在点

    Returns:
        2 (min(x,y) - a)(b - max(x,y)) / (b - a)
    """
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise DomainError(f"green kernel needs finite a < b, got ({a}, {b})")
    for name, v in (("x", x), ("y", y)):
        if not a <= v <= b:
            raise DomainError(f"{name}={v} outside [{a}, {b}]")
    return 2.0 * (min(x, y) - a) * (b - max(x, y)) / (b - a)


def _check_driftless(spec: ProblemSpec) -> None:
    if not spec.is_driftless:
        raise PreconditionError("Green oracle needs a driftless problem", "b = 0")
    if spec.lam != 0.0:
        raise PreconditionError("Green oracle needs an undiscounted problem", "lambda = 0")


def _occupation_integral(weight: RealFunction, a: float, b: float, x: float) -> float:
    total = 0.0
    for u, v in weight.cells(a, b):
        pieces = [(u, x), (x, v)] if u < x < v else [(u, v)]
        for lo, hi in pieces:
            w = weight.cell(lo, hi)

            def integrand(y: np.ndarray, w=w) -> np.ndarray:
                kernel = 2.0 * (np.minimum(x, y) - a) * (b - np.maximum(x, y)) / (b - a)
                return kernel * w(y)

            total += quad_cell(integrand, lo, hi)
    return total


def green_value(spec: ProblemSpec, a: float, b: float, x: float) -> float:
    """
    E_x int_0^T f(X_s) ds を占有密度の公式で求める (T は (a, b) からの退出時刻)

    Args:
        spec: ドリフトなし・割引なしの問題
        a: 左の停止境界
        b: 右の停止境界
        x: 出発点

    Returns:
        int_a^b G(a, b, x, y) f(y)/sigma(y)^2 dy
    """
    _check_driftless(spec)
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise DomainError(f"green_value needs finite a < b, got ({a}, {b})")
    if not a <= x <= b:
        raise DomainError(f"x={x} outside [{a}, {b}]")
    if x == a or x == b:
        return 0.0
    return _occupation_integral(ratio(spec.f, spec.sigma, 1.0), a, b, x)


def expected_exit_time(spec: ProblemSpec, a: float, b: float, x: float) -> float:
    """E_x T_{a,b} (利得 1 に対するグリーン関数の質量)"""
    _check_driftless(spec)
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise DomainError(f"expected_exit_time needs finite a < b, got ({a}, {b})")
    if not a <= x <= b:
        raise DomainError(f"x={x} outside [{a}, {b}]")
    if x == a or x == b:
        return 0.0
    speed = PointwiseFunction(lambda y, s: 1.0 / (s * s), (spec.sigma,), label="1/sigma^2")
    return _occupation_integral(speed, a, b, x)


def _co_boundaries(x: float, boundary: float, end: float, count: int) -> List[float]:
    """x の反対側へ広がる共境界の列"""
    if math.isfinite(end):
        return [end - (end - x) * 2.0 ** (-(n + 1)) for n in range(count)]
    sign = 1.0 if end > x else -1.0
    width = max(1.0, abs(x - boundary))
    return [x + sign * width * 2.0**n for n in range(count)]


def green_value_one_sided(
    spec: ProblemSpec,
    side: Direction,
    boundary: float,
    x: float,
    tol: Optional[float] = None,
    max_expansions: Optional[int] = None,
) -> float:
    """
    片側ルールの期待利得を共境界を広げた極限で求める

    Args:
        spec: ドリフトなし・割引なしの問題
        side: LEFT なら boundary を下回ったら停止、RIGHT なら上回ったら停止
        boundary: 停止境界
        x: 出発点
        tol: 連続する 2 回の差の許容誤差
        max_expansions: 拡大回数の上限

    Returns:
        極限値
    """
    _check_driftless(spec)
    tol = tol if tol is not None else settings.oracle_tol
    max_expansions = (
        max_expansions if max_expansions is not None else settings.oracle_max_expansions
    )
    lo, hi = spec.interval
    if side is Direction.LEFT and not boundary < x < hi:
        raise DomainError(f"left rule needs {boundary} < x < {hi}, got x={x}")
    if side is Direction.RIGHT and not lo < x < boundary:
        raise DomainError(f"right rule needs {lo} < x < {boundary}, got x={x}")

    end = hi if side is Direction.LEFT else lo
    values: List[float] = []
    quiet = 0
    for c in _co_boundaries(x, boundary, end, max_expansions):
        a, b = (boundary, c) if side is Direction.LEFT else (c, boundary)
        values.append(green_value(spec, a, b, x))
        if len(values) >= 2 and abs(values[-1] - values[-2]) <= tol:
            quiet += 1
            if quiet >= 2:
                logger.debug(
                    f"One-sided oracle settled after {len(values)} expansions: {values[-1]:.10g}"
                )
                return values[-1]
        else:
            quiet = 0
        if not abs(values[-1]) < settings.blowup:
            break
    last = values[-1] if values else math.nan
    raise NonConvergentError(
        f"one-sided oracle at x={x} did not settle after {len(values)} expansions "
        f"(last value {last:.6g})"
    )
