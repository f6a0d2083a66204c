"""スケール関数によるドリフト除去モジュール"""

import math
from dataclasses import replace
from typing import Tuple

import numpy as np

from .config import Settings
from .errors import CoefficientError, IntegrabilityError
from .funcmodel import (
    ComposedFunction,
    CoordinateMap,
    Direction,
    IdentityMap,
    NumericAntiderivative,
    PiecewiseFunction,
    PointwiseFunction,
    ProblemSpec,
    RealFunction,
    find_monotone_root,
    ratio,
)
from .logging_cfg import logger
from .solver import (
    NoOptimum,
    OneSidedLeft,
    OneSidedRight,
    Solution,
    TwoSided,
    ValueCurve,
)

settings = Settings()


class ScaleTransform(CoordinateMap):
    """スケール関数 p(x) = int_c0^x exp(-int_c0^y 2b/sigma^2) dy

    p はノードと区間ごとの求積でキャッシュし、逆写像はノード上の
    補間を初期値にしたニュートン法で求める。
    """

    def __init__(self, b: RealFunction, sigma: RealFunction, c0: float) -> None:
        self.c0 = float(c0)
        self.drift_ratio = ratio(b, sigma, 2.0)
        self.inner = self.drift_ratio.antiderivative(self.c0)
        self.pderiv = PointwiseFunction(lambda x, v: np.exp(-v), (self.inner,), label="p'")
        self.scale = NumericAntiderivative(self.pderiv, self.c0)
        self.domain = self.pderiv.domain
        left = self.pderiv.improper_integral(self.c0, Direction.LEFT)
        right = self.pderiv.improper_integral(self.c0, Direction.RIGHT)
        self.Jt: Tuple[float, float] = (-left.value, right.value)
        logger.debug(f"Scale function anchored at c0={self.c0}: image {self.Jt}")

    @property
    def image(self) -> Tuple[float, float]:
        return self.Jt

    def p(self, x: np.ndarray) -> np.ndarray:
        return self.scale(x)

    def dp(self, x: np.ndarray) -> np.ndarray:
        return self.pderiv(x)

    def d2p(self, x: np.ndarray) -> np.ndarray:
        return -self.drift_ratio(x) * self.pderiv(x)

    def inverse(self, y: float) -> float:
        lo, hi = self.Jt
        if y <= lo:
            return self.domain[0]
        if y >= hi:
            return self.domain[1]
        if y == 0.0:
            return self.c0
        direction = Direction.RIGHT if y > 0.0 else Direction.LEFT
        end = self.domain[1] if y > 0.0 else self.domain[0]
        return find_monotone_root(
            lambda x: float(self.scale(np.asarray(x))),
            y,
            self.c0,
            direction,
            end,
        )

    def inverse_many(self, y: np.ndarray) -> np.ndarray:
        ys = np.asarray(y, dtype=float)
        flat = np.atleast_1d(ys).ravel()
        values = self.scale.values
        inside = (flat > values[0]) & (flat < values[-1])
        out = np.empty_like(flat)
        if np.any(inside):
            target = flat[inside]
            x = self.scale.inverse_guess(target)
            for _ in range(6):
                x = x - (self.scale(x) - target) / self.pderiv(x)
                x = np.clip(x, self.scale.nodes[0], self.scale.nodes[-1])
            resid = np.abs(self.scale(x) - target)
            bad = resid > 1e-12 * (1.0 + np.abs(target))
            for k in np.flatnonzero(bad):
                x[k] = self.inverse(float(target[k]))
            out[inside] = x
        for k in np.flatnonzero(~inside):
            out[k] = self.inverse(float(flat[k]))
        return out.reshape(ys.shape)

    def weighted(self, base: RealFunction) -> RealFunction:
        return PointwiseFunction(
            lambda x, v, d: v * d, (base, self.pderiv), label=f"{base.label} p'"
        )


def build_scale(b: RealFunction, sigma: RealFunction, c0: float) -> ScaleTransform:
    """
    スケール関数を構築する

    Args:
        b: ドリフト
        sigma: 拡散係数
        c0: 基準点 (p(c0) = 0)

    Returns:
        ScaleTransform
    """
    try:
        return ScaleTransform(b, sigma, c0)
    except IntegrabilityError as e:
        raise CoefficientError(f"b/sigma^2 is not locally integrable: {e.message}") from e


def transform_problem(spec: ProblemSpec) -> Tuple[ProblemSpec, CoordinateMap]:
    """
    問題を自然尺度 (ドリフトなし) へ変換する

    Args:
        spec: 元の問題

    Returns:
        (変換後の問題, 座標変換)
    """
    spec = spec.with_template()
    if spec.is_driftless:
        return spec, IdentityMap(spec.interval)

    assert spec.template is not None
    c0 = 0.5 * (spec.template.x1r + spec.template.x2l)
    transform = build_scale(spec.b, spec.sigma, c0)
    sigma_x = PointwiseFunction(
        lambda x, d, s: d * s, (transform.pderiv, spec.sigma), label="p' sigma"
    )
    lo, hi = transform.image
    natural = ProblemSpec(
        b=PiecewiseFunction.zero(lo, hi),
        sigma=ComposedFunction(sigma_x, transform, label="sigma~"),
        f=ComposedFunction(spec.f, transform, label="f~"),
        lam=spec.lam,
        interval=(lo, hi),
        template=spec.template.map(lambda x: float(transform.p(np.asarray(x)))),
        name=f"{spec.name} (natural scale)",
        exact=False,
        notes=spec.notes
        + ("natural-scale coefficients carry quadrature-based antiderivatives",),
    )
    logger.info(f"Transformed '{spec.name}' to natural scale on ({lo:.6g}, {hi:.6g})")
    return natural, transform


class PulledBackCurve(ValueCurve):
    """自然尺度の価値関数を元の座標へ戻したもの V(x) = V~(p(x))"""

    def __init__(self, inner: ValueCurve, cmap: CoordinateMap) -> None:
        self.inner = inner
        self.cmap = cmap
        self.lo = cmap.inverse(inner.lo) if math.isfinite(inner.lo) else -math.inf
        self.hi = cmap.inverse(inner.hi) if math.isfinite(inner.hi) else math.inf

    def values(self, x: np.ndarray) -> np.ndarray:
        return self.inner.values(self.cmap.p(x))

    def derivatives(self, x: np.ndarray) -> np.ndarray:
        return self.inner.derivatives(self.cmap.p(x)) * self.cmap.dp(x)

    def second_derivatives(self, x: np.ndarray) -> np.ndarray:
        y = self.cmap.p(x)
        dp = self.cmap.dp(x)
        return self.inner.second_derivatives(y) * dp * dp + self.inner.derivatives(
            y
        ) * self.cmap.d2p(x)


def pull_back(solution: Solution, cmap: CoordinateMap) -> Solution:
    """
    自然尺度の解を元の座標に戻す

    Args:
        solution: 自然尺度で求めた解
        cmap: transform_problem が返した座標変換

    Returns:
        同じ種類の解 (境界は p^-1 で写す)
    """
    if isinstance(cmap, IdentityMap):
        return solution
    if isinstance(solution, TwoSided):
        return replace(
            solution,
            x1s=cmap.inverse(solution.x1s),
            x2s=cmap.inverse(solution.x2s),
            value=PulledBackCurve(solution.value, cmap),
        )
    if isinstance(solution, OneSidedLeft):
        return replace(
            solution,
            alpha=cmap.inverse(solution.alpha),
            value=PulledBackCurve(solution.value, cmap),
        )
    if isinstance(solution, OneSidedRight):
        return replace(
            solution,
            beta=cmap.inverse(solution.beta),
            value=PulledBackCurve(solution.value, cmap),
        )
    assert isinstance(solution, NoOptimum)
    if solution.value is None:
        return solution
    return replace(solution, value=PulledBackCurve(solution.value, cmap))
