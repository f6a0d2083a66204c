"""ドリフトなし・割引なしの問題の厳密解モジュール"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from .config import Settings
from .errors import (
    BracketError,
    DomainError,
    NonConvergentError,
    NotSolvableError,
    PreconditionError,
    RootDomainError,
    ValidationFailedError,
)
from .funcmodel import Direction, ProblemSpec, RealFunction, find_monotone_root
from .htransform import Classification, ClassKind, HTransform, build_h
from .logging_cfg import logger

settings = Settings()

NO_OPTIMUM_MESSAGE = "no optimal stopping time exists"


class ValueCurve(ABC):
    """価値関数の共通インターフェース (台 [lo, hi] の外では 0)"""

    lo: float
    hi: float

    @abstractmethod
    def values(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def derivatives(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def second_derivatives(self, x: np.ndarray) -> np.ndarray: ...

    def value(self, x: float) -> float:
        return float(self.values(np.asarray(x, dtype=float)))

    def derivative(self, x: float) -> float:
        return float(self.derivatives(np.asarray(x, dtype=float)))

    def second_derivative(self, x: float) -> float:
        return float(self.second_derivatives(np.asarray(x, dtype=float)))

    def _support_mask(self, xs: np.ndarray) -> np.ndarray:
        return (xs >= self.lo) & (xs <= self.hi)


class ValueFunction(ValueCurve):
    """V(x) = int H(y, c) dy を台の端から測った価値関数

    anchor が LEFT なら lo から、RIGHT なら hi から積分する
    (RIGHT のとき V(x) = -int_x^hi H(y, c) dy)。端が無限なら広義積分。
    """

    def __init__(
        self,
        transform: HTransform,
        level: float,
        lo: float,
        hi: float,
        anchor: Direction = Direction.LEFT,
    ) -> None:
        self.transform = transform
        self.level = float(level)
        self.lo = float(lo)
        self.hi = float(hi)
        self.anchor = anchor

    @cached_property
    def _shifted(self) -> RealFunction:
        return self.transform.h.shifted(-self.level)

    @cached_property
    def _primitive(self) -> Tuple[RealFunction, float]:
        end = self.lo if self.anchor is Direction.LEFT else self.hi
        if math.isfinite(end):
            return self._shifted.antiderivative(end), 0.0
        ref = self.transform.anchor
        tail = self._shifted.improper_integral(ref, self.anchor).value
        offset = tail if self.anchor is Direction.LEFT else -tail
        if not math.isfinite(offset):
            raise DomainError(f"value function diverges: tail area {offset}")
        return self._shifted.antiderivative(ref), offset

    def values(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        out = np.zeros_like(xs)
        mask = self._support_mask(xs)
        if np.any(mask):
            primitive, offset = self._primitive
            out[mask] = primitive(xs[mask]) + offset
        return out

    def derivatives(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        out = np.zeros_like(xs)
        mask = self._support_mask(xs)
        if np.any(mask):
            out[mask] = self.transform.H(xs[mask], self.level)
        return out

    def second_derivatives(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        out = np.zeros_like(xs)
        mask = (xs > self.lo) & (xs < self.hi)
        if np.any(mask):
            out[mask] = self.transform.g(xs[mask])
        return out


@dataclass(frozen=True)
class TwoSided:
    """二つの境界をもつ最適停止 (区間 (x1s, x2s) からの初めての退出)"""

    x1s: float
    x2s: float
    value: ValueCurve
    cstar: Optional[float] = None
    classification: Optional[Classification] = None
    validation: Any = None
    notes: Tuple[str, ...] = ()
    kind: str = field(default="TwoSided", init=False)


@dataclass(frozen=True)
class OneSidedLeft:
    """alpha を下回った時点で停止"""

    alpha: float
    value: ValueCurve
    classification: Optional[Classification] = None
    notes: Tuple[str, ...] = ()
    kind: str = field(default="OneSidedLeft", init=False)


@dataclass(frozen=True)
class OneSidedRight:
    """beta を上回った時点で停止"""

    beta: float
    value: ValueCurve
    classification: Optional[Classification] = None
    notes: Tuple[str, ...] = ()
    kind: str = field(default="OneSidedRight", init=False)


@dataclass(frozen=True)
class NoOptimum:
    """最適停止時刻が存在しない (value が None なら価値は無限大)"""

    value: Optional[ValueCurve]
    classification: Classification
    plan: Optional["SequencePlan"] = None
    message: str = NO_OPTIMUM_MESSAGE
    notes: Tuple[str, ...] = ()
    kind: str = field(default="NoOptimum", init=False)


Solution = Union[TwoSided, OneSidedLeft, OneSidedRight, NoOptimum]


def find_cstar(H: HTransform) -> Tuple[float, float, float]:
    """
    S(c*) = 0 となる c* と対応する根を求める

    Args:
        H: h 変換

    Returns:
        (c*, alpha_{c*}, beta_{c*})
    """
    classification = H.classify()
    if classification.kind is not ClassKind.SOLVABLE:
        raise NotSolvableError(
            f"c* needs a solvable problem, classified as {classification.kind.value}"
        )
    m1, m2 = H.m1, H.m2

    def area(c: float) -> float:
        return H.smoothfit_area(c)

    grid = m1 + (m2 - m1) * np.arange(1, 65) / 65.0
    values = []
    for c in grid:
        try:
            values.append(area(float(c)))
        except RootDomainError:
            values.append(math.nan)
    bracket: Optional[Tuple[float, float]] = None
    for k in range(len(grid) - 1):
        s0, s1 = values[k], values[k + 1]
        if s0 == 0.0:
            bracket = (float(grid[k]), float(grid[k]))
            break
        if s0 > 0.0 > s1:
            bracket = (float(grid[k]), float(grid[k + 1]))
            break

    if bracket is None:
        finite = [v for v in values if math.isfinite(v)]
        if finite and all(v < 0.0 for v in finite):
            edge, inner = m1, float(grid[0])
        elif finite and all(v > 0.0 for v in finite):
            edge, inner = m2, float(grid[-1])
        else:
            raise BracketError("smooth-fit area has no sign change on (m1, m2)")
        outer_value = values[0] if edge == m1 else values[-1]
        for _ in range(60):
            probe = edge + (inner - edge) / 2.0
            s = area(probe)
            if (s > 0.0) != (outer_value > 0.0):
                bracket = (min(probe, inner), max(probe, inner))
                break
            inner = probe
        if bracket is None:
            raise BracketError("smooth-fit area has no sign change near the ends of (m1, m2)")

    lo, hi = bracket
    cstar = lo if lo == hi else float(brentq(area, lo, hi, xtol=settings.root_tol))
    alpha, beta = H.root_alpha(cstar), H.root_beta(cstar)
    logger.info(f"Found c*={cstar:.12g}: boundaries ({alpha:.12g}, {beta:.12g})")
    return cstar, alpha, beta


def build_value_two_sided(
    H: HTransform, cstar: float, alpha: float, beta: float
) -> ValueFunction:
    """二つの境界に対する価値関数 V(x) = int_alpha^x H(y, c*) dy"""
    return ValueFunction(H, cstar, alpha, beta, Direction.LEFT)


def value_case1(
    H: HTransform, classification: Optional[Classification] = None
) -> Optional[ValueFunction]:
    """
    Case1 の価値関数

    Args:
        H: h 変換
        classification: classify の結果 (省略時は再計算)

    Returns:
        K+ と K- がともに有限なら価値関数、そうでなければ None (無限大)
    """
    classification = classification or H.classify()
    if classification.kind is not ClassKind.CASE1:
        raise NotSolvableError(f"value_case1 needs Case1, got {classification.kind.value}")
    k_plus = classification.k_plus if classification.k_plus is not None else math.inf
    k_minus = classification.k_minus if classification.k_minus is not None else math.inf
    if not (math.isfinite(k_plus) and math.isfinite(k_minus)):
        return None
    assert classification.m is not None
    lo, hi = H.domain
    anchor = Direction.LEFT if k_minus <= k_plus else Direction.RIGHT
    return ValueFunction(H, classification.m, lo, hi, anchor)


def value_one_sided(
    H: HTransform, classification: Optional[Classification] = None
) -> Union[OneSidedLeft, OneSidedRight]:
    """Case2 / Case3 の片側最適停止"""
    classification = classification or H.classify()
    lo, hi = H.domain
    if classification.kind is ClassKind.CASE2:
        level = H.h_plus_inf.value
        alpha = H.root_alpha(level)
        return OneSidedLeft(
            alpha=alpha,
            value=ValueFunction(H, level, alpha, hi, Direction.LEFT),
            classification=classification,
        )
    if classification.kind is ClassKind.CASE3:
        level = H.h_minus_inf.value
        beta = H.root_beta(level)
        return OneSidedRight(
            beta=beta,
            value=ValueFunction(H, level, lo, beta, Direction.RIGHT),
            classification=classification,
        )
    raise NotSolvableError(
        f"one-sided solution needs Case2 or Case3, got {classification.kind.value}"
    )


def payoff_two_sided(H: HTransform, a: float, b: float) -> ValueFunction:
    """
    区間 (a, b) からの初めての退出で停止したときの期待利得

    Args:
        H: h 変換
        a: 左端
        b: 右端

    Returns:
        U(x) = int_a^x (h(y) - c) dy, c は U(b) = 0 となる h の平均
    """
    if not (math.isfinite(a) and math.isfinite(b) and a < b):
        raise DomainError(f"exit interval needs finite a < b, got ({a}, {b})")
    level = H.h.integrate(a, b) / (b - a)
    return ValueFunction(H, level, a, b, Direction.LEFT)


class SequenceMode(str, Enum):
    """停止時刻列の作り方"""

    ASYMPTOTIC = "asymptotically-optimal"
    PATHOLOGICAL = "pathological"


@dataclass(frozen=True)
class SequenceTerm:
    n: int
    a: float
    b: float
    c: float


class SequencePlan:
    """Case1 の停止時刻列 T_{a_n, b_n} の生成器

    各項は n から決まり、∫_{a_n}^{b_n} H(y, c_n) dy = 0 を満たす。
    漸近最適モードは K+ >= K- なら左の裾、K+ < K- なら右の裾を基準にする。
    水準は c_n = m ± delta0 2^{-(k0+n-1)} で delta0 <= level_scale <= 1, k0 >= 1 なので
    |c_n - m| <= 2^{-n} <= 1/n。
    """

    def __init__(
        self,
        transform: HTransform,
        classification: Classification,
        mode: SequenceMode,
        level_scale: float = 1.0,
    ) -> None:
        if not 0.0 < level_scale <= 1.0:
            raise DomainError(f"level_scale must lie in (0, 1], got {level_scale}")
        self.transform = transform
        self.level_scale = level_scale
        self.classification = classification
        self.mode = mode
        assert classification.m is not None
        self.m = classification.m
        k_plus = classification.k_plus if classification.k_plus is not None else math.inf
        k_minus = classification.k_minus if classification.k_minus is not None else math.inf
        self.k_plus, self.k_minus = k_plus, k_minus
        self.orientation = Direction.LEFT if k_plus >= k_minus else Direction.RIGHT
        self.notes = (
            "sequence contract: a_n decreasing, b_n increasing, zero-area condition "
            "and the sandwich bound |c_n - m| (z - a_n)",
        )
        self._memo: Dict[int, SequenceTerm] = {}
        if mode is SequenceMode.ASYMPTOTIC:
            self._setup_asymptotic()
        else:
            self._setup_pathological()

    def _setup_asymptotic(self) -> None:
        H, t = self.transform, self.transform.template
        hm, hp = H.h_minus_inf.value, H.h_plus_inf.value
        if self.orientation is Direction.LEFT:
            upper = H.plateau_left
            self.root_mode = H._near(hm, self.m)
            if not self.root_mode:
                upper = min(upper, hm)
            self.delta0 = min((upper - self.m) / 2.0, self.level_scale)
            self.width = max(1.0, t.x2r - t.x1l)
            if not self.root_mode:
                while H.area(t.x1l - self.width, t.x2r, self.m) <= 0.0:
                    self.width *= 2.0
            self.k0 = self._first_k(lambda a, c: H.area(a, t.x2r, c) > 0.0)
        else:
            lower = H.plateau_right
            self.root_mode = H._near(hp, self.m)
            if not self.root_mode:
                lower = max(lower, hp)
            self.delta0 = min((self.m - lower) / 2.0, self.level_scale)
            self.width = max(1.0, t.x2r - t.x1l)
            if not self.root_mode:
                while H.area(t.x1l, t.x2r + self.width, self.m) >= 0.0:
                    self.width *= 2.0
            self.k0 = self._first_k(lambda b, c: H.area(t.x1l, b, c) < 0.0)
        logger.debug(
            f"Asymptotic sequence: orientation={self.orientation.value}, "
            f"root_mode={self.root_mode}, k0={self.k0}, width={self.width}"
        )

    def _first_k(self, ok: Callable[[float, float], bool]) -> int:
        for k in range(1, 200):
            c = self._level(1, k)
            outer = self._outer(1, c)
            if ok(outer, c):
                return k
        raise NonConvergentError("no admissible starting level for the sequence")

    def _level(self, n: int, k0: int) -> float:
        step = self.delta0 * 2.0 ** -(k0 + n - 1)
        return self.m + step if self.orientation is Direction.LEFT else self.m - step

    def _outer(self, n: int, c: float) -> float:
        """基準側の端点 (LEFT なら a_n, RIGHT なら b_n)"""
        H, t = self.transform, self.transform.template
        if self.orientation is Direction.LEFT:
            if self.root_mode:
                return find_monotone_root(
                    H.h.value, c, t.x1l, Direction.LEFT, H.domain[0], bound=settings.blowup
                )
            return t.x1l - self.width - (n - 1) * self.width
        if self.root_mode:
            return find_monotone_root(
                H.h.value, c, t.x2r, Direction.RIGHT, H.domain[1], bound=settings.blowup
            )
        return t.x2r + self.width + (n - 1) * self.width

    def _setup_pathological(self) -> None:
        H = self.transform
        if not H._near(H.h_plus_inf.value, H.h_minus_inf.value):
            raise PreconditionError("pathological sequence unavailable", "h(inf) = h(-inf)")
        if math.isfinite(self.k_plus):
            raise PreconditionError("pathological sequence unavailable", "K+ = inf")
        if not math.isfinite(self.k_minus):
            raise PreconditionError("pathological sequence unavailable", "K- < inf")
        self.delta0 = (H.plateau_left - self.m) / 2.0
        self.orientation = Direction.LEFT
        self.root_mode = True
        self.k0 = 1
        self.width = 1.0

    def term(self, n: int) -> SequenceTerm:
        """n 番目の (a_n, b_n, c_n)"""
        if n < 1:
            raise DomainError(f"sequence index starts at 1, got {n}")
        if n not in self._memo:
            if self.mode is SequenceMode.ASYMPTOTIC:
                self._memo[n] = self._asymptotic_term(n)
            else:
                for j in range(1, n + 1):
                    if j not in self._memo:
                        self._memo[j] = self._pathological_term(j)
        return self._memo[n]

    def terms(self, count: int) -> List[SequenceTerm]:
        return [self.term(n) for n in range(1, count + 1)]

    def _asymptotic_term(self, n: int) -> SequenceTerm:
        H, t = self.transform, self.transform.template
        c = self._level(n, self.k0)
        assert abs(c - self.m) <= 1.0 / n
        outer = self._outer(n, c)
        if self.orientation is Direction.LEFT:
            b = find_monotone_root(
                lambda x: H.area(outer, x, c),
                0.0,
                t.x2r,
                Direction.RIGHT,
                H.domain[1],
                bound=settings.blowup,
            )
            return SequenceTerm(n=n, a=outer, b=b, c=c)
        a = find_monotone_root(
            lambda x: H.area(x, outer, c),
            0.0,
            t.x1l,
            Direction.LEFT,
            H.domain[0],
            bound=settings.blowup,
        )
        return SequenceTerm(n=n, a=a, b=outer, c=c)

    def _pathological_term(self, j: int) -> SequenceTerm:
        H, t = self.transform, self.transform.template
        b = t.x2r + j
        previous = self._memo.get(j - 1)
        delta = self.delta0 if previous is None else (previous.c - self.m) / 2.0
        for _ in range(200):
            c = self.m + delta
            alpha = H.root_alpha(c)
            gamma = H.root_gamma(c)
            gain = H.area(alpha, gamma, c)
            loss = -H.area(gamma, b, c)
            if gain > self.k_minus and loss <= self.k_minus:
                a = find_monotone_root(
                    lambda x: H.area(x, b, c),
                    0.0,
                    alpha,
                    Direction.LEFT,
                    H.domain[0],
                    bound=settings.blowup,
                )
                if previous is None or a < previous.a:
                    logger.debug(f"Pathological term {j}: a={a:.6g}, b={b}, c={c:.12g}")
                    return SequenceTerm(n=j, a=a, b=b, c=c)
            delta /= 2.0
        raise NonConvergentError(f"pathological sequence term {j} not found")

    def payoff(self, n: int) -> ValueFunction:
        """U_n: T_{a_n, b_n} で停止したときの期待利得"""
        term = self.term(n)
        return payoff_two_sided(self.transform, term.a, term.b)

    def zero_area_residual(self, n: int) -> float:
        term = self.term(n)
        return self.transform.area(term.a, term.b, term.c)

    def sandwich_gap(self, n: int, z: float) -> float:
        """|int H(y, c_n) dy - int H(y, m) dy| を基準側の端点から z まで測った差"""
        term = self.term(n)
        span = z - term.a if self.orientation is Direction.LEFT else term.b - z
        return abs(term.c - self.m) * span


def make_sequence(
    H: HTransform,
    mode: SequenceMode = SequenceMode.ASYMPTOTIC,
    classification: Optional[Classification] = None,
    level_scale: float = 1.0,
) -> SequencePlan:
    """
    Case1 の停止時刻列を作る

    Args:
        H: h 変換
        mode: 漸近最適 / 病的
        classification: classify の結果 (省略時は再計算)
        level_scale: 漸近最適モードの水準の初期幅の上限 (0, 1]

    Returns:
        SequencePlan
    """
    classification = classification or H.classify()
    if classification.kind is not ClassKind.CASE1:
        raise PreconditionError(
            f"stopping sequences need Case1, got {classification.kind.value}", "Case1"
        )
    return SequencePlan(H, classification, mode, level_scale)


def solve(spec: ProblemSpec) -> Solution:
    """
    分類に従って解を組み立てる

    Args:
        spec: ドリフトなし・割引なしの問題

    Returns:
        Solution
    """
    if not spec.is_driftless:
        raise PreconditionError("exact solver needs a driftless problem", "b = 0")
    if spec.lam != 0.0:
        raise PreconditionError("exact solver needs an undiscounted problem", "lambda = 0")
    spec = spec.with_template()
    H = build_h(spec.f, spec.sigma, spec.template)
    classification = H.classify()
    notes = () if spec.exact else ("natural-scale quadrature limits exactness to 1e-10",)

    if classification.kind is ClassKind.SOLVABLE:
        from .shooting import validate_solution

        cstar, alpha, beta = find_cstar(H)
        value = build_value_two_sided(H, cstar, alpha, beta)
        report = validate_solution(spec, value, alpha, beta)
        if not report.passed:
            raise ValidationFailedError(
                f"two-sided candidate failed validation: {', '.join(report.reasons)}", report
            )
        return TwoSided(
            x1s=alpha,
            x2s=beta,
            value=value,
            cstar=cstar,
            classification=classification,
            validation=report,
            notes=notes,
        )
    if classification.kind is ClassKind.CASE1:
        value_star = value_case1(H, classification)
        plan = make_sequence(H, SequenceMode.ASYMPTOTIC, classification)
        logger.info(
            f"{NO_OPTIMUM_MESSAGE}; V* is "
            f"{'infinite' if value_star is None else 'finite'}"
        )
        return NoOptimum(
            value=value_star,
            classification=classification,
            plan=plan,
            notes=notes + plan.notes,
        )
    one_sided = value_one_sided(H, classification)
    if notes:
        return replace(one_sided, notes=notes)
    return one_sided
