"""区間上の解析的な関数形（項）モジュール

各項は値・原始関数・無限遠での漸近形を持つ。漸近形は t = |x| に対する
(指数率, べき, 対数べき) の組と係数の対で表し、裾積分の収束判定に使う。
"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import Polynomial
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri

from .config import Settings
from .errors import FormError

settings = Settings()

# (指数率 e, べき p, 対数べき l): t -> exp(e t) t^p log(t)^l
Rate = Tuple[float, float, float]
Asymptotic = List[Tuple[Rate, float]]

CONSTANT_RATE: Rate = (0.0, 0.0, 0.0)
ZERO_COEFF_RTOL = 1e-12
SQRT_2PI = math.sqrt(2.0 * math.pi)


class Term(ABC):
    """区間関数形の基底クラス"""

    @abstractmethod
    def value(self, x: np.ndarray) -> np.ndarray:
        """値を要素ごとに評価する"""

    @abstractmethod
    def antiderivative(self) -> Optional[List["Term"]]:
        """閉形式の原始関数（項のリスト）。閉形式がなければ None"""

    @abstractmethod
    def asymptotics(self, direction: int) -> Asymptotic:
        """direction (+1: 右, -1: 左) 方向の無限遠での漸近形"""

    @abstractmethod
    def scaled(self, k: float) -> "Term":
        """k 倍した項"""

    def is_zero(self) -> bool:
        return False


@dataclass(frozen=True)
class Poly(Term):
    """x0 を中心とする多項式 sum c_k (x - x0)^k"""

    coeffs: Tuple[float, ...]
    x0: float = 0.0

    def value(self, x: np.ndarray) -> np.ndarray:
        u = np.asarray(x, dtype=float) - self.x0
        out = np.zeros_like(u)
        for c in reversed(self.coeffs):
            out = out * u + c
        return out

    def antiderivative(self) -> Optional[List[Term]]:
        lifted = (0.0,) + tuple(c / (k + 1) for k, c in enumerate(self.coeffs))
        return [Poly(lifted, self.x0)]

    def centered(self) -> np.ndarray:
        """原点中心に展開し直した係数"""
        shifted = Polynomial(self.coeffs)(Polynomial([-self.x0, 1.0]))
        return np.asarray(shifted.coef, dtype=float)

    def asymptotics(self, direction: int) -> Asymptotic:
        return [
            ((0.0, float(k), 0.0), float(a) * direction**k)
            for k, a in enumerate(self.centered())
            if a != 0.0
        ]

    def scaled(self, k: float) -> "Poly":
        return Poly(tuple(k * c for c in self.coeffs), self.x0)

    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)

    @property
    def is_constant(self) -> bool:
        return all(c == 0.0 for c in self.coeffs[1:])


@dataclass(frozen=True)
class Exp(Term):
    """c * exp(a (x - x0))"""

    c: float
    a: float
    x0: float = 0.0

    def __post_init__(self) -> None:
        if self.a == 0.0:
            raise FormError("exp rate 'a' must be nonzero")

    def value(self, x: np.ndarray) -> np.ndarray:
        u = np.asarray(x, dtype=float) - self.x0
        return self.c * np.exp(self.a * u)

    def antiderivative(self) -> Optional[List[Term]]:
        return [Exp(self.c / self.a, self.a, self.x0)]

    def asymptotics(self, direction: int) -> Asymptotic:
        if self.c == 0.0:
            return []
        return [((self.a * direction, 0.0, 0.0), self.c * math.exp(-self.a * self.x0))]

    def scaled(self, k: float) -> "Exp":
        return Exp(k * self.c, self.a, self.x0)

    def is_zero(self) -> bool:
        return self.c == 0.0


@dataclass(frozen=True)
class Power(Term):
    """c * |x - x0|^p  (|x - x0| >= 1 の区間でのみ使う)

    side は区間が x0 の右側 (+1) か左側 (-1) か。
    """

    c: float
    p: float
    x0: float = 0.0
    side: int = 1

    def value(self, x: np.ndarray) -> np.ndarray:
        u = np.abs(np.asarray(x, dtype=float) - self.x0)
        return self.c * np.power(u, self.p)

    def antiderivative(self) -> Optional[List[Term]]:
        if self.p == -1.0:
            return [Log(self.side * self.c, self.x0)]
        return [Power(self.side * self.c / (self.p + 1.0), self.p + 1.0, self.x0, self.side)]

    def asymptotics(self, direction: int) -> Asymptotic:
        if self.c == 0.0:
            return []
        return [((0.0, self.p, 0.0), self.c)]

    def scaled(self, k: float) -> "Power":
        return Power(k * self.c, self.p, self.x0, self.side)

    def is_zero(self) -> bool:
        return self.c == 0.0


@dataclass(frozen=True)
class Log(Term):
    """c * log|x - x0|"""

    c: float
    x0: float = 0.0

    def value(self, x: np.ndarray) -> np.ndarray:
        u = np.abs(np.asarray(x, dtype=float) - self.x0)
        return self.c * np.log(u)

    def antiderivative(self) -> Optional[List[Term]]:
        return [XLog(self.c, self.x0), Poly((0.0, -self.c), self.x0)]

    def asymptotics(self, direction: int) -> Asymptotic:
        return [((0.0, 0.0, 1.0), self.c)] if self.c != 0.0 else []

    def scaled(self, k: float) -> "Log":
        return Log(k * self.c, self.x0)

    def is_zero(self) -> bool:
        return self.c == 0.0


@dataclass(frozen=True)
class XLog(Term):
    """c * (x - x0) log|x - x0|"""

    c: float
    x0: float = 0.0

    def value(self, x: np.ndarray) -> np.ndarray:
        u = np.asarray(x, dtype=float) - self.x0
        safe = np.where(u == 0.0, 1.0, np.abs(u))
        return self.c * u * np.log(safe)

    def antiderivative(self) -> Optional[List[Term]]:
        return None

    def asymptotics(self, direction: int) -> Asymptotic:
        if self.c == 0.0:
            return []
        pairs: Asymptotic = [((0.0, 1.0, 1.0), self.c * direction)]
        if self.x0 != 0.0:
            pairs.append(((0.0, 0.0, 1.0), -self.c * self.x0))
        return pairs

    def scaled(self, k: float) -> "XLog":
        return XLog(k * self.c, self.x0)

    def is_zero(self) -> bool:
        return self.c == 0.0


@dataclass(frozen=True)
class NormalCdf(Term):
    """k * Phi(s (x - x0))"""

    k: float
    s: float
    x0: float = 0.0

    def __post_init__(self) -> None:
        if self.s == 0.0:
            raise FormError("normal_cdf scale 's' must be nonzero")

    def value(self, x: np.ndarray) -> np.ndarray:
        u = np.asarray(x, dtype=float) - self.x0
        return self.k * ndtr(self.s * u)

    def antiderivative(self) -> Optional[List[Term]]:
        return [NormalCdfIntegral(self.k, self.s, self.x0)]

    def asymptotics(self, direction: int) -> Asymptotic:
        if self.k == 0.0:
            return []
        if self.s * direction > 0:
            return [(CONSTANT_RATE, self.k), ((-math.inf, 0.0, 0.0), -self.k)]
        return [((-math.inf, 0.0, 0.0), self.k)]

    def scaled(self, k: float) -> "NormalCdf":
        return NormalCdf(k * self.k, self.s, self.x0)

    def is_zero(self) -> bool:
        return self.k == 0.0


@dataclass(frozen=True)
class NormalCdfIntegral(Term):
    """(k / s) * (v Phi(v) + phi(v)),  v = s (x - x0)"""

    k: float
    s: float
    x0: float = 0.0

    def value(self, x: np.ndarray) -> np.ndarray:
        v = self.s * (np.asarray(x, dtype=float) - self.x0)
        return (self.k / self.s) * (v * ndtr(v) + np.exp(-0.5 * v * v) / SQRT_2PI)

    def antiderivative(self) -> Optional[List[Term]]:
        return None

    def asymptotics(self, direction: int) -> Asymptotic:
        if self.k == 0.0:
            return []
        if self.s * direction > 0:
            return [
                ((0.0, 1.0, 0.0), self.k * direction),
                (CONSTANT_RATE, -self.k * self.x0),
                ((-math.inf, 0.0, 0.0), self.k / self.s),
            ]
        return [((-math.inf, 0.0, 0.0), self.k / self.s)]

    def scaled(self, k: float) -> "NormalCdfIntegral":
        return NormalCdfIntegral(k * self.k, self.s, self.x0)

    def is_zero(self) -> bool:
        return self.k == 0.0


def evaluate(terms: Sequence[Term], x: np.ndarray) -> np.ndarray:
    """項の和を評価する"""
    xs = np.asarray(x, dtype=float)
    out = np.zeros_like(xs)
    for term in terms:
        out = out + term.value(xs)
    return out


def antiderivative_terms(terms: Sequence[Term]) -> Optional[List[Term]]:
    """項の和の原始関数。ひとつでも閉形式がなければ None"""
    result: List[Term] = []
    for term in terms:
        anti = term.antiderivative()
        if anti is None:
            return None
        result.extend(anti)
    return result


def leading_behaviour(
    terms: Sequence[Term], direction: int
) -> Optional[Tuple[Rate, float]]:
    """和の漸近形の主要項を返す。恒等的に消える場合は None

    係数の打ち消しは全係数の最大絶対値に対する相対誤差で判定する。
    """
    sums: Dict[Rate, float] = {}
    magnitude = 0.0
    for term in terms:
        for rate, coef in term.asymptotics(direction):
            sums[rate] = sums.get(rate, 0.0) + coef
            magnitude = max(magnitude, abs(coef))
    live = [
        rate for rate, total in sums.items() if abs(total) > ZERO_COEFF_RTOL * magnitude
    ]
    if not live:
        return None
    top = max(live)
    return top, sums[top]


def is_integrable(rate: Rate) -> bool:
    """t -> exp(e t) t^p log(t)^l が無限遠で可積分か"""
    e, p, _ = rate
    return e < 0.0 or (e == 0.0 and p < -1.0)


def limit_at_infinity(terms: Sequence[Term], direction: int) -> float:
    """direction 側の無限遠での極限値（発散する場合は符号付き inf）"""
    lead = leading_behaviour(terms, direction)
    if lead is None:
        return 0.0
    rate, coef = lead
    if rate > CONSTANT_RATE:
        return math.copysign(math.inf, coef)
    if rate == CONSTANT_RATE:
        return coef
    return 0.0


def tail_integral(terms: Sequence[Term], start: float, direction: int) -> float:
    """start から direction 側の無限遠までの積分

    右側は int_start^inf、左側は int_-inf^start を返す。発散は符号付き inf。
    """
    lead = leading_behaviour(terms, direction)
    if lead is None:
        return 0.0
    rate, coef = lead
    if not is_integrable(rate):
        return math.copysign(math.inf, coef)

    anti = antiderivative_terms(terms)
    if anti is not None:
        at_end = limit_at_infinity(anti, direction)
        if math.isfinite(at_end):
            at_start = float(evaluate(anti, np.asarray(start)))
            return at_end - at_start if direction > 0 else at_start - at_end

    # 閉形式がない場合のみ数値積分に頼る
    end = math.inf if direction > 0 else -math.inf
    lo, hi = (start, end) if direction > 0 else (end, start)
    value, _ = quad(
        lambda t: float(evaluate(terms, np.asarray(t))),
        lo,
        hi,
        epsabs=settings.quad_tol,
        epsrel=settings.quad_tol,
        limit=200,
    )
    return float(value)


def _sample_grid(lo: float, hi: float, n: int = 400) -> np.ndarray:
    """根探索用のサンプル点（無限端へは幾何的に伸ばす）"""
    bound = settings.bracket_bound
    if math.isfinite(lo) and math.isfinite(hi):
        return np.linspace(lo, hi, n + 2)[1:-1]
    if math.isfinite(lo):
        return lo + np.geomspace(1e-6, bound, n)
    if math.isfinite(hi):
        return hi - np.geomspace(1e-6, bound, n)[::-1]
    half = np.geomspace(1e-6, bound, n // 2)
    return np.concatenate([-half[::-1], [0.0], half])


def segment_roots(terms: Sequence[Term], lo: float, hi: float) -> List[float]:
    """開区間 (lo, hi) 内の和の零点"""
    live = [t for t in terms if not t.is_zero()]
    if not live:
        return []
    polys = [t for t in live if isinstance(t, Poly)]
    others = [t for t in live if not isinstance(t, Poly)]

    def inside(r: float) -> bool:
        return lo < r < hi

    if not others:
        coef = np.zeros(1)
        for poly in polys:
            c = poly.centered()
            size = max(len(coef), len(c))
            coef = np.pad(coef, (0, size - len(coef))) + np.pad(c, (0, size - len(c)))
        coef = np.trim_zeros(coef, "b")
        if len(coef) <= 1:
            return []
        roots = np.roots(coef[::-1])
        found: List[float] = []
        for r in roots:
            if abs(r.imag) <= 1e-9 * (1.0 + abs(r.real)) and inside(r.real):
                if all(abs(r.real - f) > 1e-9 for f in found):
                    found.append(float(r.real))
        return sorted(found)

    if len(others) == 1:
        term = others[0]
        const = 0.0
        if polys:
            merged = sum(p.centered()[0] if p.is_constant else math.nan for p in polys)
            const = merged
        if not math.isnan(const):
            if isinstance(term, (Exp, Power)) and const == 0.0:
                return []
            if isinstance(term, NormalCdf):
                q = -const / term.k
                if not 0.0 < q < 1.0:
                    return []
                r = term.x0 + float(ndtri(q)) / term.s
                return [r] if inside(r) else []

    xs = _sample_grid(lo, hi)
    values = evaluate(live, xs)
    found = []
    for i in range(len(xs) - 1):
        a, b = values[i], values[i + 1]
        if a == 0.0:
            found.append(float(xs[i]))
        elif a * b < 0.0:
            found.append(
                float(
                    brentq(
                        lambda t: float(evaluate(live, np.asarray(t))),
                        xs[i],
                        xs[i + 1],
                        xtol=settings.root_tol,
                    )
                )
            )
    return found
