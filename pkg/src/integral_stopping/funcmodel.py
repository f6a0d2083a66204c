"""区分的解析関数モデルと係数の構造条件の検証モジュール"""

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Annotated, Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, PlainSerializer
from scipy.integrate import quad
from scipy.optimize import brentq

from .config import Settings
from .errors import (
    BracketError,
    DomainError,
    ExtendedArithmeticError,
    FormError,
    IntegrabilityError,
    ShapeError,
)
from .forms import (
    Poly,
    Power,
    Term,
    antiderivative_terms,
    evaluate,
    segment_roots,
    tail_integral,
)
from .logging_cfg import logger

settings = Settings()

Evaluator = Callable[[np.ndarray], np.ndarray]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _ext_to_json(value: float) -> Union[float, str]:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


# JSON では inf を文字列 "inf"/"-inf" として出力する
ExtFloat = Annotated[
    float, PlainSerializer(_ext_to_json, return_type=Union[float, str], when_used="json")
]


class Direction(str, Enum):
    """裾の向き"""

    LEFT = "left"
    RIGHT = "right"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.RIGHT else -1


@dataclass(frozen=True, order=True)
class ExtReal:
    """拡張実数 (有限値または +-inf)"""

    value: float

    def __post_init__(self) -> None:
        if math.isnan(self.value):
            raise ExtendedArithmeticError("NaN is not an extended real")

    @classmethod
    def parse(cls, raw: Union[float, int, str]) -> "ExtReal":
        """数値または "inf"/"-inf"/"+inf" を解釈する"""
        if isinstance(raw, str):
            text = raw.strip().lower()
            if text in ("inf", "+inf", "infinity"):
                return cls(math.inf)
            if text in ("-inf", "-infinity"):
                return cls(-math.inf)
            try:
                return cls(float(text))
            except ValueError as e:
                raise ExtendedArithmeticError(f"not an extended real: {raw!r}") from e
        return cls(float(raw))

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.value)

    def __add__(self, other: Union["ExtReal", float]) -> "ExtReal":
        rhs = other.value if isinstance(other, ExtReal) else float(other)
        if math.isinf(self.value) and math.isinf(rhs) and self.value != rhs:
            raise ExtendedArithmeticError("inf - inf is undefined")
        return ExtReal(self.value + rhs)

    def __radd__(self, other: float) -> "ExtReal":
        return self + other

    def __neg__(self) -> "ExtReal":
        return ExtReal(-self.value)

    def __sub__(self, other: Union["ExtReal", float]) -> "ExtReal":
        rhs = other if isinstance(other, ExtReal) else ExtReal(float(other))
        return self + (-rhs)

    def __float__(self) -> float:
        return self.value

    def __str__(self) -> str:
        return str(_ext_to_json(self.value))


def _quad_pieces(lo: float, hi: float) -> List[Tuple[float, float]]:
    """長い区間を両端から幾何的に分割する"""
    length = hi - lo
    if length <= 64.0:
        return [(lo, hi)]
    offsets = [0.0]
    step = 1.0
    while offsets[-1] + step < length / 2.0:
        offsets.append(offsets[-1] + step)
        step *= 2.0
    edges = [lo + o for o in offsets] + [lo + length / 2.0] + [hi - o for o in reversed(offsets)]
    return list(zip(edges[:-1], edges[1:]))


def quad_cell(fn: Evaluator, lo: float, hi: float) -> float:
    """滑らかなセル上の数値積分"""
    total = 0.0
    for u, v in _quad_pieces(lo, hi):
        value, _ = quad(
            lambda t: float(fn(np.asarray(t))),
            u,
            v,
            epsabs=settings.quad_tol,
            epsrel=settings.quad_tol,
            limit=200,
        )
        total += value
    if not math.isfinite(total):
        raise IntegrabilityError(f"non-integrable integrand on [{lo}, {hi}]")
    return total


def gauss_legendre(fn: Evaluator, start: float, ends: np.ndarray) -> np.ndarray:
    """start から各 ends までの 20 点ガウス・ルジャンドル積分"""
    ends = np.asarray(ends, dtype=float)
    half = (ends - start) / 2.0
    points = start + half[..., None] * (_GL_NODES + 1.0)
    return half * (fn(points) @ _GL_WEIGHTS)


class RealFunction(ABC):
    """実数値関数の共通インターフェース

    区分点で分けたセルの内部では滑らかであることを前提に、
    数値積分・原始関数・裾積分の既定実装を持つ。
    """

    label: str = "function"

    @property
    @abstractmethod
    def domain(self) -> Tuple[float, float]:
        """定義域 (端点は +-inf を取り得る)"""

    @property
    @abstractmethod
    def breakpoints(self) -> Tuple[float, ...]:
        """区分点 (昇順)"""

    @abstractmethod
    def __call__(self, x: np.ndarray) -> np.ndarray:
        """要素ごとに評価する"""

    def cell(self, lo: float, hi: float) -> Evaluator:
        """セル [lo, hi] 内で使う評価関数"""
        return self.__call__

    def value(self, x: float) -> float:
        return float(self(np.asarray(x, dtype=float)))

    def contains(self, x: float) -> bool:
        lo, hi = self.domain
        return math.isfinite(x) and lo <= x <= hi

    def _check_domain(self, xs: np.ndarray) -> None:
        lo, hi = self.domain
        bad = ~np.isfinite(xs) | (xs < lo) | (xs > hi)
        if np.any(bad):
            first = float(np.asarray(xs)[bad].flat[0])
            raise DomainError(f"{self.label}: x={first} outside state interval [{lo}, {hi}]")

    def cells(self, a: float, b: float) -> List[Tuple[float, float]]:
        inner = [p for p in self.breakpoints if a < p < b]
        edges = [a, *inner, b]
        return list(zip(edges[:-1], edges[1:]))

    def integrate(self, a: float, b: float) -> float:
        """有限区間 [a, b] の積分 (a > b なら符号反転)"""
        if a == b:
            return 0.0
        if a > b:
            return -self.integrate(b, a)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise DomainError("infinite limits need improper_integral")
        self._check_domain(np.asarray([a, b]))
        return sum(quad_cell(self.cell(u, v), u, v) for u, v in self.cells(a, b))

    def improper_integral(self, a: float, direction: Direction) -> ExtReal:
        """a から direction 側の定義域端までの積分"""
        lo, hi = self.domain
        end = hi if direction is Direction.RIGHT else lo
        if a == end:
            return ExtReal(0.0)
        if math.isfinite(end):
            return ExtReal(self.integrate(min(a, end), max(a, end)))
        return ExtReal(_shell_sum(self, a, direction))

    def antiderivative(self, anchor: float) -> "RealFunction":
        """anchor で 0 となる原始関数"""
        return NumericAntiderivative(self, anchor)

    def shifted(self, delta: float) -> "RealFunction":
        """定数 delta を加えた関数"""
        return PointwiseFunction(lambda x, v: v + delta, (self,), label=self.label)


def _shell_sum(fn: RealFunction, a: float, direction: Direction) -> float:
    """無限端への積分を幾何的に広がる殻の和で求める"""
    sign = direction.sign
    beyond = [p for p in fn.breakpoints if (p - a) * sign > 0]
    total = 0.0
    start = a
    if beyond:
        far = max(beyond) if sign > 0 else min(beyond)
        total = fn.integrate(min(a, far), max(a, far))
        start = far
    width = max(1.0, abs(start))
    prev = start
    quiet = 0
    for k in range(60):
        nxt = start + sign * width * (2.0 ** (k + 1) - 1.0)
        inc = fn.integrate(min(prev, nxt), max(prev, nxt))
        total += inc
        if abs(total) > settings.blowup:
            return math.copysign(math.inf, total)
        if abs(inc) <= settings.quad_tol * (1.0 + abs(total)):
            quiet += 1
            if quiet >= 2:
                return total
        else:
            quiet = 0
        prev = nxt
    logger.warning(f"{fn.label}: tail integral did not settle, declared divergent")
    return math.copysign(math.inf, total) if total != 0.0 else math.inf


@dataclass(frozen=True)
class Segment:
    """区間 [lo, hi) 上の解析的な関数形 (項の和)"""

    lo: float
    hi: float
    terms: Tuple[Term, ...]

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise FormError(f"segment needs lo < hi, got [{self.lo}, {self.hi}]")
        for term in self.terms:
            if isinstance(term, Power):
                if self.lo >= term.x0:
                    gap = self.lo - term.x0
                elif self.hi <= term.x0:
                    gap = term.x0 - self.hi
                else:
                    gap = -1.0
                if gap < 1.0 - 1e-12:
                    raise FormError(
                        f"power form needs |x - x0| >= 1 on [{self.lo}, {self.hi}]"
                    )

    def value(self, x: np.ndarray) -> np.ndarray:
        return evaluate(self.terms, x)

    @cached_property
    def anti(self) -> Optional[List[Term]]:
        return antiderivative_terms(self.terms)

    @property
    def is_zero(self) -> bool:
        return all(t.is_zero() for t in self.terms)

    @property
    def is_constant(self) -> bool:
        return all(isinstance(t, Poly) and t.is_constant for t in self.terms)

    def sample_point(self) -> float:
        if math.isfinite(self.lo) and math.isfinite(self.hi):
            return 0.5 * (self.lo + self.hi)
        if math.isfinite(self.lo):
            return self.lo + 1.0
        if math.isfinite(self.hi):
            return self.hi - 1.0
        return 0.0

    def scaled(self, k: float) -> "Segment":
        return replace(self, terms=tuple(t.scaled(k) for t in self.terms))

    def shifted(self, delta: float) -> "Segment":
        return replace(self, terms=self.terms + (Poly((delta,)),))

    def restricted(self, lo: float, hi: float) -> "Segment":
        return replace(self, lo=lo, hi=hi)

    def integral(self, u: float, v: float) -> float:
        if self.anti is not None:
            ends = evaluate(self.anti, np.asarray([u, v]))
            return float(ends[1] - ends[0])
        return quad_cell(self.value, u, v)

    def tail(self, start: float, direction: Direction) -> float:
        return tail_integral(self.terms, start, direction.sign)


class PiecewiseFunction(RealFunction):
    """区分点と解析的な区間関数形で与えられる関数

    区分点での値は右側の区間のものを使う (右連続)。
    """

    def __init__(self, segments: Sequence[Segment], label: str = "piecewise") -> None:
        if not segments:
            raise FormError("piecewise function needs at least one segment")
        for left, right in zip(segments[:-1], segments[1:]):
            if left.hi != right.lo:
                raise FormError(
                    f"segments must tile the interval: gap or overlap at {left.hi}/{right.lo}"
                )
        self.segments: Tuple[Segment, ...] = tuple(segments)
        self.label = label
        self._bps = np.asarray([s.lo for s in self.segments[1:]], dtype=float)

    @classmethod
    def constant(
        cls, c: float, lo: float = -math.inf, hi: float = math.inf, label: str = "constant"
    ) -> "PiecewiseFunction":
        return cls([Segment(lo, hi, (Poly((float(c),)),))], label=label)

    @classmethod
    def zero(cls, lo: float = -math.inf, hi: float = math.inf) -> "PiecewiseFunction":
        return cls.constant(0.0, lo, hi, label="zero")

    @property
    def domain(self) -> Tuple[float, float]:
        return self.segments[0].lo, self.segments[-1].hi

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return tuple(float(b) for b in self._bps)

    @property
    def is_zero(self) -> bool:
        return all(s.is_zero for s in self.segments)

    @property
    def is_piecewise_constant(self) -> bool:
        return all(s.is_constant for s in self.segments)

    def locate(self, x: np.ndarray) -> np.ndarray:
        return np.searchsorted(self._bps, x, side="right")

    def segment_at(self, x: float) -> Segment:
        return self.segments[int(self.locate(np.asarray(x)))]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        self._check_domain(xs)
        flat = np.atleast_1d(xs).ravel()
        idx = self.locate(flat)
        out = np.empty_like(flat)
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = self.segments[i].value(flat[sel])
        return out.reshape(xs.shape)

    def cell(self, lo: float, hi: float) -> Evaluator:
        if math.isfinite(lo) and math.isfinite(hi):
            probe = 0.5 * (lo + hi)
        elif math.isfinite(lo):
            probe = lo + 1.0
        elif math.isfinite(hi):
            probe = hi - 1.0
        else:
            probe = 0.0
        return self.segment_at(probe).value

    def integrate(self, a: float, b: float) -> float:
        if a == b:
            return 0.0
        if a > b:
            return -self.integrate(b, a)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise DomainError("infinite limits need improper_integral")
        self._check_domain(np.asarray([a, b]))
        total = 0.0
        for seg in self.segments:
            u, v = max(a, seg.lo), min(b, seg.hi)
            if u < v:
                total += seg.integral(u, v)
        return total

    def improper_integral(self, a: float, direction: Direction) -> ExtReal:
        lo, hi = self.domain
        if direction is Direction.RIGHT:
            if math.isfinite(hi):
                return ExtReal(self.integrate(a, hi))
            tail = self.segments[-1]
            start = max(a, tail.lo)
            return ExtReal(tail.tail(start, direction)) + self.integrate(a, start)
        if math.isfinite(lo):
            return ExtReal(self.integrate(lo, a))
        tail = self.segments[0]
        start = min(a, tail.hi)
        return ExtReal(tail.tail(start, direction)) + self.integrate(start, a)

    def antiderivative(self, anchor: float) -> RealFunction:
        if any(seg.anti is None for seg in self.segments):
            return NumericAntiderivative(self, anchor)
        i0 = int(self.locate(np.asarray(anchor)))
        i0 = min(i0, len(self.segments) - 1)
        antis = [seg.anti or [] for seg in self.segments]

        def at(i: int, x: float) -> float:
            return float(evaluate(antis[i], np.asarray(x)))

        shifts = [0.0] * len(self.segments)
        shifts[i0] = -at(i0, anchor)
        for i in range(i0 + 1, len(self.segments)):
            bp = self.segments[i].lo
            shifts[i] = at(i - 1, bp) + shifts[i - 1] - at(i, bp)
        for i in range(i0 - 1, -1, -1):
            bp = self.segments[i].hi
            shifts[i] = at(i + 1, bp) + shifts[i + 1] - at(i, bp)
        segments = [
            Segment(seg.lo, seg.hi, tuple(antis[i]) + (Poly((shifts[i],)),))
            for i, seg in enumerate(self.segments)
        ]
        return PiecewiseFunction(segments, label=f"int {self.label}")

    def shifted(self, delta: float) -> "PiecewiseFunction":
        return PiecewiseFunction([s.shifted(delta) for s in self.segments], self.label)

    def scaled(self, k: float) -> "PiecewiseFunction":
        return PiecewiseFunction([s.scaled(k) for s in self.segments], self.label)

    def refine(self, points: Sequence[float]) -> "PiecewiseFunction":
        """区分点を追加した同じ関数"""
        pieces: List[Segment] = []
        for seg in self.segments:
            cuts = sorted(p for p in set(points) if seg.lo < p < seg.hi)
            edges = [seg.lo, *cuts, seg.hi]
            pieces.extend(seg.restricted(u, v) for u, v in zip(edges[:-1], edges[1:]))
        return PiecewiseFunction(pieces, self.label)


class PointwiseFunction(RealFunction):
    """他の関数の値を点ごとに組み合わせた関数"""

    def __init__(
        self,
        combine: Callable[..., np.ndarray],
        parts: Sequence[RealFunction],
        label: str = "pointwise",
    ) -> None:
        self.combine = combine
        self.parts = tuple(parts)
        self.label = label
        self._domain = (
            max(p.domain[0] for p in self.parts),
            min(p.domain[1] for p in self.parts),
        )
        self._bps = tuple(sorted({b for p in self.parts for b in p.breakpoints}))

    @property
    def domain(self) -> Tuple[float, float]:
        return self._domain

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self._bps

    def __call__(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        self._check_domain(xs)
        return self.combine(xs, *(p(xs) for p in self.parts))

    def cell(self, lo: float, hi: float) -> Evaluator:
        evaluators = [p.cell(lo, hi) for p in self.parts]

        def evaluate_cell(x: np.ndarray) -> np.ndarray:
            xs = np.asarray(x, dtype=float)
            return self.combine(xs, *(ev(xs) for ev in evaluators))

        return evaluate_cell


class NumericAntiderivative(RealFunction):
    """数値求積による原始関数

    区分点と anchor を含むノード上に累積値を持ち、ノード間は
    20 点ガウス・ルジャンドルで補う。求積と GL が一致するまでセルを細分する。
    """

    def __init__(
        self, base: RealFunction, anchor: float, tol: Optional[float] = None
    ) -> None:
        self.base = base
        self.anchor = float(anchor)
        self.label = f"int {base.label}"
        self.tol = tol if tol is not None else settings.scale_refine_tol
        lo, hi = base.domain
        if not base.contains(self.anchor):
            raise DomainError(f"anchor {anchor} outside [{lo}, {hi}]")

        keys = sorted({self.anchor, *(b for b in base.breakpoints if lo < b < hi)})
        span = max(keys[-1] - keys[0], 1.0)
        left = lo if math.isfinite(lo) else keys[0] - 4.0 * span
        right = hi if math.isfinite(hi) else keys[-1] + 4.0 * span
        coarse = sorted({left, *keys, right})
        starts: List[float] = []
        for u, v in zip(coarse[:-1], coarse[1:]):
            starts.extend(np.linspace(u, v, 9)[:-1].tolist())

        nodes: List[float] = []
        masses: List[float] = []
        for u, v in zip(starts, starts[1:] + [coarse[-1]]):
            self._refine(u, v, nodes, masses, depth=0)
        nodes.append(coarse[-1])

        self.nodes = np.asarray(nodes, dtype=float)
        cum = np.concatenate([[0.0], np.cumsum(masses)])
        anchor_idx = int(np.searchsorted(self.nodes, self.anchor))
        self.values = cum - cum[anchor_idx]
        self._evaluators = [
            base.cell(u, v) for u, v in zip(self.nodes[:-1], self.nodes[1:])
        ]

    def _refine(
        self, u: float, v: float, nodes: List[float], masses: List[float], depth: int
    ) -> None:
        ev = self.base.cell(u, v)
        exact = quad_cell(ev, u, v)
        approx = float(gauss_legendre(ev, u, np.asarray(v)))
        if abs(exact - approx) > self.tol * (1.0 + abs(exact)) and depth < 12:
            mid = 0.5 * (u + v)
            self._refine(u, mid, nodes, masses, depth + 1)
            self._refine(mid, v, nodes, masses, depth + 1)
            return
        nodes.append(u)
        masses.append(exact)

    @property
    def domain(self) -> Tuple[float, float]:
        return self.base.domain

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self.base.breakpoints

    def __call__(self, x: np.ndarray) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        self._check_domain(xs)
        flat = np.atleast_1d(xs).ravel()
        out = np.empty_like(flat)
        first, last = self.nodes[0], self.nodes[-1]
        inside = (flat >= first) & (flat <= last)
        idx = np.clip(np.searchsorted(self.nodes, flat, side="right") - 1, 0, len(self.nodes) - 2)
        for i in np.unique(idx[inside]):
            sel = inside & (idx == i)
            out[sel] = self.values[i] + gauss_legendre(
                self._evaluators[i], self.nodes[i], flat[sel]
            )
        for j in np.flatnonzero(~inside):
            xj = float(flat[j])
            if xj > last:
                out[j] = self.values[-1] + self.base.integrate(last, xj)
            else:
                out[j] = self.values[0] - self.base.integrate(xj, first)
        return out.reshape(xs.shape)

    def inverse_guess(self, y: np.ndarray) -> np.ndarray:
        """単調増加の場合の逆関数の初期値 (ノード上の線形補間)"""
        return np.interp(y, self.values, self.nodes)


class CoordinateMap(ABC):
    """狭義単調増加な座標変換 y = p(x)"""

    @property
    @abstractmethod
    def image(self) -> Tuple[float, float]:
        """変換後の区間"""

    @abstractmethod
    def p(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def dp(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def d2p(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def inverse(self, y: float) -> float: ...

    def inverse_many(self, y: np.ndarray) -> np.ndarray:
        ys = np.asarray(y, dtype=float)
        flat = np.atleast_1d(ys).ravel()
        out = np.array([self.inverse(float(v)) for v in flat])
        return out.reshape(ys.shape)

    @abstractmethod
    def weighted(self, base: RealFunction) -> RealFunction:
        """x 座標で base * p' を表す関数 (置換積分用)"""


class IdentityMap(CoordinateMap):
    """恒等変換"""

    def __init__(self, domain: Tuple[float, float] = (-math.inf, math.inf)) -> None:
        self._domain = domain

    @property
    def image(self) -> Tuple[float, float]:
        return self._domain

    def p(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)

    def dp(self, x: np.ndarray) -> np.ndarray:
        return np.ones_like(np.asarray(x, dtype=float))

    def d2p(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(np.asarray(x, dtype=float))

    def inverse(self, y: float) -> float:
        return float(y)

    def inverse_many(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float)

    def weighted(self, base: RealFunction) -> RealFunction:
        return base


class ComposedFunction(RealFunction):
    """x 座標の関数 base を y = p(x) 座標で見た関数 base(p^-1(y))"""

    def __init__(self, base: RealFunction, cmap: CoordinateMap, label: str = "") -> None:
        self.base = base
        self.cmap = cmap
        self.label = label or f"{base.label} o p^-1"
        lo, hi = cmap.image
        self._bps = tuple(
            float(cmap.p(np.asarray(b)))
            for b in base.breakpoints
            if base.contains(b)
        )
        self._bps = tuple(b for b in self._bps if lo < b < hi)

    @property
    def domain(self) -> Tuple[float, float]:
        return self.cmap.image

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        return self._bps

    @cached_property
    def _weighted(self) -> RealFunction:
        return self.cmap.weighted(self.base)

    def __call__(self, y: np.ndarray) -> np.ndarray:
        ys = np.asarray(y, dtype=float)
        self._check_domain(ys)
        return self.base(self.cmap.inverse_many(ys))

    def cell(self, lo: float, hi: float) -> Evaluator:
        inner = self.base.cell(self.cmap.inverse(lo), self.cmap.inverse(hi))
        return lambda y: inner(self.cmap.inverse_many(y))

    def integrate(self, a: float, b: float) -> float:
        if a == b:
            return 0.0
        self._check_domain(np.asarray([a, b]))
        return self._weighted.integrate(self.cmap.inverse(a), self.cmap.inverse(b))

    def improper_integral(self, a: float, direction: Direction) -> ExtReal:
        return self._weighted.improper_integral(self.cmap.inverse(a), direction)

    def antiderivative(self, anchor: float) -> RealFunction:
        inner = self._weighted.antiderivative(self.cmap.inverse(anchor))
        return ComposedFunction(inner, self.cmap, label=f"int {self.label}")

    def shifted(self, delta: float) -> "ComposedFunction":
        return ComposedFunction(self.base.shifted(delta), self.cmap, self.label)


def ratio(num: RealFunction, sigma: RealFunction, factor: float) -> RealFunction:
    """factor * num / sigma^2 を作る

    sigma が区分的に定数ならば閉じた関数形のまま、それ以外は点ごとの合成。
    """
    if (
        isinstance(num, ComposedFunction)
        and isinstance(sigma, ComposedFunction)
        and num.cmap is sigma.cmap
    ):
        return ComposedFunction(ratio(num.base, sigma.base, factor), num.cmap)
    if (
        isinstance(num, PiecewiseFunction)
        and isinstance(sigma, PiecewiseFunction)
        and sigma.is_piecewise_constant
    ):
        refined = num.refine(sigma.breakpoints)
        segments = []
        for seg in refined.segments:
            s = sigma.segment_at(seg.sample_point()).value(np.asarray(seg.sample_point()))
            segments.append(seg.scaled(factor / float(s) ** 2))
        return PiecewiseFunction(segments, label=f"{num.label}/sigma^2")
    return PointwiseFunction(
        lambda x, n, s: factor * n / (s * s), (num, sigma), label=f"{num.label}/sigma^2"
    )


def find_monotone_root(
    fn: Callable[[float], float],
    target: float,
    start: float,
    direction: Direction,
    end: float,
    xtol: Optional[float] = None,
    bound: Optional[float] = None,
) -> float:
    """start から direction 側へ fn(x) = target の根を探す

    無限端へは x2 ずつ、有限端へは二分ずつ近づいてブラケットを作り brentq で解く。

    Raises:
        BracketError: 上限までに符号変化が見つからない場合
    """
    xtol = xtol if xtol is not None else settings.root_tol
    bound = bound if bound is not None else settings.bracket_bound

    def g(x: float) -> float:
        return float(fn(x)) - target

    g0 = g(start)
    if g0 == 0.0:
        return start
    prev = start
    for k in range(400):
        if math.isfinite(end):
            nxt = end - (end - prev) / 2.0
            if nxt == prev:
                break
        else:
            nxt = start + direction.sign * 2.0**k
            if abs(nxt - start) > bound:
                break
        gn = g(nxt)
        if gn == 0.0:
            return nxt
        if (gn > 0.0) != (g0 > 0.0):
            lo, hi = min(prev, nxt), max(prev, nxt)
            return float(brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps))
        prev = nxt
    raise BracketError(
        f"no sign change of fn - {target} found {direction.value} of {start}"
    )


@dataclass(frozen=True)
class SignTemplate:
    """利得関数の符号テンプレート (x1l <= x1r < x2l <= x2r)"""

    x1l: float
    x1r: float
    x2l: float
    x2r: float

    def __post_init__(self) -> None:
        if not (self.x1l <= self.x1r < self.x2l <= self.x2r):
            raise ShapeError(f"invalid sign template {self.as_tuple()}")

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x1l, self.x1r, self.x2l, self.x2r

    def map(self, fn: Callable[[float], float]) -> "SignTemplate":
        return SignTemplate(*(float(fn(v)) for v in self.as_tuple()))


def _sign(value: float) -> int:
    return 0 if value == 0.0 else (1 if value > 0.0 else -1)


def validate_shape(f: RealFunction) -> SignTemplate:
    """符号パターン (-, 0, +, 0, -) を区分ごとの解析から読み取る

    Raises:
        ShapeError: 符号パターンが想定の形でない場合
    """
    if not isinstance(f, PiecewiseFunction):
        raise ShapeError("shape analysis needs a piecewise analytic gain function")

    pieces: List[Tuple[float, float, int]] = []
    edge_zeros: List[float] = []
    for seg in f.segments:
        if seg.is_zero:
            pieces.append((seg.lo, seg.hi, 0))
            continue
        roots = segment_roots(seg.terms, seg.lo, seg.hi)
        edges = [seg.lo, *roots, seg.hi]
        signs = [
            _sign(float(seg.value(np.asarray(Segment(u, v, ()).sample_point()))))
            for u, v in zip(edges[:-1], edges[1:])
        ]
        for k, root in enumerate(roots):
            if signs[k] == signs[k + 1]:
                raise ShapeError(f"f touches zero at x={root} without changing sign")
        for k, (u, v) in enumerate(zip(edges[:-1], edges[1:])):
            if k > 0:
                pieces.append((u, u, 0))
            pieces.append((u, v, signs[k]))
        for end in (seg.lo, seg.hi):
            if math.isfinite(end) and f.contains(end):
                if abs(float(seg.value(np.asarray(end)))) <= 1e-14:
                    edge_zeros.append(end)

    merged: List[Tuple[float, float, int]] = []
    for lo, hi, s in pieces:
        if merged:
            plo, phi, ps = merged[-1]
            if ps == s:
                merged[-1] = (plo, hi, s)
                continue
            if ps * s < 0:
                merged.append((lo, lo, 0))
        merged.append((lo, hi, s))

    pattern = [s for _, _, s in merged]
    if pattern != [-1, 0, 1, 0, -1]:
        raise ShapeError(f"sign pattern {pattern} is not (-, 0, +, 0, -)")
    template = SignTemplate(merged[1][0], merged[1][1], merged[3][0], merged[3][1])
    lo, hi = f.domain
    for z in edge_zeros:
        if lo < z < hi and min(abs(z - t) for t in template.as_tuple()) > 1e-12:
            raise ShapeError(f"1/f is not locally bounded near x={z}")
    return template


class CoefficientCheck(BaseModel):
    """構造条件ひとつ分の判定結果"""

    name: str = Field(description="条件名")
    passed: bool = Field(description="判定")
    function: Optional[str] = Field(default=None, description="違反した関数")
    segment: Optional[int] = Field(default=None, description="違反した区間番号")
    detail: str = Field(default="", description="補足")


class CoefficientReport(BaseModel):
    """係数 (b, sigma, f) の診断レポート"""

    checks: List[CoefficientCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> List[CoefficientCheck]:
        return [c for c in self.checks if not c.passed]


def _probe_points(lo: float, hi: float, n: int = 16) -> np.ndarray:
    a = lo if math.isfinite(lo) else (hi if math.isfinite(hi) else 0.0) - 100.0
    b = hi if math.isfinite(hi) else (lo if math.isfinite(lo) else 0.0) + 100.0
    if a >= b:
        a, b = b - 100.0, a + 100.0
    return np.linspace(a, b, n + 2)[1:-1]


def _segment_views(fn: RealFunction) -> List[Tuple[int, float, float, Evaluator, List[float]]]:
    """関数を (番号, lo, hi, 評価関数, 区間内の零点) の列として見る"""
    if isinstance(fn, PiecewiseFunction):
        return [
            (i, s.lo, s.hi, s.value, segment_roots(s.terms, s.lo, s.hi) if not s.is_zero else [])
            for i, s in enumerate(fn.segments)
        ]
    lo, hi = fn.domain
    edges = [lo, *fn.breakpoints, hi]
    views = []
    for i, (u, v) in enumerate(zip(edges[:-1], edges[1:])):
        ev = fn.cell(u, v)
        probes = _probe_points(u, v, 200)
        values = ev(probes)
        roots = [float(probes[k]) for k in range(len(probes) - 1) if values[k] * values[k + 1] <= 0]
        views.append((i, u, v, ev, roots))
    return views


def validate_coeffs(
    b: RealFunction, sigma: RealFunction, f: RealFunction
) -> CoefficientReport:
    """エンゲルベルト・シュミット条件と局所可積分性を区間ごとに診断する"""
    checks: List[CoefficientCheck] = []

    sigma_ok = True
    for i, lo, hi, ev, roots in _segment_views(sigma):
        reason = ""
        if roots:
            reason = f"sigma vanishes at x={roots[0]:.6g} inside the segment"
        else:
            probes = _probe_points(lo, hi)
            values = np.asarray(ev(probes), dtype=float)
            if np.any(values == 0.0) or not np.all(np.isfinite(values)):
                reason = "sigma is zero or non-finite on the segment"
            for end in (lo, hi):
                if math.isfinite(end) and sigma.contains(end):
                    if float(ev(np.asarray(end))) == 0.0:
                        reason = f"sigma vanishes at the segment edge x={end}"
        if reason:
            sigma_ok = False
            checks.append(
                CoefficientCheck(
                    name="sigma_nonzero",
                    passed=False,
                    function="sigma",
                    segment=i,
                    detail=f"Engelbert-Schmidt condition sigma(x) != 0 violated: {reason}",
                )
            )
    if sigma_ok:
        checks.append(CoefficientCheck(name="sigma_nonzero", passed=True, function="sigma"))
    checks.append(
        CoefficientCheck(
            name="inv_sigma2_locally_integrable",
            passed=sigma_ok,
            function="sigma",
            detail="" if sigma_ok else "1/sigma^2 is not locally integrable where sigma vanishes",
        )
    )

    for name, fn in (("b", b), ("f", f)):
        bad: Optional[int] = None
        for i, lo, hi, ev, _ in _segment_views(fn):
            values = np.asarray(ev(_probe_points(lo, hi)), dtype=float)
            if not np.all(np.isfinite(values)):
                bad = i
                break
        ok = bad is None and sigma_ok
        checks.append(
            CoefficientCheck(
                name=f"{name}_over_sigma2_locally_integrable",
                passed=ok,
                function=name if bad is not None else ("sigma" if not sigma_ok else None),
                segment=bad,
                detail="" if ok else f"{name}/sigma^2 is not locally integrable",
            )
        )
    return CoefficientReport(checks=checks)


@dataclass(frozen=True)
class ProblemSpec:
    """停止問題 (b, sigma, f, lambda, 状態区間) と f の符号テンプレート"""

    b: RealFunction
    sigma: RealFunction
    f: RealFunction
    lam: float = 0.0
    interval: Tuple[float, float] = (-math.inf, math.inf)
    template: Optional[SignTemplate] = None
    name: str = "problem"
    exact: bool = True
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def is_driftless(self) -> bool:
        return isinstance(self.b, PiecewiseFunction) and self.b.is_zero

    @property
    def is_discounted(self) -> bool:
        return self.lam > 0.0

    def with_template(self) -> "ProblemSpec":
        """符号テンプレートを埋めた問題を返す"""
        if self.template is not None:
            return self
        return replace(self, template=validate_shape(self.f))
