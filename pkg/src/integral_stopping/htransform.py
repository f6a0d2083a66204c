"""h 変換 (g = -2f/sigma^2, h = int g) と問題の分類モジュール"""

import math
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.optimize import brentq

from .config import Settings
from .errors import PreconditionError, RootDomainError
from .funcmodel import (
    Direction,
    ExtFloat,
    ExtReal,
    ProblemSpec,
    RealFunction,
    SignTemplate,
    find_monotone_root,
    ratio,
    validate_shape,
)
from .logging_cfg import logger

settings = Settings()


class ClassKind(str, Enum):
    """分類の種類"""

    SOLVABLE = "Solvable"
    CASE1 = "Case1"
    CASE2 = "Case2"
    CASE3 = "Case3"


class Classification(BaseModel):
    """分類結果と判定に使った量"""

    kind: ClassKind
    m: Optional[float] = Field(default=None, description="Case1 の中点 (h(inf)+h(-inf))/2")
    k_plus: Optional[ExtFloat] = Field(default=None, description="H(., m) の正部分の面積")
    k_minus: Optional[ExtFloat] = Field(default=None, description="H(., m) の負部分の面積")
    h_minus_inf: ExtFloat
    h_plus_inf: ExtFloat
    plateau_left: float
    plateau_right: float
    template: Tuple[float, float, float, float]
    conditions: Dict[str, bool] = Field(default_factory=dict)
    quantities: Dict[str, ExtFloat] = Field(default_factory=dict)
    boundary_degenerate: bool = False
    notes: List[str] = Field(default_factory=list)


class HTransform:
    """h 変換

    h は anchor で 0 となる g の原始関数。状態区間が 0 を含むときは
    anchor = 0、それ以外は好ましい区間 (x1r, x2l) の中点。
    """

    def __init__(self, f: RealFunction, sigma: RealFunction, template: SignTemplate) -> None:
        self.template = template
        self.g = ratio(f, sigma, -2.0)
        lo, hi = self.g.domain
        self.domain = (lo, hi)
        self.anchor = 0.0 if lo < 0.0 < hi else 0.5 * (template.x1r + template.x2l)
        self.h = self.g.antiderivative(self.anchor)
        self.h_plus_inf = self.g.improper_integral(self.anchor, Direction.RIGHT)
        self.h_minus_inf = -self.g.improper_integral(self.anchor, Direction.LEFT)
        self.plateau_left = self.h.value(template.x1l)
        self.plateau_right = self.h.value(template.x2l)
        self.tol = 1e-10 * (1.0 + abs(self.plateau_left) + abs(self.plateau_right))

    def H(self, x: np.ndarray, c: float) -> np.ndarray:
        """H(x, c) = h(x) - c"""
        return self.h(x) - c

    def _near(self, a: float, b: float) -> bool:
        return math.isfinite(a) and math.isfinite(b) and abs(a - b) <= self.tol

    @property
    def m1(self) -> float:
        return max(self.plateau_right, self.h_minus_inf.value)

    @property
    def m2(self) -> float:
        return min(self.plateau_left, self.h_plus_inf.value)

    def is_boundary_degenerate(self, c: float) -> bool:
        """c がプラトー値と一致し、根がプラトー端に乗るかどうか"""
        return self._near(c, self.plateau_left) or self._near(c, self.plateau_right)

    def root_alpha(self, c: float) -> float:
        """左の裾 (-inf, x1l) での h = c の根"""
        if self._near(c, self.plateau_left):
            logger.warning(f"alpha_c at c={c} sits on the plateau edge x1l (boundary-degenerate)")
            return self.template.x1l
        if not self.plateau_left > c:
            raise RootDomainError(f"alpha_c undefined for c={c}", "H(x1l, c) > 0")
        if not self.h_minus_inf.value < c:
            raise RootDomainError(f"alpha_c undefined for c={c}", "H(-inf, c) < 0")
        return find_monotone_root(
            self.h.value, c, self.template.x1l, Direction.LEFT, self.domain[0]
        )

    def root_beta(self, c: float) -> float:
        """右の裾 (x2r, inf) での h = c の根"""
        if self._near(c, self.plateau_right):
            logger.warning(f"beta_c at c={c} sits on the plateau edge x2r (boundary-degenerate)")
            return self.template.x2r
        if not self.plateau_right < c:
            raise RootDomainError(f"beta_c undefined for c={c}", "H(x2r, c) < 0")
        if not self.h_plus_inf.value > c:
            raise RootDomainError(f"beta_c undefined for c={c}", "H(inf, c) > 0")
        return find_monotone_root(
            self.h.value, c, self.template.x2r, Direction.RIGHT, self.domain[1]
        )

    def root_gamma(self, c: float) -> float:
        """好ましい区間 (x1r, x2l) での h = c の根"""
        if self._near(c, self.plateau_left):
            logger.warning(f"gamma_c at c={c} sits on the plateau edge x1r (boundary-degenerate)")
            return self.template.x1r
        if self._near(c, self.plateau_right):
            logger.warning(f"gamma_c at c={c} sits on the plateau edge x2l (boundary-degenerate)")
            return self.template.x2l
        if not self.plateau_right < c < self.plateau_left:
            raise RootDomainError(
                f"gamma_c undefined for c={c}", "h(x2l) < c < h(x1r)"
            )
        return float(
            brentq(
                lambda x: self.h.value(x) - c,
                self.template.x1r,
                self.template.x2l,
                xtol=settings.root_tol,
                rtol=4 * np.finfo(float).eps,
            )
        )

    def smoothfit_area(self, c: float) -> float:
        """S(c) = int_{alpha_c}^{beta_c} H(y, c) dy"""
        alpha = self.root_alpha(c)
        beta = self.root_beta(c)
        return self.h.integrate(alpha, beta) - c * (beta - alpha)

    def area(self, a: float, b: float, c: float) -> float:
        """int_a^b H(y, c) dy"""
        return self.h.integrate(a, b) - c * (b - a)

    def tail_area(self, start: float, c: float, direction: Direction) -> ExtReal:
        """start から direction 側の端までの H(., c) の積分"""
        return self.h.shifted(-c).improper_integral(start, direction)

    def classify(self) -> Classification:
        """
        (A1)-(A3) と Case1-3 を判定する

        Returns:
            Classification
        """
        hp, hm = self.h_plus_inf.value, self.h_minus_inf.value
        conditions: Dict[str, bool] = {}
        quantities: Dict[str, float] = {
            "integral_g": (self.h_plus_inf - self.h_minus_inf).value,
        }
        notes: List[str] = [
            "K+ or K- can be finite only if h(inf) = h(-inf)",
        ]
        degenerate = False

        a1 = hp > hm + self.tol
        conditions["A1"] = a1

        a2_vacuous = hp >= self.plateau_left - self.tol
        if a2_vacuous:
            a2 = True
            degenerate = degenerate or self._near(hp, self.plateau_left)
        elif a1:
            alpha = self.root_alpha(hp)
            i2 = self.tail_area(alpha, hp, Direction.RIGHT).value
            quantities["alpha_h_plus_inf"] = alpha
            quantities["A2_integral"] = i2
            a2 = i2 < 0.0
        else:
            a2 = True
        conditions["A2_vacuous"] = a2_vacuous
        conditions["A2"] = a2

        a3_vacuous = hm <= self.plateau_right + self.tol
        if a3_vacuous:
            a3 = True
            degenerate = degenerate or self._near(hm, self.plateau_right)
        elif a1:
            beta = self.root_beta(hm)
            i3 = self.tail_area(beta, hm, Direction.LEFT).value
            quantities["beta_h_minus_inf"] = beta
            quantities["A3_integral"] = i3
            a3 = i3 > 0.0
        else:
            a3 = True
        conditions["A3_vacuous"] = a3_vacuous
        conditions["A3"] = a3

        common = dict(
            h_minus_inf=hm,
            h_plus_inf=hp,
            plateau_left=self.plateau_left,
            plateau_right=self.plateau_right,
            template=self.template.as_tuple(),
            conditions=conditions,
            quantities=quantities,
            boundary_degenerate=degenerate,
            notes=notes,
        )

        if not a1:
            m = 0.5 * (hp + hm)
            gamma = self.root_gamma(m)
            k_plus = self.tail_area(gamma, m, Direction.LEFT).value
            k_minus = -self.tail_area(gamma, m, Direction.RIGHT).value
            quantities["gamma_m"] = gamma
            conditions["limits_equal"] = self._near(hp, hm)
            conditions["finite_K_requires_equal_limits"] = (
                not (math.isfinite(k_plus) or math.isfinite(k_minus))
            ) or conditions["limits_equal"]
            logger.info(f"Classified as Case1: m={m:.6g}, K+={k_plus:.6g}, K-={k_minus:.6g}")
            return Classification(
                kind=ClassKind.CASE1, m=m, k_plus=k_plus, k_minus=k_minus, **common
            )
        if not a2:
            logger.info(f"Classified as Case2: h(inf)={hp:.6g}")
            return Classification(kind=ClassKind.CASE2, **common)
        if not a3:
            logger.info(f"Classified as Case3: h(-inf)={hm:.6g}")
            return Classification(kind=ClassKind.CASE3, **common)
        logger.info("Classified as Solvable: (A1)-(A3) hold")
        return Classification(kind=ClassKind.SOLVABLE, **common)


def build_h(
    f: RealFunction, sigma: RealFunction, template: Optional[SignTemplate] = None
) -> HTransform:
    """
    h 変換を構築する

    Args:
        f: 利得関数
        sigma: 拡散係数
        template: f の符号テンプレート (省略時は f から読み取る)

    Returns:
        HTransform
    """
    if template is None:
        template = validate_shape(f)
    return HTransform(f, sigma, template)


def h_for(spec: ProblemSpec) -> HTransform:
    """ドリフトなし・割引なしの問題から h 変換を作る"""
    if not spec.is_driftless:
        raise PreconditionError("h-transform needs a driftless problem", "b = 0")
    spec = spec.with_template()
    return build_h(spec.f, spec.sigma, spec.template)
