"""関数形モジュールのテスト"""

import math

import numpy as np
import pytest

from integral_stopping.errors import FormError
from integral_stopping.forms import (
    Exp,
    NormalCdf,
    Poly,
    Power,
    evaluate,
    is_integrable,
    limit_at_infinity,
    segment_roots,
    tail_integral,
)


class TestTermValues:
    """各項の評価のテスト"""

    def test_poly_around_center(self):
        """x0 中心の多項式"""
        term = Poly((1.0, 2.0, 3.0), x0=1.0)
        assert term.value(np.asarray(2.0)) == pytest.approx(6.0)
        assert np.allclose(term.centered(), [2.0, -4.0, 3.0])

    def test_exp(self):
        """c exp(a (x - x0))"""
        term = Exp(-1.0, -1.0, 1.0)
        assert term.value(np.asarray(2.0)) == pytest.approx(-math.exp(-1.0))

    def test_exp_zero_rate(self):
        """指数率 0 は FormError"""
        with pytest.raises(FormError):
            Exp(1.0, 0.0)

    def test_normal_cdf_zero_scale(self):
        """s = 0 は FormError"""
        with pytest.raises(FormError):
            NormalCdf(1.0, 0.0)

    def test_power_left_side(self):
        """左側の裾でも |x - x0|^p で評価する"""
        term = Power(1.0, -2.0, 0.0, side=-1)
        assert term.value(np.asarray(-2.0)) == pytest.approx(0.25)


class TestAntiderivative:
    """閉形式原始関数のテスト"""

    def test_power_left_tail_derivative(self):
        """左側のべき項の原始関数の差分が元の項に一致する"""
        term = Power(1.0, -2.0, 0.0, side=-1)
        anti = term.antiderivative()
        h = 1e-6
        x = -3.0
        slope = (evaluate(anti, np.asarray(x + h)) - evaluate(anti, np.asarray(x - h))) / (
            2 * h
        )
        assert slope == pytest.approx(1.0 / 9.0, rel=1e-6)

    def test_normal_cdf_chain(self):
        """正規分布関数の原始関数の差分"""
        term = NormalCdf(-4.0, 1.0)
        anti = term.antiderivative()
        h = 1e-6
        slope = (evaluate(anti, np.asarray(0.3 + h)) - evaluate(anti, np.asarray(0.3 - h))) / (
            2 * h
        )
        assert slope == pytest.approx(float(term.value(np.asarray(0.3))), rel=1e-6)


class TestTails:
    """漸近形と裾積分のテスト"""

    def test_exponential_tail(self):
        """2 exp(-(x-1)) の右裾は 2"""
        assert tail_integral([Exp(2.0, -1.0, 1.0)], 1.0, 1) == pytest.approx(2.0)

    def test_constant_tail_diverges(self):
        """正の定数の裾は +inf"""
        assert tail_integral([Poly((2.0,))], 1.0, 1) == math.inf

    def test_power_tail(self):
        """x^-2 の左裾は 1"""
        term = Power(1.0, -2.0, 0.0, side=-1)
        assert tail_integral([term], -1.0, -1) == pytest.approx(1.0)

    def test_harmonic_tail_diverges(self):
        """|x|^-1 の裾は発散"""
        term = Power(1.0, -1.0, 0.0, side=-1)
        assert tail_integral([term], -1.0, -1) == math.inf

    def test_integrability(self):
        """可積分性の判定"""
        assert is_integrable((-1.0, 0.0, 0.0))
        assert is_integrable((0.0, -2.0, 0.0))
        assert not is_integrable((0.0, -1.0, 0.0))
        assert not is_integrable((0.0, 0.0, 0.0))

    def test_limit_of_normal_cdf(self):
        """a + k Phi(x) の右極限は a + k"""
        terms = [Poly((3.0,)), NormalCdf(-4.0, 1.0)]
        assert limit_at_infinity(terms, 1) == pytest.approx(-1.0)
        assert limit_at_infinity(terms, -1) == pytest.approx(3.0)

    def test_cancelling_constants(self):
        """打ち消し合う定数項は 0 として扱う"""
        terms = [Poly((1.0,)), Poly((-1.0,))]
        assert tail_integral(terms, 0.0, 1) == 0.0


class TestSegmentRoots:
    """区間内の零点のテスト"""

    def test_quadratic(self):
        """-x^2/2 + 2x - 1/2 の正の根は 2 -+ sqrt(3)"""
        roots = segment_roots([Poly((-0.5, 2.0, -0.5))], 0.0, math.inf)
        assert roots == pytest.approx([2.0 - math.sqrt(3.0), 2.0 + math.sqrt(3.0)])

    def test_normal_cdf_root(self, ou_root):
        """3 - 4 Phi(x) の根"""
        roots = segment_roots([Poly((3.0,)), NormalCdf(-4.0, 1.0)], 0.0, math.inf)
        assert roots == pytest.approx([ou_root], abs=1e-12)

    def test_exp_has_no_root(self):
        """指数項だけなら零点なし"""
        assert segment_roots([Exp(-1.0, 1.0)], -math.inf, -1.0) == []

    def test_linear_outside(self):
        """区間外の根は返さない"""
        assert segment_roots([Poly((0.0, 1.0), x0=5.0)], 0.0, 1.0) == []
