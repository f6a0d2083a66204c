"""グリーン関数オラクルモジュールのテスト"""

import numpy as np
import pytest

from integral_stopping.errors import DomainError, NonConvergentError, PreconditionError
from integral_stopping.funcmodel import Direction
from integral_stopping.htransform import h_for
from integral_stopping.oracle import (
    expected_exit_time,
    green_kernel,
    green_value,
    green_value_one_sided,
)
from integral_stopping.solver import payoff_two_sided


class TestGreenKernel:
    """green_kernel関数のテスト"""

    def test_symmetric(self):
        """G(x, y) = G(y, x)"""
        assert green_kernel(-1.0, 2.0, 0.3, 1.1) == pytest.approx(green_kernel(-1.0, 2.0, 1.1, 0.3))

    def test_value(self):
        """2 (min - a)(b - max) / (b - a)"""
        assert green_kernel(-2.0, 2.0, 0.0, 0.0) == pytest.approx(2.0)
        assert green_kernel(0.0, 4.0, 1.0, 3.0) == pytest.approx(0.5)

    def test_vanishes_on_boundary(self):
        """端点では 0"""
        assert green_kernel(-1.0, 1.0, -1.0, 0.5) == 0.0
        assert green_kernel(-1.0, 1.0, 0.5, 1.0) == 0.0

    def test_invalid(self):
        """a >= b や区間外の点は DomainError"""
        with pytest.raises(DomainError):
            green_kernel(1.0, 1.0, 1.0, 1.0)
        with pytest.raises(DomainError):
            green_kernel(-1.0, 1.0, 2.0, 0.0)


class TestGreenValue:
    """green_value関数のテスト"""

    @pytest.mark.parametrize("a,b,expected", [(-2.0, 2.0, 2.0), (-1.0, 1.0, 1.0)])
    def test_box(self, e_box, a, b, expected):
        """E-BOX の退出ルールの利得"""
        assert green_value(e_box, a, b, 0.0) == pytest.approx(expected, abs=1e-8)

    def test_endpoints(self, e_box):
        """出発点が端点なら 0"""
        assert green_value(e_box, -2.0, 2.0, -2.0) == 0.0
        assert green_value(e_box, -2.0, 2.0, 2.0) == 0.0

    @pytest.mark.parametrize(
        "a,b,x",
        [(-3.0, 0.5, -0.2), (-1.7, 2.9, 1.3), (-0.4, 0.9, 0.1), (-5.0, 4.0, -4.5), (0.5, 6.0, 2.0)],
    )
    def test_matches_h_formula(self, e_box, a, b, x):
        """h による閉じた式と一致する"""
        expected = payoff_two_sided(h_for(e_box), a, b).value(x)
        assert green_value(e_box, a, b, x) == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("a,b,x", [(-4.0, 3.0, 0.0), (-0.5, 6.0, 1.5), (-7.0, -0.2, -3.0)])
    def test_exp_matches_h_formula(self, e_exp, a, b, x):
        """指数の裾をもつ E-EXP でも一致する"""
        expected = payoff_two_sided(h_for(e_exp), a, b).value(x)
        assert green_value(e_exp, a, b, x) == pytest.approx(expected, abs=1e-6)

    def test_asym_matches_h_formula(self, e_asym):
        """指数の裾を含む区間でも一致する"""
        expected = payoff_two_sided(h_for(e_asym), -2.5, 4.0).value(0.0)
        assert green_value(e_asym, -2.5, 4.0, 0.0) == pytest.approx(expected, abs=1e-6)

    def test_needs_driftless(self, theta_drift):
        """ドリフトがあれば PreconditionError"""
        with pytest.raises(PreconditionError):
            green_value(theta_drift, -1.0, 1.0, 0.0)

    def test_needs_undiscounted(self, ou):
        """割引があれば PreconditionError"""
        with pytest.raises(PreconditionError):
            green_value(ou, -1.0, 1.0, 0.0)

    def test_outside(self, e_box):
        """区間外の出発点は DomainError"""
        with pytest.raises(DomainError):
            green_value(e_box, -1.0, 1.0, 3.0)


class TestExpectedExitTime:
    """expected_exit_time関数のテスト"""

    @pytest.mark.parametrize("a,b,x", [(-1.0, 1.0, 0.0), (-2.0, 3.0, 0.5), (0.0, 1.0, 0.9)])
    def test_brownian(self, e_box, a, b, x):
        """sigma = 1 なら (x - a)(b - x)"""
        assert expected_exit_time(e_box, a, b, x) == pytest.approx((x - a) * (b - x), abs=1e-9)

    def test_endpoint(self, e_box):
        """端点からは 0"""
        assert expected_exit_time(e_box, -1.0, 1.0, 1.0) == 0.0


class TestGreenValueOneSided:
    """green_value_one_sided関数のテスト"""

    def test_asym_left(self, e_asym):
        """E-ASYM の片側ルール alpha = -2.5 の利得は V(0) = 4.25"""
        value = green_value_one_sided(e_asym, Direction.LEFT, -2.5, 0.0, tol=1e-7)
        assert value == pytest.approx(4.25, abs=1e-5)

    def test_wrong_side(self, e_asym):
        """出発点が停止側にあれば DomainError"""
        with pytest.raises(DomainError):
            green_value_one_sided(e_asym, Direction.LEFT, -2.5, -3.0)

    def test_not_settling(self, e_box):
        """裾の利得が発散すれば NonConvergentError"""
        with pytest.raises(NonConvergentError):
            green_value_one_sided(e_box, Direction.LEFT, -2.0, 0.0, max_expansions=8)


class TestRandomAgreement:
    """乱数で選んだ (a, b, x) での h の閉じた式との一致"""

    @pytest.mark.parametrize("fixture", ["e_box", "e_exp"])
    def test_random_triples(self, fixture, request):
        """200 個の (a, b, x) で |差| <= 1e-6 max(1, (b - a)^2)"""
        spec = request.getfixturevalue(fixture)
        H = h_for(spec)
        rng = np.random.default_rng(20240611)
        for _ in range(200):
            a, b = np.sort(rng.uniform(-6.0, 6.0, size=2))
            x = float(rng.uniform(a, b))
            a, b = float(a), float(b)
            expected = payoff_two_sided(H, a, b).value(x)
            tol = 1e-6 * max(1.0, (b - a) ** 2)
            assert abs(green_value(spec, a, b, x) - expected) <= tol
