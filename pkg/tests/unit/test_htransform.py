"""h 変換と分類モジュールのテスト"""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from integral_stopping.errors import PreconditionError, RootDomainError
from integral_stopping.funcmodel import Direction
from integral_stopping.htransform import ClassKind, build_h, h_for
from integral_stopping.problem_loader import parse_problem

from .conftest import UNIT_SIGMA, constant


class TestBuildH:
    """build_h関数のテスト"""

    def test_box_h(self, e_box):
        """E-BOX の g と h"""
        H = h_for(e_box)
        assert H.g.value(0.0) == -2.0
        assert H.g.value(5.0) == 2.0
        assert H.h.value(1.0) == pytest.approx(-2.0)
        assert H.h.value(-1.0) == pytest.approx(2.0)
        assert H.h_plus_inf.value == math.inf
        assert H.h_minus_inf.value == -math.inf

    def test_exp_limits(self, e_exp):
        """E-EXP の h(+-inf) = 0"""
        H = h_for(e_exp)
        assert H.h.value(3.0) == pytest.approx(-2.0 * math.exp(-2.0))
        assert H.h_plus_inf.value == pytest.approx(0.0, abs=1e-12)
        assert H.h_minus_inf.value == pytest.approx(0.0, abs=1e-12)

    def test_template_from_f(self, e_box):
        """テンプレート省略時は f から読み取る"""
        H = build_h(e_box.f, e_box.sigma)
        assert H.template.as_tuple() == (-1.0, -1.0, 1.0, 1.0)
        assert H.anchor == 0.0

    def test_needs_driftless(self, theta_drift):
        """ドリフトがあれば PreconditionError"""
        with pytest.raises(PreconditionError):
            h_for(theta_drift)


class TestRoots:
    """根 alpha_c, beta_c, gamma_c のテスト"""

    def test_box_roots(self, e_box):
        """E-BOX の c = 0 の根"""
        H = h_for(e_box)
        assert H.root_alpha(0.0) == pytest.approx(-2.0, abs=1e-12)
        assert H.root_beta(0.0) == pytest.approx(2.0, abs=1e-12)
        assert H.root_gamma(0.0) == pytest.approx(0.0, abs=1e-12)

    def test_alpha_out_of_range(self, e_box):
        """h(x1l) <= c では alpha_c は定義されない"""
        H = h_for(e_box)
        with pytest.raises(RootDomainError) as excinfo:
            H.root_alpha(3.0)
        assert excinfo.value.inequality == "H(x1l, c) > 0"

    def test_gamma_out_of_range(self, e_box):
        """プラトーの外の c"""
        H = h_for(e_box)
        with pytest.raises(RootDomainError):
            H.root_gamma(-3.0)

    def test_plateau_edge(self, e_box):
        """c がプラトー値なら根はプラトー端"""
        H = h_for(e_box)
        assert H.is_boundary_degenerate(2.0)
        assert H.root_alpha(2.0) == -1.0
        assert H.root_gamma(-2.0) == 1.0


class TestAreas:
    """面積のテスト"""

    def test_smoothfit_area_zero(self, e_box):
        """E-BOX は S(0) = 0"""
        H = h_for(e_box)
        assert H.smoothfit_area(0.0) == pytest.approx(0.0, abs=1e-12)

    def test_smoothfit_area_decreasing(self, e_box):
        """S(c) は c について減少"""
        H = h_for(e_box)
        values = [H.smoothfit_area(c) for c in np.linspace(-1.5, 1.5, 7)]
        assert all(a > b for a, b in zip(values[:-1], values[1:]))

    @pytest.mark.parametrize("right_tail", [-1.0, -3.0])
    @pytest.mark.parametrize("c1,c2", [(-1.5, 1.0), (0.0, 1.9), (-1.9, -0.2)])
    def test_smoothfit_area_identity(self, right_tail, c1, c2):
        """S(c2) - S(c1) = -int_{c1}^{c2} (beta_c - alpha_c) dc"""
        data = {
            "sigma": UNIT_SIGMA,
            "f": [
                constant("-inf", -1.0, -1.0),
                constant(-1.0, 1.0, 1.0),
                constant(1.0, "inf", right_tail),
            ],
        }
        H = h_for(parse_problem(data))
        width, _ = quad(lambda c: H.root_beta(c) - H.root_alpha(c), c1, c2, epsabs=1e-12)
        delta = H.smoothfit_area(c2) - H.smoothfit_area(c1)
        assert delta == pytest.approx(-width, abs=1e-8)

    def test_tail_area(self, e_exp):
        """E-EXP の左裾の H(., 0) の面積は 2"""
        H = h_for(e_exp)
        assert H.tail_area(-1.0, 0.0, Direction.LEFT).value == pytest.approx(2.0)


class TestClassify:
    """classify関数のテスト"""

    def test_box_solvable(self, e_box):
        """E-BOX は Solvable"""
        result = h_for(e_box).classify()
        assert result.kind is ClassKind.SOLVABLE
        assert result.conditions["A1"]
        assert result.conditions["A2_vacuous"]
        assert result.conditions["A3_vacuous"]
        assert not result.boundary_degenerate

    def test_exp_case1(self, e_exp):
        """E-EXP は Case1 (m = 0, K+ = K- = 3)"""
        result = h_for(e_exp).classify()
        assert result.kind is ClassKind.CASE1
        assert result.m == pytest.approx(0.0, abs=1e-12)
        assert result.k_plus == pytest.approx(3.0, abs=1e-8)
        assert result.k_minus == pytest.approx(3.0, abs=1e-8)
        assert result.conditions["limits_equal"]

    def test_asym_case2(self, e_asym):
        """E-ASYM は Case2 (alpha = -2.5)"""
        result = h_for(e_asym).classify()
        assert result.kind is ClassKind.CASE2
        assert result.h_plus_inf == pytest.approx(-1.0)
        assert result.quantities["alpha_h_plus_inf"] == pytest.approx(-2.5, abs=1e-8)
        assert result.quantities["A2_integral"] == pytest.approx(3.25, abs=1e-8)
        assert not result.conditions["A2"]

    def test_heavy_case1_infinite(self, e_heavy):
        """E-HEAVY は K+ = inf, K- = 5.25"""
        result = h_for(e_heavy).classify()
        assert result.kind is ClassKind.CASE1
        assert result.m == pytest.approx(1.0, abs=1e-12)
        assert result.k_plus == math.inf
        assert result.k_minus == pytest.approx(5.25, abs=1e-6)

    def test_mirrored_case3(self):
        """鏡映した E-ASYM は Case3"""
        data = {
            "sigma": UNIT_SIGMA,
            "f": [
                {
                    "lo": "-inf",
                    "hi": -1.0,
                    "form": "exp",
                    "params": {"c": -0.5, "a": 1.0, "x0": -1.0},
                },
                constant(-1.0, 1.0, 1.0),
                constant(1.0, "inf", -1.0),
            ],
        }
        result = h_for(parse_problem(data)).classify()
        assert result.kind is ClassKind.CASE3
        assert result.quantities["beta_h_minus_inf"] == pytest.approx(2.5, abs=1e-8)

    def test_json_dump(self, e_heavy):
        """無限大は文字列で出力される"""
        dumped = h_for(e_heavy).classify().model_dump(mode="json")
        assert dumped["k_plus"] == "inf"
        assert dumped["kind"] == "Case1"
