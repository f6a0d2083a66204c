"""モンテカルロ推定モジュールのテスト"""

import math

import numpy as np
import pytest

from integral_stopping.errors import DomainError, PreconditionError
from integral_stopping.mcsim import (
    Estimate,
    HorizonCap,
    LeftExit,
    RightExit,
    TwoSidedExit,
    simulate_payoff,
    with_horizon,
    zscore,
)
from integral_stopping.scale import transform_problem
from integral_stopping.shooting import solve_shooting


class TestRules:
    """停止ルールのテスト"""

    def test_labels(self):
        """ラベルの書式"""
        assert TwoSidedExit(-2.0, 2.0).label == "two_sided[-2,2]"
        assert LeftExit(-2.5).label == "left[-2.5]"
        assert RightExit(1.0).label == "right[1]"
        assert HorizonCap(50.0, LeftExit(-2.5)).label == "left[-2.5]@u<=50"

    def test_barriers(self):
        """片側ルールの反対側は無限大"""
        assert LeftExit(-1.0).barriers == (-1.0, math.inf)
        assert RightExit(1.0).barriers == (-math.inf, 1.0)
        assert HorizonCap(1.0, TwoSidedExit(-1.0, 1.0)).barriers == (-1.0, 1.0)

    def test_never_stopping(self):
        """無限遠の境界は PreconditionError"""
        with pytest.raises(PreconditionError):
            LeftExit(-math.inf)
        with pytest.raises(PreconditionError):
            RightExit(math.inf)
        with pytest.raises(PreconditionError):
            TwoSidedExit(-1.0, math.inf)

    def test_inverted_interval(self):
        """a >= b は DomainError"""
        with pytest.raises(DomainError):
            TwoSidedExit(1.0, -1.0)

    def test_horizon_checks(self):
        """u_max は正で有限、入れ子にはできない"""
        with pytest.raises(DomainError):
            HorizonCap(0.0, LeftExit(0.0))
        with pytest.raises(DomainError):
            HorizonCap(math.inf, LeftExit(0.0))
        with pytest.raises(PreconditionError):
            HorizonCap(1.0, HorizonCap(1.0, LeftExit(0.0)))

    def test_with_horizon(self):
        """片側ルールにだけ上限が付く"""
        capped = with_horizon(LeftExit(-1.0), 5.0)
        assert isinstance(capped, HorizonCap)
        assert capped.u_max == 5.0
        rule = TwoSidedExit(-1.0, 1.0)
        assert with_horizon(rule, 5.0) is rule


class TestSimulatePayoff:
    """simulate_payoff関数のテスト"""

    def test_on_barrier(self, e_box):
        """境界上から出発すれば即停止で 0"""
        est = simulate_payoff(e_box, TwoSidedExit(-1.0, 1.0), -1.0, n_paths=10)
        assert est.mean == 0.0
        assert est.stderr == 0.0
        assert est.clock is None

    def test_outside_region(self, e_box):
        """継続領域の外からは DomainError"""
        with pytest.raises(DomainError):
            simulate_payoff(e_box, TwoSidedExit(-1.0, 1.0), 1.5, n_paths=10)

    def test_argument_checks(self, e_box):
        """パス数と刻み幅の検査"""
        rule = TwoSidedExit(-1.0, 1.0)
        with pytest.raises(DomainError):
            simulate_payoff(e_box, rule, 0.0, n_paths=1)
        with pytest.raises(DomainError):
            simulate_payoff(e_box, rule, 0.0, n_paths=10, step_u=0.0)

    def test_deterministic_across_workers(self, e_box):
        """同じシードならワーカー数によらず同じ推定値"""
        kwargs = dict(n_paths=400, step_u=0.01, seed=7, block=100)
        rule = TwoSidedExit(-1.0, 1.0)
        one = simulate_payoff(e_box, rule, 0.0, workers=1, **kwargs)
        four = simulate_payoff(e_box, rule, 0.0, workers=4, **kwargs)
        assert one.mean == four.mean
        assert one.stderr == four.stderr

    def test_seed_changes_estimate(self, e_box):
        """シードが違えば推定値も違う"""
        rule = TwoSidedExit(-1.0, 1.0)
        a = simulate_payoff(e_box, rule, 0.0, n_paths=200, step_u=0.01, seed=1)
        b = simulate_payoff(e_box, rule, 0.0, n_paths=200, step_u=0.01, seed=2)
        assert a.mean != b.mean

    def test_expected_exit_time(self, e_box):
        """f = 1 の区間からの退出では利得は退出時刻 (期待値 1)"""
        est = simulate_payoff(
            e_box, TwoSidedExit(-1.0, 1.0), 0.0, n_paths=2000, step_u=0.005, seed=11
        )
        assert abs(est.mean - 1.0) <= 4.0 * est.stderr + 0.02
        assert est.truncated_fraction == 0.0
        assert est.failed_paths == 0
        assert est.clock is not None
        assert est.clock.mean_t == pytest.approx(est.mean, rel=1e-9)

    def test_antithetic_pairs(self, e_box):
        """対称変量法ではパス数が偶数に切り上がる"""
        est = simulate_payoff(
            e_box,
            TwoSidedExit(-1.0, 1.0),
            0.0,
            n_paths=301,
            step_u=0.01,
            block=100,
            antithetic=True,
        )
        assert est.n_paths % 2 == 0
        assert est.antithetic

    def test_truncation_reported(self, e_asym):
        """時間上限に達したパスの割合が記録される"""
        rule = HorizonCap(0.5, LeftExit(-2.5))
        est = simulate_payoff(e_asym, rule, 0.0, n_paths=200, step_u=0.01)
        assert est.truncated_fraction > 0.5
        assert est.rule == "left[-2.5]@u<=0.5"

    @pytest.mark.slow
    @pytest.mark.parametrize("bridge", [False, True])
    def test_box_optimum(self, e_box, bridge):
        """最適ルール (-2, 2) の推定値は V(0) = 2 と整合する"""
        est = simulate_payoff(
            e_box,
            TwoSidedExit(-2.0, 2.0),
            0.0,
            n_paths=4000,
            step_u=0.005,
            seed=3,
            bridge=bridge,
        )
        assert abs(est.mean - 2.0) <= 4.0 * est.stderr + 0.03


class TestCalibration:
    """E-BOX の最適ルールと θ ドリフト問題での推定の較正"""

    @pytest.mark.slow
    def test_coverage_over_seeds(self, e_box):
        """20 シード中 18 回以上で 3 stderr の区間が V(0) = 2 を含む"""
        rule = TwoSidedExit(-2.0, 2.0)
        covered = 0
        for seed in range(20):
            est = simulate_payoff(e_box, rule, 0.0, n_paths=2000, step_u=1e-3, seed=seed)
            if abs(zscore(est, 2.0)) <= 3.0:
                covered += 1
        assert covered >= 18

    @pytest.mark.slow
    def test_step_halving(self, e_box):
        """刻み幅を半分にしても平均は 4 combined stderr 以内"""
        rule = TwoSidedExit(-2.0, 2.0)
        coarse = simulate_payoff(e_box, rule, 0.0, n_paths=4000, step_u=2e-3, seed=5)
        fine = simulate_payoff(e_box, rule, 0.0, n_paths=4000, step_u=1e-3, seed=5)
        combined = math.hypot(coarse.stderr, fine.stderr)
        assert abs(coarse.mean - fine.mean) <= 4.0 * combined

    @pytest.mark.slow
    def test_same_in_natural_coordinates(self, theta_drift):
        """元の座標のルールと自然尺度に写したルールで推定値が一致する"""
        natural, cmap = transform_problem(theta_drift)
        a_nat, b_nat, y0 = (float(cmap.p(np.asarray(v))) for v in (-1.0, 1.0, 0.0))
        kwargs = dict(n_paths=4000, step_u=1e-3)
        original = simulate_payoff(theta_drift, TwoSidedExit(-1.0, 1.0), 0.0, seed=8, **kwargs)
        mapped = simulate_payoff(natural, TwoSidedExit(a_nat, b_nat), y0, seed=8, **kwargs)
        assert mapped.mean == pytest.approx(original.mean, rel=1e-9)

        other = simulate_payoff(natural, TwoSidedExit(a_nat, b_nat), y0, seed=9, **kwargs)
        combined = math.hypot(original.stderr, other.stderr)
        assert abs(original.mean - other.mean) <= 3.0 * combined


class TestZscore:
    """zscore関数のテスト"""

    def make(self, mean, stderr):
        return Estimate(
            rule="two_sided[-1,1]", x0=0.0, mean=mean, stderr=stderr, n_paths=10, seed=0,
            step_u=0.01,
        )

    def test_regular(self):
        """(mean - reference) / stderr"""
        assert zscore(self.make(2.1, 0.05), 2.0) == pytest.approx(2.0)

    def test_zero_stderr(self):
        """stderr = 0 なら一致で 0, 不一致で符号付き無限大"""
        assert zscore(self.make(0.0, 0.0), 0.0) == 0.0
        assert zscore(self.make(0.0, 0.0), 1.0) == -math.inf


class TestDiscountedCrossCheck:
    """割引付き問題のシューティング解との突き合わせ"""

    @pytest.mark.slow
    def test_ou_shooting(self, ou):
        """OU 問題の最適ルールの推定値は V(0) と整合する"""
        solution = solve_shooting(ou)
        rule = TwoSidedExit(solution.x1s, solution.x2s)
        est = simulate_payoff(ou, rule, 0.0, n_paths=20000, step_u=1e-3, seed=42, workers=4)
        assert abs(est.mean - solution.value.value(0.0)) <= 4.0 * est.stderr + 0.005
