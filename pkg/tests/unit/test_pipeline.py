"""コマンド処理モジュールのテスト"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from integral_stopping.errors import (
    CoefficientError,
    NoOptimumError,
    NotSolvableError,
    PreconditionError,
    ProblemFileError,
)
from integral_stopping.htransform import ClassKind
from integral_stopping.mcsim import Estimate, HorizonCap, LeftExit, TwoSidedExit
from integral_stopping.pipeline import (
    SEQUENCE_PREVIEW,
    curve_rows,
    curve_window,
    load_and_validate,
    mc_rows,
    oracle_rows,
    run_classify,
    run_payoff,
    run_solve,
    scale_rows,
    solution_report,
    stop_rule,
    trajectory_rows,
)
from integral_stopping.shooting import solve_shooting
from integral_stopping.solver import NoOptimum, OneSidedLeft, TwoSided, solve


class TestLoadAndValidate:
    """load_and_validate関数のテスト"""

    def test_reference_problem(self, problem_file):
        """参照問題は検査を通りテンプレートが付く"""
        spec = load_and_validate(problem_file("e_box"))
        assert spec.name == "e_box"
        assert spec.template.as_tuple() == (-1.0, -1.0, 1.0, 1.0)

    def test_sigma_zero(self, problem_file):
        """sigma = 0 の区間は CoefficientError"""
        with pytest.raises(CoefficientError) as excinfo:
            load_and_validate(problem_file("sigma_zero"))
        assert "Engelbert-Schmidt" in excinfo.value.message
        assert "segment 1" in excinfo.value.message
        assert excinfo.value.exit_code == 4
        assert not excinfo.value.report.passed

    def test_missing_file(self, tmp_path):
        """存在しないファイルは ProblemFileError"""
        with pytest.raises(ProblemFileError):
            load_and_validate(tmp_path / "missing.json")


class TestRunClassify:
    """run_classify関数のテスト"""

    def test_exp(self, e_exp):
        """E-EXP は Case1"""
        report = run_classify(e_exp)
        assert report.classification.kind is ClassKind.CASE1
        assert not report.natural_scale
        assert report.state_interval == ["-inf", "inf"]

    def test_drift_uses_natural_scale(self, theta_drift):
        """ドリフトがあれば自然尺度で分類する"""
        report = run_classify(theta_drift)
        assert report.natural_scale

    def test_discounted(self, ou):
        """割引のある問題は PreconditionError"""
        with pytest.raises(PreconditionError):
            run_classify(ou)

    def test_tolerances_recorded(self, e_box):
        """許容誤差がレポートに残る"""
        report = run_classify(e_box)
        assert report.tolerances["root_tol"] == 1e-12


class TestRunSolve:
    """run_solve関数とsolution_report関数のテスト"""

    def test_box(self, e_box):
        """E-BOX は TwoSided"""
        spec, solution = run_solve(e_box)
        assert spec is e_box
        assert isinstance(solution, TwoSided)
        report = solution_report(spec, solution)
        assert report.kind == "TwoSided"
        assert report.x1s == pytest.approx(-2.0, abs=1e-8)
        assert report.validation.passed
        assert len(report.value_samples) == 21
        assert report.value_samples[10][1] == pytest.approx(2.0, abs=1e-6)

    def test_exp_report(self, e_exp):
        """E-EXP のレポートには停止時刻列の先頭が入る"""
        spec, solution = run_solve(e_exp)
        assert isinstance(solution, NoOptimum)
        report = solution_report(spec, solution)
        assert report.kind == "NoOptimum"
        assert report.message == solution.message
        assert report.value_finite
        assert len(report.sequence) == SEQUENCE_PREVIEW
        assert report.sequence[0].n == 1

    def test_heavy_report(self, e_heavy):
        """V* 無限なら value_finite は False"""
        spec, solution = run_solve(e_heavy)
        report = solution_report(spec, solution)
        assert not report.value_finite
        assert report.value_samples == []

    def test_asym_report(self, e_asym):
        """片側解は alpha を報告する"""
        spec, solution = run_solve(e_asym)
        report = solution_report(spec, solution)
        assert report.alpha == pytest.approx(-2.5, abs=1e-8)
        assert report.x1s is None

    def test_json_dump(self, e_heavy):
        """無限大を含むレポートも JSON に書ける"""
        spec, solution = run_solve(e_heavy)
        text = solution_report(spec, solution).model_dump_json()
        assert '"kind":"NoOptimum"' in text


class TestRunPayoff:
    """run_payoff関数のテスト"""

    def test_box(self, e_box):
        """閉じた式とオラクルが一致する"""
        report = run_payoff(e_box, -1.0, 1.0, points=5)
        assert len(report.rows) == 5
        assert report.max_abs_diff <= 1e-6
        assert report.level == pytest.approx(0.0, abs=1e-12)
        assert report.rows[2][1] == pytest.approx(1.0, abs=1e-8)

    def test_discounted(self, ou):
        """割引のある問題は PreconditionError"""
        with pytest.raises(PreconditionError):
            run_payoff(ou, -1.0, 1.0)


class TestStopRule:
    """stop_rule関数のテスト"""

    def test_two_sided(self, e_box):
        """TwoSided は両側退出ルール"""
        rule = stop_rule(solve(e_box))
        assert isinstance(rule, TwoSidedExit)

    def test_one_sided_capped(self, e_asym):
        """片側解には時間上限が付く"""
        rule = stop_rule(solve(e_asym), umax=20.0)
        assert isinstance(rule, HorizonCap)
        assert isinstance(rule.inner, LeftExit)
        assert rule.u_max == 20.0

    def test_no_optimum(self, e_exp):
        """NoOptimum にはルールがない"""
        with pytest.raises(NoOptimumError):
            stop_rule(solve(e_exp))


class TestOracleRows:
    """oracle_rows関数のテスト"""

    def test_box(self, e_box):
        """解の価値とオラクルが一致し、停止領域では 0"""
        rows = oracle_rows(e_box, solve(e_box), [-3.0, -1.0, 0.0, 1.5])
        assert rows[0][2] == 0.0
        assert rows[2][1] == pytest.approx(2.0, abs=1e-6)
        assert max(r[3] for r in rows) <= 1e-6

    def test_default_points(self, e_box):
        """既定では境界の間の 21 点"""
        rows = oracle_rows(e_box, solve(e_box))
        assert len(rows) == 21

    def test_one_sided(self, e_asym):
        """片側解は共境界を広げた極限と比べる"""
        solution = solve(e_asym)
        assert isinstance(solution, OneSidedLeft)
        rows = oracle_rows(e_asym, solution, [-3.0, 0.0])
        assert rows[0][2] == 0.0
        assert rows[1][2] == pytest.approx(4.25, abs=1e-5)

    def test_no_optimum(self, e_exp):
        """NoOptimum は NoOptimumError"""
        with pytest.raises(NoOptimumError):
            oracle_rows(e_exp, solve(e_exp))


class TestMcRows:
    """mc_rows関数のテスト"""

    @patch("integral_stopping.pipeline.simulate_payoff")
    def test_zscore(self, mock_simulate, e_box):
        """推定値と解の価値から z を計算する"""
        mock_simulate.return_value = Estimate(
            rule="two_sided[-2,2]", x0=0.0, mean=2.1, stderr=0.05, n_paths=1000, seed=42,
            step_u=0.001,
        )
        rows = mc_rows(e_box, solve(e_box), [0.0], n_paths=1000)

        assert len(rows) == 1
        rule, x0, mean, stderr, z, truncated = rows[0]
        assert rule == "two_sided[-2,2]"
        assert z == pytest.approx(2.0, abs=1e-4)
        assert truncated == 0.0
        args, kwargs = mock_simulate.call_args
        assert isinstance(args[1], TwoSidedExit)
        assert kwargs["n_paths"] == 1000


class TestCurves:
    """curve_rows, scale_rows, curve_window関数のテスト"""

    def test_curve_rows(self, e_box):
        """(x, V, dV) の行"""
        rows = curve_rows(solve(e_box), -2.0, 2.0, points=5)
        assert [r[0] for r in rows] == [-2.0, -1.0, 0.0, 1.0, 2.0]
        assert rows[2][1] == pytest.approx(2.0, abs=1e-6)
        assert rows[2][2] == pytest.approx(0.0, abs=1e-8)

    def test_curve_rows_infinite(self, e_heavy):
        """価値が無限大なら NoOptimumError"""
        with pytest.raises(NoOptimumError):
            curve_rows(solve(e_heavy), -1.0, 1.0)

    def test_window(self, e_box):
        """台の両側に 1/4 の余白"""
        lo, hi = curve_window(e_box, solve(e_box))
        assert lo == pytest.approx(-3.0, abs=1e-8)
        assert hi == pytest.approx(3.0, abs=1e-8)

    def test_scale_rows(self, theta_drift):
        """(x, p, dp) の行"""
        rows = scale_rows(theta_drift, -1.0, 1.0, points=3)
        xs = np.asarray([r[0] for r in rows])
        assert np.allclose([r[1] for r in rows], np.expm1(xs), atol=1e-9)
        assert rows[1][2] == pytest.approx(1.0, abs=1e-9)

    def test_trajectory_needs_shooting(self, e_box):
        """厳密解の軌道は出せない"""
        with pytest.raises(NotSolvableError):
            trajectory_rows(solve(e_box))

    def test_trajectory_rows_end_at_boundary(self, e_box):
        """シューティング解の軌道は x2* で終わる"""
        solution = solve_shooting(e_box, scan_points=36)
        rows = trajectory_rows(solution)
        assert rows[0][1] == pytest.approx(0.0, abs=1e-9)
        assert rows[-1][0] <= solution.x2s
        assert all(math.isfinite(r[2]) for r in rows)
