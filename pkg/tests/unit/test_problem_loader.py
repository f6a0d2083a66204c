"""問題ファイル読み込みモジュールのテスト"""

import json
import math
import os
import tempfile

import pytest

from integral_stopping.errors import ProblemFileError
from integral_stopping.problem_loader import interval_to_json, load_problem, parse_problem

from .conftest import box_data, constant


class TestParseProblem:
    """parse_problem関数のテスト"""

    def test_box(self):
        """E-BOX の辞書から問題を作る"""
        spec = parse_problem(box_data())
        assert spec.interval == (-math.inf, math.inf)
        assert spec.lam == 0.0
        assert spec.is_driftless
        assert len(spec.f.segments) == 3
        assert spec.template is None

    def test_name_override(self):
        """name 引数が優先される"""
        assert parse_problem(box_data(), name="other").name == "other"

    def test_lambda_alias(self):
        """lambda キーで割引率を読む"""
        assert parse_problem(box_data(lam=2.0)).is_discounted

    def test_negative_lambda(self):
        """負の割引率は拒否"""
        with pytest.raises(ProblemFileError):
            parse_problem(box_data(lam=-1.0))

    def test_gap_between_segments(self):
        """区間の隙間は segment と field を指して失敗する"""
        data = box_data()
        data["f"][1] = constant(-0.5, 1.0, 1.0)
        with pytest.raises(ProblemFileError) as excinfo:
            parse_problem(data)
        assert excinfo.value.function == "f"
        assert excinfo.value.segment == 1
        assert excinfo.value.field == "lo"
        assert excinfo.value.exit_code == 4

    def test_first_segment_must_start_at_interval(self):
        """最初の区間は状態区間の左端から"""
        data = box_data()
        data["f"][0] = constant(-5.0, -1.0, -1.0)
        with pytest.raises(ProblemFileError) as excinfo:
            parse_problem(data)
        assert excinfo.value.segment == 0

    def test_unknown_form(self):
        """未知の関数形"""
        data = box_data()
        data["f"][2] = {"lo": 1.0, "hi": "inf", "form": "sine", "params": {}}
        with pytest.raises(ProblemFileError) as excinfo:
            parse_problem(data)
        assert excinfo.value.function == "f"
        assert excinfo.value.segment == 2

    def test_missing_param(self):
        """関数形のパラメータ不足"""
        data = box_data()
        data["f"][2] = {"lo": 1.0, "hi": "inf", "form": "exp", "params": {"c": -1.0}}
        with pytest.raises(ProblemFileError) as excinfo:
            parse_problem(data)
        assert excinfo.value.field == "params.a"

    def test_power_too_close(self):
        """|x - x0| < 1 にかかるべき項"""
        data = box_data()
        data["f"][0] = {
            "lo": "-inf",
            "hi": -1.0,
            "form": "power",
            "params": {"c": -1.0, "p": -2.0, "x0": -1.5},
        }
        with pytest.raises(ProblemFileError) as excinfo:
            parse_problem(data)
        assert excinfo.value.field == "params"

    def test_empty_interval(self):
        """空の状態区間"""
        data = box_data()
        data["state_interval"] = [1.0, 1.0]
        with pytest.raises(ProblemFileError):
            parse_problem(data)

    def test_normal_cdf_form(self, ou):
        """normal_cdf は a + k Phi(s (x - x0))"""
        assert ou.f.value(0.0) == pytest.approx(1.0)
        assert ou.f.value(-0.5) == pytest.approx(ou.f.value(0.5), abs=1e-12)
        assert ou.b.value(2.0) == pytest.approx(2.0)


class TestLoadProblem:
    """load_problem関数のテスト"""

    def test_load_from_file(self):
        """ファイルから読み込む"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "box.json")
            data = box_data()
            del data["name"]
            with open(path, "w", encoding="utf-8") as f:
                json.dump(data, f)

            spec = load_problem(path)

            assert spec.name == "box"
            assert spec.f.value(0.0) == 1.0

    def test_missing_file(self):
        """存在しないファイル"""
        with pytest.raises(ProblemFileError):
            load_problem("/nonexistent/problem.json")

    def test_invalid_json(self):
        """壊れた JSON"""
        with tempfile.TemporaryDirectory() as temp_dir:
            path = os.path.join(temp_dir, "broken.json")
            with open(path, "w", encoding="utf-8") as f:
                f.write("{not json")
            with pytest.raises(ProblemFileError):
                load_problem(path)

    def test_reference_files(self, problem_file):
        """同梱の参照問題はすべて読み込める"""
        for name in ("e_box", "e_exp", "e_asym", "e_heavy", "ou", "theta_drift"):
            spec = load_problem(problem_file(name))
            assert spec.name == name


class TestIntervalToJson:
    """interval_to_json関数のテスト"""

    def test_infinite_ends(self):
        """無限端は文字列になる"""
        assert interval_to_json((-math.inf, 2.0)) == ["-inf", 2.0]
