"""設定モジュールのテスト"""

import os
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from integral_stopping.config import Settings


class TestSettings:
    """Settings クラスのテスト"""

    def test_default_values(self):
        """デフォルト値が正しく設定されているかテスト"""
        settings = Settings()

        assert settings.seed == 42
        assert settings.root_tol == 1e-12
        assert settings.shoot_scan_points == 120
        assert settings.smooth_fit_tol == 1e-6
        assert settings.residual_tol == 1e-7
        assert settings.mc_paths == 100_000
        assert settings.mc_workers == 1
        assert settings.log_level == "INFO"

    @patch.dict(
        os.environ,
        {
            "ISTOP_SEED": "7",
            "ISTOP_MC_PATHS": "5000",
            "ISTOP_MC_STEP": "0.01",
            "ISTOP_SHOOT_WINDOW_FACTOR": "10",
            "ISTOP_LOG_LEVEL": "DEBUG",
        },
    )
    def test_environment_variables(self):
        """環境変数からの設定読み込みテスト"""
        settings = Settings()

        assert settings.seed == 7
        assert settings.mc_paths == 5000
        assert settings.mc_step == 0.01
        assert settings.shoot_window_factor == 10.0
        assert settings.log_level == "DEBUG"

    @patch.dict(os.environ, {"istop_oracle_tol": "1e-6"})
    def test_case_insensitive(self):
        """環境変数名の大文字小文字は区別しない"""
        settings = Settings()

        assert settings.oracle_tol == 1e-6

    @patch.dict(os.environ, {"SEED": "99"})
    def test_prefix_required(self):
        """接頭辞のない変数は読まない"""
        settings = Settings()

        assert settings.seed == 42

    @patch.dict(os.environ, {"ISTOP_MC_PATHS": "many"})
    def test_invalid_value(self):
        """型が合わない値は ValidationError"""
        with pytest.raises(ValidationError):
            Settings()

    def test_dump(self):
        """JSON に書き出せる"""
        dumped = Settings().model_dump()

        assert dumped["mc_umax"] == 1e4
        assert "quad_tol" in dumped
