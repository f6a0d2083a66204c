"""設定管理モジュール"""

from pydantic import Field
from pydantic_settings import BaseSettings


class Settings(BaseSettings):
    """アプリケーション設定"""

    # 乱数設定
    seed: int = Field(default=42, description="モンテカルロの既定シード")

    # 根探索・積分の許容誤差
    root_tol: float = Field(default=1e-12, description="二分法の許容誤差")
    bracket_bound: float = Field(
        default=1e6, description="片側無限区間でのブラケット拡大の上限"
    )
    quad_tol: float = Field(default=1e-10, description="求積の許容誤差")
    scale_refine_tol: float = Field(
        default=1e-10, description="スケール関数グリッドの細分化許容誤差"
    )

    # 常微分方程式・シューティング設定
    ivp_tol: float = Field(default=1e-10, description="初期値問題の局所許容誤差")
    blowup: float = Field(default=1e12, description="発散判定のしきい値")
    shoot_scan_points: int = Field(default=120, description="x1走査の点数")
    shoot_window_factor: float = Field(
        default=50.0, description="走査窓の幅係数 (x2r - x1l の倍数)"
    )
    shoot_resid_tol: float = Field(default=1e-9, description="シューティング残差の許容誤差")

    # 検証設定
    smooth_fit_tol: float = Field(default=1e-6, description="スムースフィットの許容誤差")
    residual_tol: float = Field(default=1e-7, description="ODE残差の許容誤差")
    validation_cells: int = Field(default=64, description="検証グリッドのセル数")

    # オラクル設定
    oracle_tol: float = Field(default=1e-8, description="グリーン関数オラクルの許容誤差")
    oracle_max_expansions: int = Field(
        default=60, description="片側オラクルの最大拡大回数"
    )

    # モンテカルロ設定
    mc_paths: int = Field(default=100_000, description="モンテカルロのパス数")
    mc_step: float = Field(default=1e-3, description="自然尺度時計の刻み幅")
    mc_umax: float = Field(default=1e4, description="片側ルールの時間上限")
    mc_block: int = Field(default=4096, description="1ブロックあたりのパス数")
    mc_workers: int = Field(default=1, description="ブロック並列のワーカー数")

    # ログ設定
    log_level: str = Field(default="INFO", description="ログレベル")

    model_config = {
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "env_prefix": "ISTOP_",
        "case_sensitive": False,
    }
