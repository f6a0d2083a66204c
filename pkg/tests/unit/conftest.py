"""共通フィクスチャ (参照問題)"""

from pathlib import Path

import pytest

from integral_stopping.funcmodel import ProblemSpec
from integral_stopping.problem_loader import load_problem, parse_problem

PROBLEMS_DIR = Path(__file__).resolve().parents[2] / "problems"

UNIT_SIGMA = [{"lo": "-inf", "hi": "inf", "form": "constant", "params": {"c": 1.0}}]


def constant(lo, hi, c):
    return {"lo": lo, "hi": hi, "form": "constant", "params": {"c": c}}


def box_data(kappa: float = 1.0, lam: float = 0.0) -> dict:
    """f = 1 on (-1, 1), -kappa outside, sigma = 1"""
    return {
        "name": f"box_{kappa}",
        "lambda": lam,
        "sigma": UNIT_SIGMA,
        "f": [
            constant("-inf", -1.0, -kappa),
            constant(-1.0, 1.0, 1.0),
            constant(1.0, "inf", -kappa),
        ],
    }


def box_problem(kappa: float = 1.0) -> ProblemSpec:
    return parse_problem(box_data(kappa)).with_template()


def reference(name: str) -> ProblemSpec:
    return load_problem(PROBLEMS_DIR / f"{name}.json")


@pytest.fixture
def e_box() -> ProblemSpec:
    return box_problem(1.0)


@pytest.fixture
def e_exp() -> ProblemSpec:
    return reference("e_exp").with_template()


@pytest.fixture
def e_asym() -> ProblemSpec:
    return reference("e_asym").with_template()


@pytest.fixture
def e_heavy() -> ProblemSpec:
    return reference("e_heavy").with_template()


@pytest.fixture
def ou() -> ProblemSpec:
    return reference("ou").with_template()


@pytest.fixture
def theta_drift() -> ProblemSpec:
    return reference("theta_drift").with_template()


@pytest.fixture
def problem_file():
    """参照問題ファイルのパスを返す関数"""

    def path(name: str) -> str:
        return str(PROBLEMS_DIR / f"{name}.json")

    return path


@pytest.fixture
def ou_root() -> float:
    """3 - 4 Phi(x) = 0 の正の根"""
    return 0.6744897501960817
