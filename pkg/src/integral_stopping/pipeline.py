"""コマンドごとの処理の組み立てモジュール"""

import math
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .config import Settings
from .errors import (
    CoefficientError,
    NoOptimumError,
    NotSolvableError,
    PreconditionError,
    ValidationFailedError,
)
from .funcmodel import (
    Direction,
    ExtFloat,
    IdentityMap,
    ProblemSpec,
    validate_coeffs,
)
from .htransform import Classification, h_for
from .logging_cfg import logger
from .mcsim import (
    Estimate,
    LeftExit,
    RightExit,
    StopRule,
    TwoSidedExit,
    simulate_payoff,
    with_horizon,
    zscore,
)
from .oracle import green_value, green_value_one_sided
from .problem_loader import interval_to_json, load_problem
from .scale import PulledBackCurve, pull_back, transform_problem
from .shooting import (
    TrajectoryValue,
    ValidationReport,
    solve_shooting,
    validate_solution,
)
from .solver import (
    NoOptimum,
    OneSidedLeft,
    OneSidedRight,
    Solution,
    TwoSided,
    ValueCurve,
    payoff_two_sided,
    solve,
)

settings = Settings()

SEQUENCE_PREVIEW = 5


def load_and_validate(path: Union[str, Path]) -> ProblemSpec:
    """
    問題ファイルを読み込み、係数と f の形を検査する

    Args:
        path: 問題ファイル

    Returns:
        符号テンプレート付きの ProblemSpec
    """
    spec = load_problem(path)
    report = validate_coeffs(spec.b, spec.sigma, spec.f)
    if not report.passed:
        failure = report.failures()[0]
        raise CoefficientError(
            f"{failure.name} failed for {failure.function}"
            + (f" segment {failure.segment}" if failure.segment is not None else "")
            + (f": {failure.detail}" if failure.detail else ""),
            report,
        )
    spec = spec.with_template()
    logger.info(f"Problem '{spec.name}' passed coefficient and shape checks")
    return spec


def _tolerances() -> Dict[str, float]:
    return {
        "root_tol": settings.root_tol,
        "quad_tol": settings.quad_tol,
        "ivp_tol": settings.ivp_tol,
        "shoot_resid_tol": settings.shoot_resid_tol,
        "smooth_fit_tol": settings.smooth_fit_tol,
        "residual_tol": settings.residual_tol,
        "oracle_tol": settings.oracle_tol,
    }


class ClassifyReport(BaseModel):
    """classify コマンドの出力"""

    problem: str
    state_interval: List[Union[float, str]]
    natural_scale: bool
    classification: Classification
    tolerances: Dict[str, float] = Field(default_factory=_tolerances)


class SequenceRecord(BaseModel):
    n: int
    a: float
    b: float
    c: float


class SolutionReport(BaseModel):
    """solve / shoot コマンドの出力"""

    problem: str
    kind: str
    x1s: Optional[float] = None
    x2s: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    cstar: Optional[float] = None
    value_finite: bool = True
    value_samples: List[Tuple[float, float]] = Field(default_factory=list)
    message: Optional[str] = None
    classification: Optional[Classification] = None
    validation: Optional[ValidationReport] = None
    sequence: List[SequenceRecord] = Field(default_factory=list)
    coordinates: str = "original"
    notes: List[str] = Field(default_factory=list)
    tolerances: Dict[str, float] = Field(default_factory=_tolerances)


class PayoffReport(BaseModel):
    """payoff コマンドの出力"""

    problem: str
    a: float
    b: float
    level: float
    rows: List[Tuple[float, float, float, float]]
    max_abs_diff: ExtFloat
    tolerances: Dict[str, float] = Field(default_factory=_tolerances)


def run_classify(spec: ProblemSpec) -> ClassifyReport:
    """自然尺度に移してから h 変換で分類する"""
    if spec.lam != 0.0:
        raise PreconditionError("classification applies to undiscounted problems", "lambda = 0")
    natural, cmap = transform_problem(spec)
    classification = h_for(natural).classify()
    return ClassifyReport(
        problem=spec.name,
        state_interval=interval_to_json(spec.interval),
        natural_scale=not isinstance(cmap, IdentityMap),
        classification=classification,
    )


def _sample_points(spec: ProblemSpec, solution: Solution, count: int = 21) -> np.ndarray:
    assert spec.template is not None
    t = spec.template
    width = max(t.x2r - t.x1l, 1.0)
    if isinstance(solution, TwoSided):
        return np.linspace(solution.x1s, solution.x2s, count)
    if isinstance(solution, OneSidedLeft):
        return np.linspace(solution.alpha, t.x2r + width, count)
    if isinstance(solution, OneSidedRight):
        return np.linspace(t.x1l - width, solution.beta, count)
    return np.linspace(t.x1l - width, t.x2r + width, count)


def solution_report(
    spec: ProblemSpec, solution: Solution, coordinates: str = "original"
) -> SolutionReport:
    """解をレポートに変換する"""
    report = SolutionReport(
        problem=spec.name,
        kind=solution.kind,
        classification=getattr(solution, "classification", None),
        coordinates=coordinates,
        notes=list(solution.notes),
    )
    if isinstance(solution, TwoSided):
        report.x1s, report.x2s, report.cstar = solution.x1s, solution.x2s, solution.cstar
        report.validation = solution.validation
    elif isinstance(solution, OneSidedLeft):
        report.alpha = solution.alpha
    elif isinstance(solution, OneSidedRight):
        report.beta = solution.beta
    else:
        report.message = solution.message
        report.value_finite = solution.value is not None
        if solution.plan is not None:
            report.sequence = [
                SequenceRecord(n=s.n, a=s.a, b=s.b, c=s.c)
                for s in solution.plan.terms(SEQUENCE_PREVIEW)
            ]
    if solution.value is not None:
        xs = _sample_points(spec, solution)
        report.value_samples = [
            (float(x), float(v)) for x, v in zip(xs, solution.value.values(xs))
        ]
    return report


def run_solve(spec: ProblemSpec, natural_scale: bool = False) -> Tuple[ProblemSpec, Solution]:
    """
    問題を解く

    lambda > 0 なら元の座標でシューティング、lambda = 0 なら自然尺度で
    厳密解を作り元の座標へ戻して検証し直す。

    Args:
        spec: 問題
        natural_scale: True なら自然尺度のまま返す

    Returns:
        (解の座標系の問題, 解)
    """
    spec = spec.with_template()
    if spec.lam > 0.0:
        logger.info(f"lambda={spec.lam} > 0: solving '{spec.name}' by shooting")
        return spec, solve_shooting(spec)

    natural, cmap = transform_problem(spec)
    solution = solve(natural)
    if natural_scale or isinstance(cmap, IdentityMap):
        return natural if natural_scale else spec, solution

    pulled = pull_back(solution, cmap)
    if isinstance(pulled, TwoSided):
        report = validate_solution(spec, pulled.value, pulled.x1s, pulled.x2s)
        if not report.passed:
            raise ValidationFailedError(
                f"pulled-back solution failed validation: {', '.join(report.reasons)}", report
            )
        pulled = replace(pulled, validation=report)
    return spec, pulled


def run_shoot(
    spec: ProblemSpec,
    window: Optional[Tuple[float, float]] = None,
    tol: Optional[float] = None,
) -> TwoSided:
    """元の座標で直接シューティングする"""
    return solve_shooting(spec.with_template(), window=window, tol=tol)


def trajectory_rows(solution: TwoSided) -> List[Tuple[float, float, float]]:
    """シューティング解の軌道を (x, V, W) の行にする"""
    if not isinstance(solution.value, TrajectoryValue):
        raise NotSolvableError("trajectory dump needs a shooting solution")
    traj = solution.value.trajectory
    keep = traj.nodes <= solution.x2s
    return [(float(x), float(v), float(w)) for x, v, w in zip(traj.nodes[keep], traj.V[keep], traj.W[keep])]


def run_payoff(
    spec: ProblemSpec, a: float, b: float, points: int = 21
) -> PayoffReport:
    """
    (a, b) からの退出ルールの期待利得をオラクルと突き合わせる

    Args:
        spec: 割引なしの問題
        a: 左端
        b: 右端
        points: 比較点数

    Returns:
        PayoffReport
    """
    if spec.lam != 0.0:
        raise PreconditionError("payoff needs an undiscounted problem", "lambda = 0")
    natural, cmap = transform_problem(spec)
    ya, yb = float(cmap.p(np.asarray(a))), float(cmap.p(np.asarray(b)))
    inner = payoff_two_sided(h_for(natural), ya, yb)
    curve: ValueCurve = inner if isinstance(cmap, IdentityMap) else PulledBackCurve(inner, cmap)
    xs = np.linspace(a, b, points)
    rows = []
    for x in xs:
        solver_value = curve.value(float(x))
        oracle_value = green_value(natural, ya, yb, float(cmap.p(np.asarray(x))))
        rows.append((float(x), solver_value, oracle_value, abs(solver_value - oracle_value)))
    worst = max(r[3] for r in rows)
    logger.info(f"Payoff on ({a}, {b}): max |solver - oracle| = {worst:.3g}")
    return PayoffReport(
        problem=spec.name, a=a, b=b, level=inner.level, rows=rows, max_abs_diff=worst
    )


def stop_rule(solution: Solution, umax: Optional[float] = None) -> StopRule:
    """解から停止ルールを作る (片側ルールには時間上限を付ける)"""
    if isinstance(solution, TwoSided):
        return TwoSidedExit(solution.x1s, solution.x2s)
    if isinstance(solution, OneSidedLeft):
        return with_horizon(LeftExit(solution.alpha), umax)
    if isinstance(solution, OneSidedRight):
        return with_horizon(RightExit(solution.beta), umax)
    if isinstance(solution, NoOptimum):
        raise NoOptimumError(f"{solution.message}: no stopping rule to simulate")
    raise NotSolvableError(f"{solution.kind}: no stopping rule to simulate")


def default_points(spec: ProblemSpec, solution: Solution) -> List[float]:
    """検証に使う既定の出発点"""
    assert spec.template is not None
    t = spec.template
    if isinstance(solution, TwoSided):
        return [float(x) for x in np.linspace(solution.x1s, solution.x2s, 21)]
    return [0.5 * (t.x1r + t.x2l)]


def oracle_rows(
    spec: ProblemSpec, solution: Solution, points: Optional[Sequence[float]] = None
) -> List[Tuple[float, float, float, float]]:
    """
    解の価値とグリーン関数オラクルの比較表

    Args:
        spec: 元の座標の問題
        solution: 元の座標の解
        points: 比較点 (省略時は既定の点)

    Returns:
        (x, solver, oracle, abs_diff) の行
    """
    if spec.lam != 0.0:
        raise PreconditionError("the Green oracle covers undiscounted problems only", "lambda = 0")
    if isinstance(solution, NoOptimum):
        raise NoOptimumError(f"{solution.message}: nothing to certify")
    natural, cmap = transform_problem(spec)
    xs = list(points) if points is not None else default_points(spec, solution)

    def y(x: float) -> float:
        return float(cmap.p(np.asarray(x)))

    rows = []
    for x in xs:
        solver_value = solution.value.value(x)
        if isinstance(solution, TwoSided):
            if x <= solution.x1s or x >= solution.x2s:
                oracle_value = 0.0
            else:
                oracle_value = green_value(natural, y(solution.x1s), y(solution.x2s), y(x))
        elif isinstance(solution, OneSidedLeft):
            oracle_value = (
                0.0 if x <= solution.alpha
                else green_value_one_sided(natural, Direction.LEFT, y(solution.alpha), y(x))
            )
        else:
            oracle_value = (
                0.0 if x >= solution.beta
                else green_value_one_sided(natural, Direction.RIGHT, y(solution.beta), y(x))
            )
        rows.append((float(x), solver_value, oracle_value, abs(solver_value - oracle_value)))
    return rows


def mc_rows(
    spec: ProblemSpec,
    solution: Solution,
    points: Optional[Sequence[float]] = None,
    n_paths: Optional[int] = None,
    step_u: Optional[float] = None,
    seed: Optional[int] = None,
    umax: Optional[float] = None,
    antithetic: bool = False,
    bridge: bool = False,
) -> List[Tuple[str, float, float, float, float, float]]:
    """
    モンテカルロ推定と解の価値の比較表

    Returns:
        (rule, x0, mean, stderr, z, truncated_fraction) の行
    """
    rule = stop_rule(solution, umax)
    xs = list(points) if points is not None else default_points(spec, solution)
    rows = []
    for x in xs:
        estimate: Estimate = simulate_payoff(
            spec, rule, x, n_paths=n_paths, step_u=step_u, seed=seed,
            antithetic=antithetic, bridge=bridge,
        )
        z = zscore(estimate, solution.value.value(x))
        rows.append(
            (estimate.rule, float(x), estimate.mean, estimate.stderr, z, estimate.truncated_fraction)
        )
    return rows


def curve_rows(
    solution: Solution, lo: float, hi: float, points: int = 201
) -> List[Tuple[float, float, float]]:
    """価値関数を (x, V, dV) の行にする"""
    if solution.value is None:
        raise NoOptimumError("the value function is infinite")
    xs = np.linspace(lo, hi, points)
    return [
        (float(x), float(v), float(d))
        for x, v, d in zip(xs, solution.value.values(xs), solution.value.derivatives(xs))
    ]


def scale_rows(
    spec: ProblemSpec, lo: float, hi: float, points: int = 201
) -> List[Tuple[float, float, float]]:
    """スケール関数を (x, p, dp) の行にする"""
    _, cmap = transform_problem(spec)
    xs = np.linspace(lo, hi, points)
    return [(float(x), float(p), float(d)) for x, p, d in zip(xs, cmap.p(xs), cmap.dp(xs))]


def curve_window(spec: ProblemSpec, solution: Solution) -> Tuple[float, float]:
    """曲線出力の既定の範囲 (台を含み両側に余白)"""
    xs = _sample_points(spec, solution)
    pad = 0.25 * (xs[-1] - xs[0])
    lo, hi = spec.interval
    left = xs[0] - pad
    right = xs[-1] + pad
    if math.isfinite(lo):
        left = max(left, lo + 1e-9 * (1.0 + abs(lo)))
    if math.isfinite(hi):
        right = min(right, hi - 1e-9 * (1.0 + abs(hi)))
    return float(left), float(right)
