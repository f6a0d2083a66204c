"""シューティング法による自由境界問題の求解と候補解の検証モジュール"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy.integrate import solve_ivp

from .config import Settings
from .errors import DomainError, NoRootError, NonConvergentError, ValidationFailedError
from .funcmodel import ExtFloat, ProblemSpec, gauss_legendre
from .logging_cfg import logger
from .solver import TwoSided, ValueCurve

settings = Settings()

TOUCH_RTOL = 1e-9
SLOPE_STEP = 1e-5

OdeRhs = Callable[[float, np.ndarray], np.ndarray]


class EventKind(str, Enum):
    W_ZERO = "W-zero"
    V_ZERO = "V-zero"
    BLOW_UP = "blow-up"
    DOMAIN_EDGE = "domain-edge"


@dataclass(frozen=True)
class Event:
    """軌道上のイベント (touch は V が符号を変えずに 0 に接したこと)"""

    x: float
    kind: EventKind
    v: float
    w: float
    touch: bool = False


@dataclass
class Trajectory:
    """(V, W = V') の軌道と区間ごとの密出力"""

    x1: float
    nodes: np.ndarray
    V: np.ndarray
    W: np.ndarray
    events: List[Event]
    pieces: List[Tuple[float, float, Any]] = field(default_factory=list)
    vmax: float = 0.0

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    def first(self, kind: EventKind) -> Optional[Event]:
        return next((e for e in self.events if e.kind is kind), None)

    def states(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """x での (V, W) を密出力から求める"""
        xs = np.asarray(x, dtype=float)
        flat = np.atleast_1d(xs).ravel()
        if np.any((flat < self.x1) | (flat > self.end)):
            raise DomainError(f"trajectory covers [{self.x1}, {self.end}] only")
        starts = np.asarray([p[0] for p in self.pieces])
        idx = np.clip(np.searchsorted(starts, flat, side="right") - 1, 0, len(self.pieces) - 1)
        v = np.empty_like(flat)
        w = np.empty_like(flat)
        for i in np.unique(idx):
            sel = idx == i
            y = self.pieces[i][2](flat[sel])
            v[sel], w[sel] = y[0], y[1]
        return v.reshape(xs.shape), w.reshape(xs.shape)

    def slopes(self, x: np.ndarray) -> np.ndarray:
        """x での dW/dx を各区間の密出力の中心差分で求める (ODE の右辺は使わない)"""
        xs = np.asarray(x, dtype=float)
        flat = np.atleast_1d(xs).ravel()
        if np.any((flat < self.x1) | (flat > self.end)):
            raise DomainError(f"trajectory covers [{self.x1}, {self.end}] only")
        starts = np.asarray([p[0] for p in self.pieces])
        idx = np.clip(np.searchsorted(starts, flat, side="right") - 1, 0, len(self.pieces) - 1)
        out = np.empty_like(flat)
        for i in np.unique(idx):
            sel = idx == i
            out[sel] = _dense_slope(self.pieces[i][2], flat[sel])
        return out.reshape(xs.shape)

    def state(self, x: float) -> Tuple[float, float]:
        v, w = self.states(np.asarray(x))
        return float(v), float(w)


def _dense_slope(solution: Any, t: np.ndarray) -> np.ndarray:
    """積分ステップごとの補間多項式で W を中心差分する"""
    step = SLOPE_STEP * np.maximum(1.0, np.abs(t))
    ts, interpolants = solution.ts, solution.interpolants
    k = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(interpolants) - 1)
    out = np.empty_like(t)
    for j in np.unique(k):
        sel = k == j
        poly = interpolants[j]
        out[sel] = (poly(t[sel] + step[sel])[1] - poly(t[sel] - step[sel])[1]) / (2.0 * step[sel])
    return out


def _cells(spec: ProblemSpec, start: float, end: float) -> List[Tuple[float, float]]:
    inner = sorted(
        {
            p
            for fn in (spec.b, spec.sigma, spec.f)
            for p in fn.breakpoints
            if start < p < end
        }
    )
    edges = [start, *inner, end]
    return list(zip(edges[:-1], edges[1:]))


def _rhs(spec: ProblemSpec, u: float, v: float) -> OdeRhs:
    """セル内で V' = W, W' = (2/sigma^2)(lambda V - b W - f)"""
    b, s, f = spec.b.cell(u, v), spec.sigma.cell(u, v), spec.f.cell(u, v)
    lam = spec.lam

    def rhs(x: float, y: np.ndarray) -> np.ndarray:
        t = np.asarray(x, dtype=float)
        sig = float(s(t))
        return np.array(
            [y[1], 2.0 / (sig * sig) * (lam * y[0] - float(b(t)) * y[1] - float(f(t)))]
        )

    return rhs


def _solve_cell(
    rhs: OdeRhs, u: float, v: float, y: np.ndarray, rtol: float, events: List[Any]
) -> Any:
    sol = solve_ivp(
        rhs,
        (u, v),
        y,
        method="DOP853",
        rtol=rtol,
        atol=1e-12,
        dense_output=True,
        events=events,
    )
    if sol.status == -1:
        raise NonConvergentError(f"IVP integration failed at [{u}, {v}]: {sol.message}")
    return sol


def _blow_up(x: float, y: np.ndarray) -> float:
    return settings.blowup - max(abs(y[0]), abs(y[1]))


_blow_up.terminal = True  # type: ignore[attr-defined]


def _v_down(x: float, y: np.ndarray) -> float:
    return y[0]


_v_down.terminal = True  # type: ignore[attr-defined]
_v_down.direction = -1  # type: ignore[attr-defined]


def _w_zero(x: float, y: np.ndarray) -> float:
    return y[1]


def _w_rise(x: float, y: np.ndarray) -> float:
    return y[1]


_w_rise.terminal = True  # type: ignore[attr-defined]
_w_rise.direction = 1  # type: ignore[attr-defined]


def _probe_dip(
    spec: ProblemSpec, x: float, y: np.ndarray, end: float, rtol: float
) -> Optional[Tuple[float, np.ndarray, List[Tuple[float, float, Any]]]]:
    """V の零点の先で W が再び 0 に戻る点 (V の極小) を探す"""
    pieces: List[Tuple[float, float, Any]] = []
    state = np.asarray(y, dtype=float)
    for u, v in _cells(spec, x, end):
        sol = _solve_cell(_rhs(spec, u, v), u, v, state, rtol, [_w_rise, _blow_up])
        stop = float(sol.t[-1])
        pieces.append((u, stop, sol.sol))
        if len(sol.t_events[0]):
            return float(sol.t_events[0][0]), sol.y_events[0][0], pieces
        if len(sol.t_events[1]):
            return None
        state = sol.y[:, -1]
    return None


def integrate_ivp(
    spec: ProblemSpec, x1: float, xmax: float, tol: Optional[float] = None
) -> Trajectory:
    """
    V(x1) = W(x1) = 0 から初期値問題を区分点をまたがずに積分する

    Args:
        spec: 問題
        x1: 左境界の候補
        xmax: 積分の右端
        tol: 局所許容誤差

    Returns:
        Trajectory (V の零点・接触・発散・右端到達で終了)
    """
    rtol = tol if tol is not None else settings.ivp_tol
    lo, hi = spec.interval
    if not (math.isfinite(x1) and lo <= x1 < hi):
        raise DomainError(f"x1={x1} outside state interval ({lo}, {hi})")
    if not xmax > x1:
        raise DomainError(f"xmax={xmax} must exceed x1={x1}")
    end = min(xmax, hi)
    start_tol = 1e-12 * (1.0 + abs(x1))

    pieces: List[Tuple[float, float, Any]] = []
    nodes: List[np.ndarray] = []
    states: List[np.ndarray] = []
    events: List[Event] = []
    y = np.zeros(2)
    vmax = 0.0
    wscale = 0.0

    def finish() -> Trajectory:
        grid = np.concatenate(nodes)
        values = np.concatenate(states, axis=1)
        return Trajectory(
            x1=x1,
            nodes=grid,
            V=values[0],
            W=values[1],
            events=events,
            pieces=pieces,
            vmax=vmax,
        )

    for u, v in _cells(spec, x1, end):
        rhs = _rhs(spec, u, v)
        sol = _solve_cell(rhs, u, v, y, rtol, [_v_down, _w_zero, _blow_up])
        stop = float(sol.t[-1])

        for xe, ye in zip(sol.t_events[1], sol.y_events[1]):
            if xe <= x1 + start_tol:
                continue
            before = sol.y[0][sol.t <= xe]
            seen = max(vmax, float(before.max()) if before.size else 0.0)
            rising = rhs(xe, ye)[1] > 0.0
            events.append(Event(float(xe), EventKind.W_ZERO, float(ye[0]), float(ye[1])))
            if rising and seen > 0.0 and abs(ye[0]) <= TOUCH_RTOL * max(1.0, seen):
                events.append(
                    Event(float(xe), EventKind.V_ZERO, float(ye[0]), float(ye[1]), touch=True)
                )
                keep = sol.t <= xe
                pieces.append((u, float(xe), sol.sol))
                nodes.append(np.append(sol.t[keep], xe))
                states.append(np.column_stack([sol.y[:, keep], ye]))
                vmax = seen
                return finish()

        pieces.append((u, stop, sol.sol))
        nodes.append(sol.t)
        states.append(sol.y)
        vmax = max(vmax, float(sol.y[0].max()))
        wscale = max(wscale, float(np.abs(sol.y[1]).max()))

        if len(sol.t_events[0]):
            xv, yv = float(sol.t_events[0][0]), sol.y_events[0][0]
            if vmax > 0.0 and abs(yv[1]) <= 1e-4 * max(1.0, wscale):
                probe = _probe_dip(spec, xv, yv, end, rtol)
                if probe is not None:
                    xw, yw, extra = probe
                    if abs(yw[0]) <= TOUCH_RTOL * max(1.0, vmax):
                        pieces.extend(extra)
                        nodes.append(np.asarray([xw]))
                        states.append(np.asarray(yw).reshape(2, 1))
                        events.append(
                            Event(xw, EventKind.V_ZERO, float(yw[0]), float(yw[1]), touch=True)
                        )
                        return finish()
            events.append(Event(xv, EventKind.V_ZERO, float(yv[0]), float(yv[1])))
            return finish()
        if len(sol.t_events[2]):
            xb, yb = float(sol.t_events[2][0]), sol.y_events[2][0]
            events.append(Event(xb, EventKind.BLOW_UP, float(yb[0]), float(yb[1])))
            return finish()
        y = sol.y[:, -1]

    events.append(Event(end, EventKind.DOMAIN_EDGE, float(y[0]), float(y[1])))
    return finish()


class ShotKind(str, Enum):
    HIT = "Hit"
    NO_RETURN = "NoReturn"
    IMMEDIATE_DROP = "ImmediateDrop"


@dataclass(frozen=True)
class ShotResult:
    """一回のシューティングの結果 (NoReturn は +inf, ImmediateDrop は -inf の残差)"""

    kind: ShotKind
    x1: float
    resid: float
    x2hat: Optional[float] = None
    trajectory: Optional[Trajectory] = None


def default_xmax(spec: ProblemSpec) -> float:
    spec = spec.with_template()
    assert spec.template is not None
    t = spec.template
    return min(t.x2r + settings.shoot_window_factor * (t.x2r - t.x1l), spec.interval[1])


def shoot_residual(
    spec: ProblemSpec, x1: float, xmax: Optional[float] = None
) -> ShotResult:
    """
    x1 から撃ったときの右境界での V' (残差)

    Args:
        spec: 問題
        x1: 左境界の候補
        xmax: 探索の右端 (省略時は x2r + 50 (x2r - x1l))

    Returns:
        ShotResult
    """
    xmax = xmax if xmax is not None else default_xmax(spec)
    trajectory = integrate_ivp(spec, x1, xmax)
    hit = trajectory.first(EventKind.V_ZERO)
    if hit is None:
        return ShotResult(ShotKind.NO_RETURN, x1, math.inf, trajectory=trajectory)
    if trajectory.vmax <= 0.0:
        return ShotResult(ShotKind.IMMEDIATE_DROP, x1, -math.inf, trajectory=trajectory)
    resid = 0.0 if hit.touch else hit.w
    return ShotResult(ShotKind.HIT, x1, resid, x2hat=hit.x, trajectory=trajectory)


class ScanPoint(BaseModel):
    x1: float
    kind: ShotKind
    resid: ExtFloat
    x2hat: Optional[float] = None


class ScanReport(BaseModel):
    """x1 走査の記録"""

    window: Tuple[float, float]
    xmax: float
    points: List[ScanPoint] = Field(default_factory=list)
    sign_changes: int = 0
    inconclusive: bool = False


class TrajectoryValue(ValueCurve):
    """シューティング軌道から作る価値関数

    V'' は密出力の W の中心差分。
    """

    def __init__(self, trajectory: Trajectory, x2: float) -> None:
        self.trajectory = trajectory
        self.lo = trajectory.x1
        self.hi = float(x2)

    def _masked(self, x: np.ndarray, pick: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        xs = np.asarray(x, dtype=float)
        out = np.zeros_like(xs)
        mask = self._support_mask(xs)
        if np.any(mask):
            out[mask] = pick(xs[mask])
        return out

    def values(self, x: np.ndarray) -> np.ndarray:
        return self._masked(x, lambda t: self.trajectory.states(t)[0])

    def derivatives(self, x: np.ndarray) -> np.ndarray:
        return self._masked(x, lambda t: self.trajectory.states(t)[1])

    def second_derivatives(self, x: np.ndarray) -> np.ndarray:
        return self._masked(x, self.trajectory.slopes)


def _scan_grid(window: Tuple[float, float], n: int) -> np.ndarray:
    """右端 (x1l) の近くほど密な走査点"""
    lo, hi = window
    k = np.arange(1, n + 1)
    return np.sort(hi - (hi - lo) * (k / n) ** 2)


def solve_shooting(
    spec: ProblemSpec,
    window: Optional[Tuple[float, float]] = None,
    tol: Optional[float] = None,
    xmax: Optional[float] = None,
    scan_points: Optional[int] = None,
    workers: Optional[int] = None,
) -> TwoSided:
    """
    x1 を走査して残差の符号変化を探し、二分法で自由境界を求める

    Args:
        spec: 問題
        window: x1 の走査窓 (省略時は [x1l - 50 (x2r - x1l), x1l))
        tol: 残差の許容誤差
        xmax: 積分の右端
        scan_points: 走査点数
        workers: 走査を並列に行うスレッド数

    Returns:
        検証済みの TwoSided
    """
    spec = spec.with_template()
    assert spec.template is not None
    t = spec.template
    tol = tol if tol is not None else settings.shoot_resid_tol
    scan_points = scan_points if scan_points is not None else settings.shoot_scan_points
    workers = workers if workers is not None else settings.mc_workers
    width = t.x2r - t.x1l
    if window is None:
        left = t.x1l - settings.shoot_window_factor * width
        if math.isfinite(spec.interval[0]):
            left = max(left, spec.interval[0] + 1e-9 * (1.0 + abs(spec.interval[0])))
        window = (left, t.x1l)
    xmax = xmax if xmax is not None else default_xmax(spec)

    xs = _scan_grid(window, scan_points)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        shots = list(pool.map(lambda x: shoot_residual(spec, float(x), xmax), xs))

    report = ScanReport(
        window=window,
        xmax=xmax,
        points=[ScanPoint(x1=s.x1, kind=s.kind, resid=s.resid, x2hat=s.x2hat) for s in shots],
    )
    changes = [
        k
        for k in range(len(shots) - 1)
        if shots[k].resid == 0.0 or (shots[k].resid > 0.0) != (shots[k + 1].resid > 0.0)
    ]
    report.sign_changes = len(changes)
    if not changes:
        report.inconclusive = spec.lam > 0.0
        message = f"no sign change of the shooting residual on window {window}"
        if report.inconclusive:
            logger.warning(f"{message}; inconclusive for lambda > 0")
        raise NoRootError(message, report)
    if len(changes) > 1:
        logger.warning(f"{len(changes)} sign changes in the shooting scan; using the one nearest x1l")

    k = changes[-1]
    lo_shot, hi_shot = shots[k], shots[k + 1]
    logger.info(f"Shooting bracket x1 in [{lo_shot.x1:.10g}, {hi_shot.x1:.10g}]")
    hits = [s for s in (lo_shot, hi_shot) if s.kind is ShotKind.HIT]
    for _ in range(200):
        best = min(hits, key=lambda s: abs(s.resid)) if hits else None
        if best is not None and abs(best.resid) <= tol:
            break
        if hi_shot.x1 - lo_shot.x1 <= 4 * np.finfo(float).eps * (1.0 + abs(lo_shot.x1)):
            break
        mid = shoot_residual(spec, 0.5 * (lo_shot.x1 + hi_shot.x1), xmax)
        if mid.kind is ShotKind.HIT:
            hits.append(mid)
        if (mid.resid > 0.0) == (lo_shot.resid > 0.0):
            lo_shot = mid
        else:
            hi_shot = mid
    if not hits:
        raise NoRootError("bisection never produced a returning trajectory", report)
    best = min(hits, key=lambda s: abs(s.resid))
    if abs(best.resid) > max(tol, settings.smooth_fit_tol):
        # 右端で打ち切られた NoReturn と Hit の境目: 残差は 0 を通らない
        report.inconclusive = spec.lam > 0.0
        raise NoRootError(
            f"shooting residual jumps across x1={best.x1:.10g} without vanishing "
            f"(best {best.resid:.3g})",
            report,
        )
    assert best.trajectory is not None and best.x2hat is not None
    logger.debug(f"Best shot x1={best.x1:.12g}, x2hat={best.x2hat:.12g}, resid={best.resid:.3g}")

    value = TrajectoryValue(best.trajectory, best.x2hat)
    validation = validate_solution(spec, value, best.x1, best.x2hat)
    if not validation.passed:
        raise ValidationFailedError(
            f"shooting candidate failed validation: {', '.join(validation.reasons)}",
            validation,
        )
    logger.info(f"Shooting solution: x1*={best.x1:.10g}, x2*={best.x2hat:.10g}")
    return TwoSided(
        x1s=best.x1,
        x2s=best.x2hat,
        value=value,
        validation=validation,
        notes=(f"scan window {window}, {report.sign_changes} sign change(s)",),
    )


class ValidationReport(BaseModel):
    """候補解 (V, x1, x2) の検証結果"""

    residual_ode: float
    smooth_fit: Tuple[float, float]
    boundary_values: Tuple[float, float]
    positivity_ok: bool
    nontrivial_ok: bool
    strict_inclusion_ok: bool
    abs_continuity_ok: bool
    verdict: Literal["pass", "fail"]
    reasons: List[str] = Field(default_factory=list)
    tolerances: dict = Field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"


def _validation_cells(spec: ProblemSpec, x1: float, x2: float) -> List[Tuple[float, float]]:
    step = (x2 - x1) / settings.validation_cells
    cells = []
    for u, v in _cells(spec, x1, x2):
        count = max(1, int(math.ceil((v - u) / step)))
        edges = np.linspace(u, v, count + 1)
        cells.extend(zip(edges[:-1], edges[1:]))
    return cells


def validate_solution(
    spec: ProblemSpec, V: ValueCurve, x1: float, x2: float
) -> ValidationReport:
    """
    自由境界問題の条件と構造的性質を検査する

    Args:
        spec: 問題
        V: 候補の価値関数
        x1: 左境界
        x2: 右境界

    Returns:
        ValidationReport (例外は投げない)
    """
    spec = spec.with_template()
    assert spec.template is not None
    t = spec.template
    reasons: List[str] = []
    tolerances = {
        "residual_ode": settings.residual_tol,
        "smooth_fit": settings.smooth_fit_tol,
        "boundary_values": settings.residual_tol,
        "abs_continuity": 1e-7,
        "strict_inclusion_margin": 1e-9,
    }
    if not (math.isfinite(x1) and math.isfinite(x2) and x1 < x2):
        return ValidationReport(
            residual_ode=math.inf,
            smooth_fit=(math.inf, math.inf),
            boundary_values=(math.inf, math.inf),
            positivity_ok=False,
            nontrivial_ok=False,
            strict_inclusion_ok=False,
            abs_continuity_ok=False,
            verdict="fail",
            reasons=[f"boundaries must satisfy x1 < x2, got ({x1}, {x2})"],
            tolerances=tolerances,
        )

    cells = _validation_cells(spec, x1, x2)
    nodes = np.concatenate(
        [u + (v - u) * (np.polynomial.legendre.leggauss(20)[0] + 1.0) / 2.0 for u, v in cells]
    )
    v_n, dv_n, d2v_n = V.values(nodes), V.derivatives(nodes), V.second_derivatives(nodes)
    sig = spec.sigma(nodes)
    residual = 0.5 * sig * sig * d2v_n + spec.b(nodes) * dv_n - spec.lam * v_n + spec.f(nodes)
    residual_ode = float(np.max(np.abs(residual)))
    if residual_ode > settings.residual_tol:
        reasons.append(f"ODE residual {residual_ode:.3g}")

    smooth_fit = (abs(V.derivative(x1)), abs(V.derivative(x2)))
    if max(smooth_fit) > settings.smooth_fit_tol:
        reasons.append(f"smooth fit {smooth_fit[0]:.3g}/{smooth_fit[1]:.3g}")
    boundary_values = (abs(V.value(x1)), abs(V.value(x2)))
    if max(boundary_values) > settings.residual_tol:
        reasons.append(f"boundary values {boundary_values[0]:.3g}/{boundary_values[1]:.3g}")

    width = x2 - x1
    outer = np.linspace(x1 - width, x2 + width, 401)
    outer = outer[(outer > spec.interval[0]) & (outer < spec.interval[1])]
    interior = np.linspace(x1, x2, 1002)[1:-1]
    v_in = V.values(interior)
    scale = max(1.0, float(np.max(np.abs(v_in))))
    nonneg = bool(np.all(V.values(outer) >= -settings.residual_tol * scale))
    nontrivial = bool(np.any(v_in != 0.0))
    positive = bool(np.all(v_in > 0.0))
    positivity_ok = nonneg and positive
    if not nontrivial:
        reasons.append("trivial solution (V = 0 on the interior)")
    elif not positivity_ok:
        reasons.append("V not positive on the interior" if not positive else "V negative")

    margin = tolerances["strict_inclusion_margin"]
    strict_inclusion_ok = x1 < t.x1l - margin and x2 > t.x2r + margin
    if not strict_inclusion_ok:
        reasons.append(f"boundaries ({x1:.6g}, {x2:.6g}) do not strictly enclose [x1l, x2r]")

    ends = np.asarray([v for _, v in cells])
    v_mass = np.asarray(
        [float(gauss_legendre(V.derivatives, u, np.asarray(v))) for u, v in cells]
    )

    def implied(x: np.ndarray) -> np.ndarray:
        s = spec.sigma(x)
        return 2.0 / (s * s) * (spec.lam * V.values(x) - spec.b(x) * V.derivatives(x) - spec.f(x))

    w_mass = np.asarray([float(gauss_legendre(implied, u, np.asarray(v))) for u, v in cells])
    v_gap = np.abs(V.values(ends) - V.value(x1) - np.cumsum(v_mass))
    dv_scale = max(1.0, float(np.max(np.abs(dv_n))))
    w_gap = np.abs(V.derivatives(ends) - V.derivative(x1) - np.cumsum(w_mass))
    abs_continuity_ok = bool(
        np.max(v_gap) <= tolerances["abs_continuity"] * scale
        and np.max(w_gap) <= tolerances["abs_continuity"] * dv_scale
    )
    if not abs_continuity_ok:
        reasons.append("absolute continuity of V or V' violated")

    passed = not reasons
    report = ValidationReport(
        residual_ode=residual_ode,
        smooth_fit=smooth_fit,
        boundary_values=boundary_values,
        positivity_ok=positivity_ok,
        nontrivial_ok=nontrivial,
        strict_inclusion_ok=strict_inclusion_ok,
        abs_continuity_ok=abs_continuity_ok,
        verdict="pass" if passed else "fail",
        reasons=reasons,
        tolerances=tolerances,
    )
    logger.debug(f"Validation of ({x1:.10g}, {x2:.10g}): {report.verdict} {reasons}")
    return report
