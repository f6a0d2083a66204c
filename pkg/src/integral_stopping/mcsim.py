"""自然尺度の時間変換によるモンテカルロ推定モジュール"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .config import Settings
from .errors import DomainError, PreconditionError
from .funcmodel import ProblemSpec
from .logging_cfg import logger
from .scale import transform_problem

settings = Settings()


@dataclass(frozen=True)
class TwoSidedExit:
    """(a, b) からの初めての退出"""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise PreconditionError(
                f"two-sided rule needs finite barriers, got ({self.a}, {self.b})",
                "finite barrier",
            )
        if not self.a < self.b:
            raise DomainError(f"two-sided rule needs a < b, got ({self.a}, {self.b})")

    @property
    def barriers(self) -> Tuple[float, float]:
        return self.a, self.b

    @property
    def label(self) -> str:
        return f"two_sided[{self.a:.10g},{self.b:.10g}]"


@dataclass(frozen=True)
class LeftExit:
    """alpha を下回った時点で停止"""

    alpha: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.alpha):
            raise PreconditionError(
                "never stopping is not an admissible rule", "finite barrier"
            )

    @property
    def barriers(self) -> Tuple[float, float]:
        return self.alpha, math.inf

    @property
    def label(self) -> str:
        return f"left[{self.alpha:.10g}]"


@dataclass(frozen=True)
class RightExit:
    """beta を上回った時点で停止"""

    beta: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.beta):
            raise PreconditionError(
                "never stopping is not an admissible rule", "finite barrier"
            )

    @property
    def barriers(self) -> Tuple[float, float]:
        return -math.inf, self.beta

    @property
    def label(self) -> str:
        return f"right[{self.beta:.10g}]"


BarrierRule = Union[TwoSidedExit, LeftExit, RightExit]


@dataclass(frozen=True)
class HorizonCap:
    """自然尺度の時計 u_max で打ち切るルール (推定値は打ち切りの偏りを含む)"""

    u_max: float
    inner: BarrierRule

    def __post_init__(self) -> None:
        if not (self.u_max > 0.0 and math.isfinite(self.u_max)):
            raise DomainError(f"horizon must be positive and finite, got {self.u_max}")
        if isinstance(self.inner, HorizonCap):
            raise PreconditionError("horizon caps do not nest", "barrier rule inside")

    @property
    def barriers(self) -> Tuple[float, float]:
        return self.inner.barriers

    @property
    def label(self) -> str:
        return f"{self.inner.label}@u<={self.u_max:.6g}"


StopRule = Union[TwoSidedExit, LeftExit, RightExit, HorizonCap]


def with_horizon(rule: StopRule, umax: Optional[float] = None) -> StopRule:
    """片側ルールには必ず時間上限を付ける"""
    if isinstance(rule, (LeftExit, RightExit)):
        return HorizonCap(umax if umax is not None else settings.mc_umax, rule)
    return rule


class ClockStats(BaseModel):
    mean_u: float = Field(description="停止までの自然尺度時間の平均")
    max_u: float
    mean_t: float = Field(description="停止までの物理時間の平均")


class Estimate(BaseModel):
    """モンテカルロ推定の結果"""

    rule: str
    x0: float
    mean: float
    stderr: float
    n_paths: int
    seed: int
    step_u: float
    truncated_fraction: float = 0.0
    failed_paths: int = 0
    antithetic: bool = False
    bridge: bool = False
    clock: Optional[ClockStats] = None


@dataclass
class _BlockResult:
    payoff: np.ndarray
    u_exit: np.ndarray
    t_exit: np.ndarray
    truncated: np.ndarray
    failed: np.ndarray


def _crossing_probability(
    w: np.ndarray, w_new: np.ndarray, lo: float, hi: float, step: float
) -> np.ndarray:
    """ステップ内で境界に触れるブラウン橋の確率"""
    stay = np.ones_like(w)
    if math.isfinite(lo):
        stay *= 1.0 - np.exp(-2.0 * (w - lo) * (w_new - lo) / step)
    if math.isfinite(hi):
        stay *= 1.0 - np.exp(-2.0 * (hi - w) * (hi - w_new) / step)
    return 1.0 - stay


def _simulate_block(
    natural: ProblemSpec,
    lo: float,
    hi: float,
    y0: float,
    n: int,
    step: float,
    umax: float,
    antithetic: bool,
    bridge: bool,
    seed_seq: np.random.SeedSequence,
) -> _BlockResult:
    rng = np.random.Generator(np.random.Philox(seed_seq))
    payoff = np.zeros(n)
    t = np.zeros(n)
    u_exit = np.full(n, np.nan)
    truncated = np.zeros(n, dtype=bool)
    failed = np.zeros(n, dtype=bool)
    idx = np.arange(n)
    w = np.full(n, y0)
    half = n // 2
    sq = math.sqrt(step)
    u = 0.0

    while idx.size:
        if u >= umax:
            truncated[idx] = True
            u_exit[idx] = u
            break
        if antithetic:
            z = rng.standard_normal(half)
            dz = np.concatenate([z, -z])[idx]
        else:
            dz = rng.standard_normal(idx.size)
        w_new = w + sq * dz

        with np.errstate(all="ignore"):
            s = natural.sigma(w)
            rate = 1.0 / (s * s)
            fv = natural.f(w)
            frac = np.ones(idx.size)
            below = w_new <= lo
            above = w_new >= hi
            frac[below] = (w[below] - lo) / (w[below] - w_new[below])
            frac[above] = (hi - w[above]) / (w_new[above] - w[above])
        done = below | above
        if bridge:
            draws = rng.random(idx.size)
            with np.errstate(all="ignore"):
                hit = ~done & (draws < _crossing_probability(w, w_new, lo, hi, step))
            frac[hit] = 0.5
            done |= hit

        dt = frac * step * rate
        inc = np.exp(-natural.lam * t[idx]) * fv * dt
        bad = ~(np.isfinite(inc) & np.isfinite(dt))
        payoff[idx] += np.where(bad, 0.0, inc)
        t[idx] += np.where(bad, 0.0, dt)
        failed[idx[bad]] = True
        u_exit[idx[done]] = u + frac[done] * step
        u += step
        keep = ~(done | bad)
        idx = idx[keep]
        w = w_new[keep]

    return _BlockResult(payoff, u_exit, t, truncated, failed)


def _block_sizes(n_paths: int, block: int, antithetic: bool) -> List[int]:
    if antithetic and block % 2:
        block += 1
    sizes = [block] * (n_paths // block)
    rest = n_paths - sum(sizes)
    if rest:
        sizes.append(rest + (rest % 2 if antithetic else 0))
    return sizes


def simulate_payoff(
    spec: ProblemSpec,
    rule: StopRule,
    x0: float,
    n_paths: Optional[int] = None,
    step_u: Optional[float] = None,
    seed: Optional[int] = None,
    antithetic: bool = False,
    bridge: bool = False,
    workers: Optional[int] = None,
    block: Optional[int] = None,
) -> Estimate:
    """
    E_x0 int_0^tau exp(-lambda s) f(X_s) ds をモンテカルロで推定する

    自然尺度で標準ブラウン運動 W を刻み step_u で動かし、物理時間
    t_u = int sigma~(W)^-2 du で割引する。ブロックごとに SeedSequence を
    分割した Philox 生成器を使うので、結果はワーカー数に依存しない。

    Args:
        spec: 問題
        rule: 停止ルール (片側ルールは自動で HorizonCap 付き)
        x0: 出発点
        n_paths: パス数
        step_u: 自然尺度時計の刻み幅
        seed: 乱数シード
        antithetic: 対称変量法を使うかどうか
        bridge: ブラウン橋による退出補正を使うかどうか
        workers: ブロック並列のスレッド数
        block: 1 ブロックのパス数

    Returns:
        Estimate
    """
    n_paths = n_paths if n_paths is not None else settings.mc_paths
    step_u = step_u if step_u is not None else settings.mc_step
    seed = seed if seed is not None else settings.seed
    workers = workers if workers is not None else settings.mc_workers
    block = block if block is not None else settings.mc_block
    if n_paths < 2:
        raise DomainError(f"need at least 2 paths, got {n_paths}")
    if not step_u > 0.0:
        raise DomainError(f"step must be positive, got {step_u}")

    rule = with_horizon(rule)
    umax = rule.u_max if isinstance(rule, HorizonCap) else math.inf
    a, b = rule.barriers
    lo_x, hi_x = spec.interval
    if not lo_x < x0 < hi_x:
        raise DomainError(f"x0={x0} outside state interval ({lo_x}, {hi_x})")
    if x0 == a or x0 == b:
        logger.info(f"x0={x0} sits on the barrier of {rule.label}; immediate stop")
        return Estimate(
            rule=rule.label, x0=x0, mean=0.0, stderr=0.0, n_paths=n_paths, seed=seed,
            step_u=step_u, antithetic=antithetic, bridge=bridge,
        )
    if not a < x0 < b:
        raise DomainError(f"x0={x0} is not inside the continuation region of {rule.label}")

    natural, cmap = transform_problem(spec)
    image_lo, image_hi = natural.interval
    lo = float(cmap.p(np.asarray(a))) if math.isfinite(a) else image_lo
    hi = float(cmap.p(np.asarray(b))) if math.isfinite(b) else image_hi
    y0 = float(cmap.p(np.asarray(x0)))

    sizes = _block_sizes(n_paths, block, antithetic)
    streams = np.random.SeedSequence(seed).spawn(len(sizes))
    logger.info(
        f"Simulating {sum(sizes)} paths of {rule.label} from x0={x0} "
        f"in {len(sizes)} block(s), step_u={step_u}"
    )
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        results = list(
            pool.map(
                lambda job: _simulate_block(
                    natural, lo, hi, y0, job[0], step_u, umax, antithetic, bridge, job[1]
                ),
                zip(sizes, streams),
            )
        )

    if antithetic:
        halves = [(r.payoff[: len(r.payoff) // 2], r.payoff[len(r.payoff) // 2 :]) for r in results]
        bad = [
            r.failed[: len(r.failed) // 2] | r.failed[len(r.failed) // 2 :] for r in results
        ]
        samples = np.concatenate(
            [0.5 * (p + q)[~m] for (p, q), m in zip(halves, bad)]
        )
    else:
        samples = np.concatenate([r.payoff[~r.failed] for r in results])
    failed = int(sum(r.failed.sum() for r in results))
    truncated = np.concatenate([r.truncated for r in results])
    u_exit = np.concatenate([r.u_exit for r in results])
    t_exit = np.concatenate([r.t_exit for r in results])
    finished = ~truncated & np.isfinite(u_exit)

    if samples.size < 2:
        raise DomainError("fewer than 2 usable paths; all others failed numerically")
    mean = float(np.mean(samples))
    stderr = float(np.std(samples, ddof=1) / math.sqrt(samples.size))
    truncated_fraction = float(truncated.mean())
    if failed:
        logger.warning(f"{failed} path(s) hit non-finite coefficients and were dropped")
    if truncated_fraction > 0.0:
        logger.warning(
            f"{truncated_fraction:.2%} of paths reached u_max={umax:.6g}; "
            "the estimate is truncation-biased"
        )
    estimate = Estimate(
        rule=rule.label,
        x0=x0,
        mean=mean,
        stderr=stderr,
        n_paths=int(truncated.size),
        seed=seed,
        step_u=step_u,
        truncated_fraction=truncated_fraction,
        failed_paths=failed,
        antithetic=antithetic,
        bridge=bridge,
        clock=ClockStats(
            mean_u=float(u_exit[finished].mean()) if finished.any() else math.nan,
            max_u=float(np.nanmax(u_exit)) if np.isfinite(u_exit).any() else math.nan,
            mean_t=float(t_exit[finished].mean()) if finished.any() else math.nan,
        ),
    )
    logger.info(f"MC batch done: mean={mean:.6g} stderr={stderr:.3g}")
    return estimate


def zscore(est: Estimate, reference: float) -> float:
    """
    (mean - reference) / stderr

    stderr が 0 のときは一致なら 0、不一致なら符号付きの無限大。
    """
    diff = est.mean - reference
    if est.stderr == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return diff / est.stderr
