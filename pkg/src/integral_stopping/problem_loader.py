"""問題ファイル (JSON) の読み込みモジュール"""

import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, Field, ValidationError

from .errors import FormError, ProblemFileError, StoppingError
from .forms import Exp, NormalCdf, Poly, Power, Term
from .funcmodel import ExtReal, PiecewiseFunction, ProblemSpec, Segment
from .logging_cfg import logger

Bound = Union[float, str]


class ConstantParams(BaseModel):
    c: float

    model_config = {"extra": "forbid"}


class PolyParams(BaseModel):
    coeffs: List[float] = Field(min_length=1)
    x0: float = 0.0

    model_config = {"extra": "forbid"}


class ExpParams(BaseModel):
    c: float
    a: float
    x0: float = 0.0

    model_config = {"extra": "forbid"}


class PowerParams(BaseModel):
    c: float
    p: float
    x0: float = 0.0

    model_config = {"extra": "forbid"}


class NormalCdfParams(BaseModel):
    a: float = 0.0
    k: float
    s: float
    x0: float = 0.0

    model_config = {"extra": "forbid"}


PARAM_MODELS: Dict[str, type] = {
    "constant": ConstantParams,
    "poly": PolyParams,
    "exp": ExpParams,
    "power": PowerParams,
    "normal_cdf": NormalCdfParams,
}


class SegmentRecord(BaseModel):
    """区間レコード {lo, hi, form, params}"""

    lo: Bound
    hi: Bound
    form: Literal["constant", "poly", "exp", "power", "normal_cdf"]
    params: Dict[str, Any] = Field(default_factory=dict)


class ProblemFile(BaseModel):
    """問題ファイルのスキーマ"""

    name: str = "problem"
    state_interval: Tuple[Bound, Bound] = ("-inf", "inf")
    lam: float = Field(default=0.0, alias="lambda", ge=0.0)
    b: Optional[List[SegmentRecord]] = None
    sigma: List[SegmentRecord] = Field(min_length=1)
    f: List[SegmentRecord] = Field(min_length=1)

    model_config = {"populate_by_name": True}


def _bound(raw: Bound, function: Optional[str], segment: Optional[int], field: str) -> float:
    try:
        return ExtReal.parse(raw).value
    except StoppingError as e:
        raise ProblemFileError(str(e), function, segment, field) from e


def _terms(record: SegmentRecord, lo: float, function: str, index: int) -> Tuple[Term, ...]:
    """レコードの関数形を項の組に変換する"""
    try:
        params = PARAM_MODELS[record.form].model_validate(record.params)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(["params", *(str(p) for p in first["loc"])])
        raise ProblemFileError(first["msg"], function, index, field) from e

    if isinstance(params, ConstantParams):
        return (Poly((params.c,)),)
    if isinstance(params, PolyParams):
        return (Poly(tuple(params.coeffs), params.x0),)
    if isinstance(params, ExpParams):
        return (Exp(params.c, params.a, params.x0),)
    if isinstance(params, PowerParams):
        side = 1 if lo >= params.x0 else -1
        return (Power(params.c, params.p, params.x0, side),)
    assert isinstance(params, NormalCdfParams)
    return (Poly((params.a,)), NormalCdf(params.k, params.s, params.x0))


def _piecewise(
    records: List[SegmentRecord], function: str, interval: Tuple[float, float]
) -> PiecewiseFunction:
    segments: List[Segment] = []
    for i, record in enumerate(records):
        lo = _bound(record.lo, function, i, "lo")
        hi = _bound(record.hi, function, i, "hi")
        if i == 0 and lo != interval[0]:
            raise ProblemFileError(
                f"first segment must start at the state interval end {interval[0]}",
                function,
                i,
                "lo",
            )
        if i == len(records) - 1 and hi != interval[1]:
            raise ProblemFileError(
                f"last segment must end at the state interval end {interval[1]}",
                function,
                i,
                "hi",
            )
        if segments and lo != segments[-1].hi:
            raise ProblemFileError(
                f"segment starts at {lo} but the previous one ends at {segments[-1].hi}",
                function,
                i,
                "lo",
            )
        try:
            terms = _terms(record, lo, function, i)
            segments.append(Segment(lo, hi, terms))
        except FormError as e:
            raise ProblemFileError(e.message, function, i, "params") from e
    return PiecewiseFunction(segments, label=function)


def parse_problem(data: Dict[str, Any], name: Optional[str] = None) -> ProblemSpec:
    """
    辞書から問題を組み立てる

    Args:
        data: JSON から読み込んだ辞書
        name: 問題名 (省略時はファイル内の name)

    Returns:
        符号テンプレート未設定の ProblemSpec
    """
    try:
        problem = ProblemFile.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [str(p) for p in first["loc"]]
        function = loc[0] if loc and loc[0] in ("b", "sigma", "f") else None
        segment = int(loc[1]) if function and len(loc) > 1 and loc[1].isdigit() else None
        rest = loc[2:] if segment is not None else (loc[1:] if function else loc)
        raise ProblemFileError(
            first["msg"], function, segment, ".".join(rest) or None
        ) from e

    lo = _bound(problem.state_interval[0], None, None, "state_interval")
    hi = _bound(problem.state_interval[1], None, None, "state_interval")
    if not lo < hi:
        raise ProblemFileError(f"empty state interval [{lo}, {hi}]", field="state_interval")
    interval = (lo, hi)

    b = (
        _piecewise(problem.b, "b", interval)
        if problem.b
        else PiecewiseFunction.zero(lo, hi)
    )
    sigma = _piecewise(problem.sigma, "sigma", interval)
    f = _piecewise(problem.f, "f", interval)
    spec = ProblemSpec(
        b=b,
        sigma=sigma,
        f=f,
        lam=problem.lam,
        interval=interval,
        name=name or problem.name,
    )
    logger.debug(
        f"Parsed problem '{spec.name}': {len(f.segments)} f segments, "
        f"lambda={spec.lam}, interval={interval}"
    )
    return spec


def load_problem(path: Union[str, Path]) -> ProblemSpec:
    """
    問題ファイルを読み込む

    Args:
        path: JSON ファイルのパス

    Returns:
        ProblemSpec
    """
    file_path = Path(path)
    try:
        data = json.loads(file_path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ProblemFileError(f"problem file not found: {file_path}") from e
    except json.JSONDecodeError as e:
        raise ProblemFileError(f"invalid JSON in {file_path}: {e}") from e
    if not isinstance(data, dict):
        raise ProblemFileError("problem file must contain a JSON object")
    logger.info(f"Loading problem from {file_path}")
    return parse_problem(data, name=data.get("name") or file_path.stem)


def interval_to_json(interval: Tuple[float, float]) -> List[Union[float, str]]:
    """状態区間を JSON 表現に戻す"""
    return [str(ExtReal(v)) if math.isinf(v) else v for v in interval]
