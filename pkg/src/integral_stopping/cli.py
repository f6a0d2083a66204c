"""CLIエントリポイント"""

import sys
from typing import List, NoReturn, Optional, Sequence, Tuple

import click
import typer

from .config import Settings
from .errors import StoppingError, ValidationFailedError
from .funcmodel import ProblemSpec
from .logging_cfg import logger, set_level
from .pipeline import (
    curve_rows,
    curve_window,
    load_and_validate,
    mc_rows,
    oracle_rows,
    run_classify,
    run_payoff,
    run_shoot,
    run_solve,
    scale_rows,
    solution_report,
    trajectory_rows,
)
from .report_writer import (
    MC_HEADER,
    NATURAL_SCALE_HEADER,
    ORACLE_HEADER,
    TRAJECTORY_HEADER,
    VALUE_CURVE_HEADER,
    write_json,
    write_rows,
    write_rows_stream,
)
from .solver import NoOptimum

# Typerアプリケーションの作成
app = typer.Typer(
    name="integral-stopping",
    help="一次元拡散過程の積分型最適停止ソルバー",
    add_completion=False,
)

# グローバル設定
settings = Settings()

ORACLE_AGREEMENT = 1e-6
MC_Z_LIMIT = 3.0


def _configure_logging(verbose: bool, log_level: Optional[str]) -> None:
    if verbose:
        set_level("DEBUG")
    elif log_level:
        set_level(log_level)


def _fail(error: Exception) -> NoReturn:
    """一行の診断を標準エラーに出して終了する"""
    if isinstance(error, StoppingError):
        code, detail = error.exit_code, error.message
    else:
        code, detail = 2, str(error)
        logger.error(f"Unexpected error: {error}")
    detail = detail.replace('"', "'").replace("\n", " ")
    typer.echo(f'error code={code} kind={type(error).__name__} detail="{detail}"', err=True)
    raise typer.Exit(code)


def _load(problem: str) -> ProblemSpec:
    return load_and_validate(problem)


LOG_LEVEL_OPTION = typer.Option(
    None, "--log-level", help=f"ログレベル (デフォルト: {settings.log_level})"
)
VERBOSE_OPTION = typer.Option(False, "--verbose", "-v", help="詳細ログを表示")


@app.command("classify")
def classify_command(
    problem: str = typer.Argument(..., help="問題ファイル (JSON)"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="JSON の出力先 (省略時は標準出力)"),
    log_level: Optional[str] = LOG_LEVEL_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    (A1)-(A3) と Case1-3 を判定する
    """
    try:
        _configure_logging(verbose, log_level)
        report = run_classify(_load(problem))
        if out:
            write_json(report, out)
        else:
            typer.echo(report.model_dump_json(indent=2))
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("solve")
def solve_command(
    problem: str = typer.Argument(..., help="問題ファイル (JSON)"),
    natural_coords: bool = typer.Option(
        False, "--natural-coords", help="自然尺度の座標のまま結果を出す"
    ),
    curve: Optional[str] = typer.Option(None, "--curve", help="価値関数の CSV 出力先"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="JSON の出力先 (省略時は標準出力)"),
    log_level: Optional[str] = LOG_LEVEL_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    最適停止問題を解く (lambda > 0 ならシューティング)
    """
    try:
        _configure_logging(verbose, log_level)
        spec, solution = run_solve(_load(problem), natural_scale=natural_coords)
        report = solution_report(
            spec, solution, coordinates="natural" if natural_coords else "original"
        )
        if out:
            write_json(report, out)
        else:
            typer.echo(report.model_dump_json(indent=2))
        if curve and solution.value is not None:
            lo, hi = curve_window(spec, solution)
            write_rows(VALUE_CURVE_HEADER, curve_rows(solution, lo, hi), curve)
        if isinstance(solution, NoOptimum):
            logger.info(solution.message)
            raise typer.Exit(3)
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("payoff")
def payoff_command(
    problem: str = typer.Argument(..., help="問題ファイル (JSON)"),
    a: float = typer.Argument(..., help="左の停止境界"),
    b: float = typer.Argument(..., help="右の停止境界"),
    points: int = typer.Option(21, "--points", help="オラクルとの比較点数"),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="JSON の出力先 (省略時は標準出力)"),
    log_level: Optional[str] = LOG_LEVEL_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    (a, b) からの退出ルールの期待利得をオラクルと突き合わせる
    """
    try:
        _configure_logging(verbose, log_level)
        report = run_payoff(_load(problem), a, b, points=points)
        if out:
            write_json(report, out)
        else:
            typer.echo(report.model_dump_json(indent=2))
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("shoot")
def shoot_command(
    problem: str = typer.Argument(..., help="問題ファイル (JSON)"),
    window: Optional[Tuple[float, float]] = typer.Option(
        None, "--window", help="x1 の走査窓 (省略時は x1l から左へ 50 (x2r - x1l))"
    ),
    tol: Optional[float] = typer.Option(
        None, "--tol", help=f"残差の許容誤差 (デフォルト: {settings.shoot_resid_tol})"
    ),
    dump_trajectory: Optional[str] = typer.Option(
        None, "--dump-trajectory", help="軌道 (x, V, W) の CSV 出力先"
    ),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="JSON の出力先 (省略時は標準出力)"),
    log_level: Optional[str] = LOG_LEVEL_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    元の座標でシューティング法を実行する
    """
    try:
        _configure_logging(verbose, log_level)
        spec = _load(problem)
        solution = run_shoot(spec, window=window, tol=tol)
        report = solution_report(spec, solution)
        if out:
            write_json(report, out)
        else:
            typer.echo(report.model_dump_json(indent=2))
        if dump_trajectory:
            write_rows(TRAJECTORY_HEADER, trajectory_rows(solution), dump_trajectory)
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("verify")
def verify_command(
    problem: str = typer.Argument(..., help="問題ファイル (JSON)"),
    oracle: bool = typer.Option(False, "--oracle", help="グリーン関数オラクルと比較する"),
    mc: bool = typer.Option(False, "--mc", help="モンテカルロ推定と比較する"),
    paths: Optional[int] = typer.Option(
        None, "--paths", help=f"パス数 (デフォルト: {settings.mc_paths})"
    ),
    step: Optional[float] = typer.Option(
        None, "--step", help=f"自然尺度時計の刻み幅 (デフォルト: {settings.mc_step})"
    ),
    seed: Optional[int] = typer.Option(
        None, "--seed", help=f"乱数シード (デフォルト: ISTOP_SEED={settings.seed})"
    ),
    umax: Optional[float] = typer.Option(
        None, "--umax", help=f"片側ルールの時間上限 (デフォルト: {settings.mc_umax})"
    ),
    x0: Optional[List[float]] = typer.Option(None, "--x0", help="出発点 (複数指定可)"),
    antithetic: bool = typer.Option(False, "--antithetic", help="対称変量法を使う"),
    bridge: bool = typer.Option(False, "--bridge", help="ブラウン橋の退出補正を使う"),
    out: Optional[str] = typer.Option(
        None, "--out", "-o", help="CSV の出力先 (両方指定時は .oracle.csv / .mc.csv)"
    ),
    log_level: Optional[str] = LOG_LEVEL_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    解を求めてオラクル / モンテカルロで検証する
    """
    try:
        _configure_logging(verbose, log_level)
        if not (oracle or mc):
            raise click.UsageError("choose --oracle and/or --mc")
        spec, solution = run_solve(_load(problem))
        points: Optional[Sequence[float]] = x0 or None
        failures: List[str] = []

        if oracle:
            rows = oracle_rows(spec, solution, points)
            _emit(ORACLE_HEADER, rows, out, ".oracle.csv" if mc else "", blank_after=mc)
            worst = max((r[3] for r in rows), default=0.0)
            if worst > ORACLE_AGREEMENT:
                failures.append(f"oracle disagreement {worst:.3g}")
        if mc:
            rows_mc = mc_rows(
                spec,
                solution,
                points,
                n_paths=paths,
                step_u=step,
                seed=seed,
                umax=umax,
                antithetic=antithetic,
                bridge=bridge,
            )
            _emit(MC_HEADER, rows_mc, out, ".mc.csv" if oracle else "", blank_after=False)
            worst_z = max((abs(r[4]) for r in rows_mc), default=0.0)
            if worst_z > MC_Z_LIMIT:
                failures.append(f"MC |z| = {worst_z:.3g}")
        if failures:
            raise ValidationFailedError("verification failed: " + ", ".join(failures))
    except typer.Exit:
        raise
    except click.UsageError as e:
        typer.echo(f'error code=4 kind=UsageError detail="{e.message}"', err=True)
        raise typer.Exit(4)
    except Exception as e:
        _fail(e)


def _emit(
    header: Sequence[str],
    rows: Sequence[Sequence[object]],
    out: Optional[str],
    suffix: str,
    blank_after: bool,
) -> None:
    if out:
        write_rows(header, rows, out + suffix if suffix else out)
        return
    write_rows_stream(header, rows, sys.stdout)
    if blank_after:
        sys.stdout.write("\n")


@app.command("curve")
def curve_command(
    problem: str = typer.Argument(..., help="問題ファイル (JSON)"),
    lo: Optional[float] = typer.Option(None, "--lo", help="格子の左端"),
    hi: Optional[float] = typer.Option(None, "--hi", help="格子の右端"),
    points: int = typer.Option(201, "--points", help="格子点数"),
    natural_scale: bool = typer.Option(
        False, "--natural-scale", help="価値関数の代わりにスケール関数 (x, p, dp) を出す"
    ),
    out: Optional[str] = typer.Option(None, "--out", "-o", help="CSV の出力先 (省略時は標準出力)"),
    log_level: Optional[str] = LOG_LEVEL_OPTION,
    verbose: bool = VERBOSE_OPTION,
) -> None:
    """
    価値関数 (またはスケール関数) を格子上で CSV に出す
    """
    try:
        _configure_logging(verbose, log_level)
        spec = _load(problem)
        if natural_scale:
            assert spec.template is not None
            width = spec.template.x2r - spec.template.x1l
            left = lo if lo is not None else spec.template.x1l - width
            right = hi if hi is not None else spec.template.x2r + width
            _emit(NATURAL_SCALE_HEADER, scale_rows(spec, left, right, points), out, "", False)
            return
        spec, solution = run_solve(spec)
        default_lo, default_hi = curve_window(spec, solution)
        rows = curve_rows(
            solution,
            lo if lo is not None else default_lo,
            hi if hi is not None else default_hi,
            points,
        )
        _emit(VALUE_CURVE_HEADER, rows, out, "", False)
    except typer.Exit:
        raise
    except Exception as e:
        _fail(e)


@app.command("config")
def config_command() -> None:
    """
    現在の設定を JSON で表示する
    """
    try:
        typer.echo(Settings().model_dump_json(indent=2))
    except Exception as e:
        _fail(e)


@app.command("version")
def version_command() -> None:
    """
    バージョン情報を表示する
    """
    from . import __version__

    typer.echo(f"integral-stopping version {__version__}")


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    引数列を受け取って終了コードを返す

    Args:
        argv: コマンドライン引数 (省略時は sys.argv[1:])

    Returns:
        終了コード (0 成功, 2 検証失敗, 3 解なし, 4 設定エラー)
    """
    command = typer.main.get_command(app)
    try:
        result = command.main(
            args=list(argv) if argv is not None else sys.argv[1:],
            prog_name="integral-stopping",
            standalone_mode=False,
        )
    except click.ClickException as e:
        typer.echo(f'error code=4 kind={type(e).__name__} detail="{e.format_message()}"', err=True)
        return 4
    except click.exceptions.Abort:
        return 1
    return result if isinstance(result, int) else 0


def cli() -> None:
    """
    CLI実行用のエントリポイント
    """
    sys.exit(run())


if __name__ == "__main__":
    cli()
