"""CSV / JSON レポート出力モジュール"""

import csv
import os
import shutil
from datetime import datetime
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from pydantic import BaseModel

from .logging_cfg import logger

PathLike = Union[str, Path]

VALUE_CURVE_HEADER = ["x", "V", "dV"]
NATURAL_SCALE_HEADER = ["x", "p", "dp"]
TRAJECTORY_HEADER = ["x", "V", "W"]
ORACLE_HEADER = ["x", "solver", "oracle", "abs_diff"]
MC_HEADER = ["rule", "x0", "mean", "stderr", "z", "truncated_fraction"]


def validate_output_path(output_path: PathLike) -> bool:
    """
    出力パスの妥当性を検証する

    Args:
        output_path: 出力ファイルパス

    Returns:
        パスが有効かどうか
    """
    if not str(output_path):
        logger.error("Output path is empty")
        return False

    # ディレクトリの存在確認と作成
    output_dir = Path(output_path).parent
    try:
        output_dir.mkdir(parents=True, exist_ok=True)
    except Exception as e:
        logger.error(f"Cannot create output directory {output_dir}: {e}")
        return False

    # 書き込み権限の確認
    if output_dir.exists() and not os.access(output_dir, os.W_OK):
        logger.error(f"No write permission for directory: {output_dir}")
        return False

    return True


def backup_existing_file(output_path: PathLike) -> None:
    """
    既存ファイルのバックアップを作成する

    Args:
        output_path: 出力ファイルパス
    """
    if not os.path.exists(output_path):
        return

    try:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        backup_path = f"{output_path}.backup_{timestamp}"
        shutil.copy2(output_path, backup_path)
        logger.info(f"Created backup: {backup_path}")
    except Exception as e:
        logger.warning(f"Failed to create backup: {e}")


def _format(value: object) -> object:
    if isinstance(value, float):
        if value != value:
            return "nan"
        if value in (float("inf"), float("-inf")):
            return "inf" if value > 0 else "-inf"
        return repr(float(value))
    return value


def write_rows(
    header: Sequence[str], rows: Iterable[Sequence[object]], output_path: PathLike
) -> int:
    """
    ヘッダー付きで CSV を書き出す

    Args:
        header: 列名
        rows: データ行
        output_path: 出力ファイルパス

    Returns:
        書き込んだデータ行数
    """
    if not validate_output_path(output_path):
        raise OSError(f"cannot write to {output_path}")
    backup_existing_file(output_path)

    count = 0
    with open(output_path, "w", newline="", encoding="utf-8") as csvfile:
        writer = csv.writer(csvfile)
        writer.writerow(list(header))
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row {count + 1} has {len(row)} fields, expected {len(header)}")
            writer.writerow([_format(v) for v in row])
            count += 1

    logger.info(f"Wrote {count} rows to {output_path}")
    return count


def write_rows_stream(
    header: Sequence[str], rows: Iterable[Sequence[object]], stream: object
) -> int:
    """ファイルではなくストリーム (標準出力など) に CSV を書く"""
    writer = csv.writer(stream)  # type: ignore[arg-type]
    writer.writerow(list(header))
    count = 0
    for row in rows:
        writer.writerow([_format(v) for v in row])
        count += 1
    return count


def read_rows(input_path: PathLike) -> List[List[str]]:
    """
    CSV を読み込む (ヘッダーは読み飛ばす)

    Args:
        input_path: 入力ファイルパス

    Returns:
        データ行のリスト
    """
    records = []
    try:
        with open(input_path, "r", encoding="utf-8") as csvfile:
            reader = csv.reader(csvfile)

            # ヘッダーをスキップ
            next(reader, None)

            for row in reader:
                records.append(row)

        logger.info(f"Read {len(records)} rows from {input_path}")
        return records

    except Exception as e:
        logger.error(f"Failed to read CSV file: {e}")
        raise


def write_json(report: BaseModel, output_path: PathLike) -> None:
    """pydantic モデルを JSON として書き出す"""
    if not validate_output_path(output_path):
        raise OSError(f"cannot write to {output_path}")
    backup_existing_file(output_path)
    Path(output_path).write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Wrote report to {output_path}")
