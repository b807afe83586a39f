"""
Функції форматування звітів: CSV-таблиці, дані для графіків та JSON.

Вивід детермінований: фіксований формат чисел, відсортовані ключі, LF.
"""

import json
import logging
import math
import os
from typing import Iterable

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"
TABLE_COLUMNS = ["n", "scaled_value", "gap", "rate"]
LIMINF_COLUMNS = ["n", "F_n", "lower_bound", "margin", "slack"]


def _to_csv(frame: pd.DataFrame, **kwargs) -> str:
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n", **kwargs)


def report_frame(report) -> pd.DataFrame:
    """Таблиця розгортки з колонками n, scaled_value, gap, rate."""
    return pd.DataFrame(
        {
            "n": pd.Series(report.n_values, dtype="int64"),
            "scaled_value": pd.Series(report.scaled_values, dtype="float64"),
            "gap": pd.Series(report.gaps if report.n_values else [], dtype="float64"),
            "rate": pd.Series(report.rates if report.n_values else [], dtype="float64"),
        },
        columns=TABLE_COLUMNS,
    )


def emit_table(report) -> str:
    """CSV (UTF-8, кома, LF, рядок заголовка); порожня розгортка дає лише заголовок."""
    return _to_csv(report_frame(report))


def emit_plotdata(report) -> str:
    """Два стовпці 'n scaled_value' для зовнішнього побудовника графіків."""
    frame = report_frame(report)[["n", "scaled_value"]]
    return "# n scaled_value\n" + _to_csv(frame, sep=" ", header=False)


def emit_rows(rows: Iterable) -> str:
    """CSV для рядків перевірки Γ-liminf."""
    frame = pd.DataFrame([row.to_dict() for row in rows], columns=LIMINF_COLUMNS)
    return _to_csv(frame)


def _scalars(data: dict, prefix: str = "") -> dict:
    record = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            record.update(_scalars(value, name + "."))
        elif isinstance(value, (bool, int, float, str)):
            record[name] = value
    return record


def emit_record(data: dict) -> str:
    """Однорядковий CSV зі скалярних полів результату; вкладені ключі через крапку, списки пропускаються."""
    record = _scalars(_plain(data))
    frame = pd.DataFrame([record], columns=sorted(record))
    return _to_csv(frame)


def _plain(value):
    if hasattr(value, "to_dict"):
        return _plain(value.to_dict())
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # нескінченності та NaN записуються рядками, щоб JSON лишався стандартним
        if not math.isfinite(value):
            return "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def emit_json(data) -> str:
    return json.dumps(_plain(data), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_text(path: str, text: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    logger.info(f"Записано {path}")
