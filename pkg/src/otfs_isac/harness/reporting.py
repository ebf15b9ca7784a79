"""CSV experiment reports."""
import csv
import io
import logging
from collections.abc import Iterable
from pathlib import Path
from typing import Any, Union

from ..core.safety import safe_write_text
from .metrics import MetricRow

logger = logging.getLogger(__name__)

try:
    import pandas as pd

    HAS_PANDAS = True
except ImportError:
    HAS_PANDAS = False
    pd = None

CSV_HEADER = ("sweep_name", "sweep_value", "metric", "mean", "stderr", "trials")


def _format(value: float) -> str:
    # repr gives the shortest round-tripping form
    return repr(float(value))


def render_report(rows: Iterable[MetricRow]) -> str:
    """CSV text with LF line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(
            [
                row.sweep_name,
                _format(row.sweep_value),
                row.metric,
                _format(row.mean),
                _format(row.stderr),
                str(row.trials),
            ]
        )
    return buffer.getvalue()


def write_report(rows: Iterable[MetricRow], path: Union[str, Path]) -> Path:
    rows = list(rows)
    path = safe_write_text(path, render_report(rows))
    logger.info(f"Wrote {len(rows)} metric rows to {path}")
    return path


def load_report(path: Union[str, Path], as_frame: bool = False) -> Any:
    """Read a report back as MetricRows, or a DataFrame when ``as_frame``."""
    if as_frame:
        if not HAS_PANDAS:
            raise ImportError("pandas is required for as_frame=True")
        return pd.read_csv(path)

    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = tuple(next(reader, ()))
        if header != CSV_HEADER:
            raise ValueError(f"Unexpected report header {header}")
        return [
            MetricRow(
                name, float(value), metric, float(mean), float(stderr), int(trials)
            )
            for name, value, metric, mean, stderr, trials in reader
        ]
