"""Figures of merit and their Monte Carlo aggregation."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..core.geometry import FrameGeometry, PathSet
from ..core.operators import frobenius_distance_squared, squared_frobenius_norm

logger = logging.getLogger(__name__)

DB_FLOOR = -300.0


def to_db(value: float, floor: float = DB_FLOOR) -> float:
    """``10 log10(value)``, clamped below at ``floor``."""
    if value <= 0:
        return floor
    return max(10.0 * math.log10(value), floor)


def nmse(H_true: np.ndarray, H_est: np.ndarray, db: bool = True) -> float:
    """``||H - H_est||_F^2 / ||H||_F^2`` from dense matrices.

    Raises:
        ValueError: On shape mismatch or a zero true channel
    """
    H_true = np.asarray(H_true)
    H_est = np.asarray(H_est)
    if H_true.shape != H_est.shape:
        raise ValueError(f"Shape mismatch: {H_true.shape} vs {H_est.shape}")
    reference = float(np.linalg.norm(H_true) ** 2)
    if reference == 0:
        raise ValueError("NMSE is undefined for a zero true channel")
    ratio = float(np.linalg.norm(H_true - H_est) ** 2) / reference
    return to_db(ratio) if db else ratio


def operator_nmse(
    true_paths: PathSet, est_paths: PathSet, geometry: FrameGeometry, db: bool = True
) -> float:
    """NMSE of two path sets through closed-form Frobenius inner products."""
    reference = squared_frobenius_norm(true_paths, geometry)
    if reference <= 0:
        raise ValueError("NMSE is undefined for a zero true channel")
    ratio = frobenius_distance_squared(true_paths, est_paths, geometry) / reference
    return to_db(ratio) if db else ratio


@dataclass(frozen=True)
class MetricRow:
    """One aggregated metric at one sweep point."""

    sweep_name: str
    sweep_value: float
    metric: str
    mean: float
    stderr: float
    trials: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.stderr)):
            raise ValueError(f"Metric {self.metric} has non-finite values")


def _stderr(samples: np.ndarray) -> float:
    if samples.size < 2:
        return 0.0
    return float(np.std(samples, ddof=1) / math.sqrt(samples.size))


@dataclass
class MeanAccumulator:
    """Plain sample mean with its standard error."""

    samples: list[float] = field(default_factory=list)

    def add(self, value: float) -> None:
        self.samples.append(float(value))

    def row(self, sweep_name: str, sweep_value: float, metric: str) -> MetricRow:
        values = np.asarray(self.samples)
        mean = float(values.mean()) if values.size else 0.0
        stderr = _stderr(values)
        return MetricRow(sweep_name, sweep_value, metric, mean, stderr, values.size)


@dataclass
class NmseAccumulator(MeanAccumulator):
    """Averages linear NMSE ratios and reports dB (delta-method stderr)."""

    def row(self, sweep_name: str, sweep_value: float, metric: str) -> MetricRow:
        values = np.asarray(self.samples)
        mean = float(values.mean()) if values.size else 0.0
        mean_db = to_db(mean)
        stderr = 10.0 / math.log(10.0) * _stderr(values) / mean if mean > 0 else 0.0
        return MetricRow(sweep_name, sweep_value, metric, mean_db, stderr, values.size)


@dataclass
class RmseAccumulator(MeanAccumulator):
    """Collects squared errors; the root is taken after averaging."""

    def row(self, sweep_name: str, sweep_value: float, metric: str) -> MetricRow:
        values = np.asarray(self.samples)
        mean_square = float(values.mean()) if values.size else 0.0
        rmse = math.sqrt(mean_square)
        stderr = _stderr(values) / (2.0 * rmse) if rmse > 0 else 0.0
        return MetricRow(sweep_name, sweep_value, metric, rmse, stderr, values.size)


@dataclass
class BerAccumulator:
    """Pools bit errors and bit counts over frames."""

    errors: int = 0
    bits: int = 0
    frames: int = 0

    def add(self, errors: int, bits: int) -> None:
        self.errors += int(errors)
        self.bits += int(bits)
        self.frames += 1

    def row(self, sweep_name: str, sweep_value: float, metric: str) -> MetricRow:
        rate = self.errors / self.bits if self.bits else 0.0
        stderr = math.sqrt(rate * (1.0 - rate) / self.bits) if self.bits else 0.0
        return MetricRow(sweep_name, sweep_value, metric, rate, stderr, self.frames)
