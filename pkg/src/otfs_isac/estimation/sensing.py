"""Monostatic radar sensing on backscattered data frames."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core.geometry import SPEED_OF_LIGHT, FrameGeometry, PathParams
from ..core.operators import QMode, apply_Q
from .correlation import EstimationReport, EstimatorConfig, successive_extraction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RadarTarget:
    """Range and radial velocity of one detected target."""

    range_m: float
    velocity_mps: float
    gain: complex
    delay: float
    doppler: float

    @classmethod
    def from_path(cls, path: PathParams, geometry: FrameGeometry) -> "RadarTarget":
        """``d = l delta_tau c / 2`` and ``v = k delta_nu c / (2 f_c)``."""
        return cls(
            range_m=path.delay * geometry.delay_resolution * SPEED_OF_LIGHT / 2.0,
            velocity_mps=path.doppler
            * geometry.doppler_resolution
            * SPEED_OF_LIGHT
            / (2.0 * geometry.f_c),
            gain=path.gain,
            delay=path.delay,
            doppler=path.doppler,
        )


@dataclass
class SensingReport(EstimationReport):
    targets: list[RadarTarget] = field(default_factory=list)


def correlation_grid(
    y_res: np.ndarray, x: np.ndarray, cfg: EstimatorConfig, geometry: FrameGeometry
) -> np.ndarray:
    """``|x^H Q^T(L) Q^H(K) y|`` over the integer search set (rows L, columns K)."""
    delays = np.arange(cfg.L_max + 1)
    dopplers = np.arange(-cfg.K_max, cfg.K_max + 1)
    matched = apply_Q(delays, x, geometry, QMode.CONJUGATE)
    compensated = apply_Q(dopplers, y_res, geometry, QMode.ADJOINT)
    return np.abs(matched.conj() @ compensated.T)


def sensing_integer_init(
    y_res: np.ndarray, x: np.ndarray, cfg: EstimatorConfig, geometry: FrameGeometry
) -> tuple[int, int]:
    """Integer (L, K) maximizing the data-frame correlation; ties L-major."""
    grid = correlation_grid(y_res, x, cfg, geometry)
    flat = int(np.argmax(grid))
    l_index, k_index = np.unravel_index(flat, grid.shape)
    return int(l_index), int(k_index) - cfg.K_max


def sense_targets(
    y: np.ndarray,
    x_known: np.ndarray,
    cfg: EstimatorConfig,
    geometry: FrameGeometry,
    num_targets: Optional[int] = None,
) -> SensingReport:
    """Estimate target ranges and velocities from the echo of a known frame.

    Runs the same refinement and cancellation loop as channel estimation,
    with the transmitted data frame as reference and ``||x||^2`` as the gain
    normalizer.

    Args:
        y: Received echo (DD vector)
        x_known: Transmitted data frame (DD vector)
        cfg: Estimator configuration
        geometry: Frame geometry
        num_targets: Targets to extract, ``cfg.known_P`` (or 1) by default
    """
    cfg.validate(geometry)
    x_known = np.asarray(x_known, dtype=complex)
    if x_known.shape != (geometry.size,):
        raise ValueError(f"Expected a length-{geometry.size} data frame")
    if num_targets is None:
        num_targets = cfg.known_P if cfg.known_P is not None else 1

    paths, energies, traces = successive_extraction(
        y,
        x_known,
        cfg,
        geometry,
        num_targets,
        lambda y_res: sensing_integer_init(y_res, x_known, cfg, geometry),
    )
    targets = [RadarTarget.from_path(path, geometry) for path in paths]
    for target in targets:
        logger.debug(
            f"Target at {target.range_m:.2f} m, {target.velocity_mps:.2f} m/s"
        )
    return SensingReport(
        paths=paths,
        residual_energies=energies,
        traces=traces,
        P_hat=len(paths),
        source="sensing",
        targets=targets,
    )
