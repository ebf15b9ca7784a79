"""Disjoint delay-Doppler correlation-based channel estimation.

Paths are extracted one at a time from the residual observation. Each
iteration finds the integer bin with the largest pilot energy, refines the
Doppler with a matched-filter bank, compensates it, refines the delay the
same way, projects out the gain and cancels the reconstructed path
(inter-path interference cancellation).
"""
import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Optional

import numpy as np

from ..core.geometry import FrameGeometry, PathParams, PathSet
from ..core.operators import QMode, apply_Q, apply_T, build_channel_operator
from ..link.channel import ChannelProfile
from ..link.waveform import PilotSpec

if TYPE_CHECKING:
    from ..core.operators import ChannelOperator
    from .fnn import PathCountDetector

logger = logging.getLogger(__name__)


class PathSource(str, Enum):
    """Where the number of paths to extract comes from."""

    KNOWN = "known"
    FNN = "fnn"
    SC = "sc"


@dataclass(frozen=True)
class EstimatorConfig:
    """Search limits and refinement grids of the correlation estimator.

    Attributes:
        L_max: Largest integer delay searched
        K_max: Largest absolute integer Doppler searched
        L_h: Number of hierarchical refinement levels
        N_l: Half size of the delay grid (resolution ``(2 N_l)^-h``)
        N_k: Half size of the Doppler grid (resolution ``(2 N_k)^-h``)
        known_P: Path count when ``p_source`` is ``known``
        p_source: ``known``, ``fnn`` or ``sc``
        noise_variance: N0 used by the stopping criterion and threshold method
        sc_gamma: Residual-energy ratio below which the stopping criterion fires
        sc_threshold_factor: Peak-bin amplitude threshold in units of sigma
        sc_max_paths: Cap on paths extracted under the stopping criterion
    """

    L_max: int
    K_max: int
    L_h: int = 2
    N_l: int = 7
    N_k: int = 7
    known_P: Optional[int] = None
    p_source: PathSource = PathSource.KNOWN
    noise_variance: float = 1.0
    sc_gamma: float = 0.05
    sc_threshold_factor: float = 3.0
    sc_max_paths: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "p_source", PathSource(self.p_source))
        if self.L_max < 0 or self.K_max < 0:
            raise ValueError("L_max and K_max must be non-negative")
        if self.L_h < 1:
            raise ValueError(f"L_h must be at least 1, got {self.L_h}")
        if self.N_l < 1 or self.N_k < 1:
            raise ValueError("N_l and N_k must be at least 1")
        if self.known_P is not None and self.known_P < 0:
            raise ValueError(f"known_P must be non-negative, got {self.known_P}")
        if self.p_source is PathSource.KNOWN and self.known_P is None:
            raise ValueError("p_source 'known' requires known_P")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        if not 0 < self.sc_gamma < 1:
            raise ValueError(f"sc_gamma must lie in (0, 1), got {self.sc_gamma}")
        if self.sc_max_paths is not None and self.sc_max_paths < 1:
            raise ValueError("sc_max_paths must be positive")

    @classmethod
    def from_profile(
        cls, profile: ChannelProfile, geometry: FrameGeometry, **overrides
    ) -> "EstimatorConfig":
        """Search limits from the prefix and mobility bounds of ``profile``.

        ``L_max = ceil(sigma_tau / delta_tau)``, ``K_max = ceil(nu_max / delta_nu)``
        and, unless given, ``known_P`` is the profile's path count.
        """
        L_max = geometry.max_delay_bins(profile.delay_spread_s)
        K_max = geometry.max_doppler_bins(profile.max_doppler_hz(geometry.f_c))
        if K_max > geometry.N // 2:
            logger.warning(f"K_max={K_max} exceeds N/2, clamping to {geometry.N // 2}")
            K_max = geometry.N // 2
        L_max = min(L_max, geometry.M - 1)
        values = {"L_max": L_max, "K_max": K_max, "known_P": profile.num_paths}
        values.update(overrides)
        return cls(**values)

    def validate(self, geometry: FrameGeometry) -> None:
        if self.L_max >= geometry.M:
            raise ValueError(f"L_max={self.L_max} must be smaller than M={geometry.M}")
        if self.K_max > geometry.N // 2:
            raise ValueError(
                f"K_max={self.K_max} must not exceed N/2={geometry.N // 2}"
            )

    @property
    def search_size(self) -> int:
        """Number of integer (L, K) pairs in the search set."""
        return (self.L_max + 1) * (2 * self.K_max + 1)

    def delay_step(self, level: int) -> float:
        return (2.0 * self.N_l) ** (-level)

    def doppler_step(self, level: int) -> float:
        return (2.0 * self.N_k) ** (-level)


@dataclass
class PathTrace:
    """How one path estimate was reached."""

    integer_delay: int
    integer_doppler: int
    doppler_levels: list[float] = field(default_factory=list)
    delay_levels: list[float] = field(default_factory=list)
    doppler_peaks: list[float] = field(default_factory=list)
    delay_peaks: list[float] = field(default_factory=list)


@dataclass
class EstimationReport:
    """Estimated paths with the residual energy after every iteration.

    ``residual_energies[0]`` is ``||y||^2``; entry ``i`` is the energy left
    after cancelling the first ``i`` paths.
    """

    paths: PathSet
    residual_energies: list[float]
    traces: list[PathTrace]
    P_hat: int
    source: str

    def channel_operator(self, geometry: FrameGeometry) -> "ChannelOperator":
        """``H_hat = sum_i g_i T(l_i, k_i)`` (requires at least one path)."""
        return build_channel_operator(self.paths, geometry)


def _search_window(cfg: EstimatorConfig) -> tuple[np.ndarray, np.ndarray]:
    delays = np.arange(cfg.L_max + 1)
    dopplers = np.arange(-cfg.K_max, cfg.K_max + 1)
    return delays, dopplers


def _first_argmax(values: np.ndarray) -> tuple[int, ...]:
    # np.argmax returns the first occurrence in row-major order
    flat = int(np.argmax(values))
    return tuple(int(i) for i in np.unravel_index(flat, values.shape))


def window_energies(
    Y_res: np.ndarray, pilot: PilotSpec, cfg: EstimatorConfig
) -> np.ndarray:
    """``|Y[m_p + L, n_p + K]|^2`` over the search set, indices wrapped."""
    Y_res = np.asarray(Y_res)
    M, N = Y_res.shape
    delays, dopplers = _search_window(cfg)
    rows = (pilot.m_p + delays) % M
    cols = (pilot.n_p + dopplers) % N
    return np.abs(Y_res[np.ix_(rows, cols)]) ** 2


def integer_dd_init(
    Y_res: np.ndarray, pilot: PilotSpec, cfg: EstimatorConfig
) -> tuple[int, int]:
    """Integer (L, K) holding the most pilot energy.

    Ties go to the smallest L, then the smallest K.
    """
    energies = window_energies(Y_res, pilot, cfg)
    l_index, k_index = _first_argmax(energies)
    return l_index, k_index - cfg.K_max


def _doppler_candidates(center: float, level: int, cfg: EstimatorConfig) -> np.ndarray:
    return center + np.arange(-cfg.N_k, cfg.N_k + 1) * cfg.doppler_step(level)


def _delay_candidates(center: float, level: int, cfg: EstimatorConfig) -> np.ndarray:
    step = cfg.delay_step(level)
    lowest = max(-cfg.N_l, math.ceil(-center / step - 1e-9))
    return np.maximum(center + np.arange(lowest, cfg.N_l + 1) * step, 0.0)


def refine_doppler(
    y_res: np.ndarray,
    L_hat: int,
    K_hat: int,
    reference: np.ndarray,
    cfg: EstimatorConfig,
    geometry: FrameGeometry,
    trace: Optional[PathTrace] = None,
) -> float:
    """Hierarchical Doppler search maximizing ``|x^H Q^T(L) Q^H(c) y|``.

    Each level recenters a ``2 N_k + 1`` point grid of spacing
    ``(2 N_k)^-h`` on the running estimate.
    """
    matched = apply_Q(L_hat, reference, geometry, QMode.CONJUGATE)
    estimate = float(K_hat)
    for level in range(1, cfg.L_h + 1):
        candidates = _doppler_candidates(estimate, level, cfg)
        compensated = apply_Q(candidates, y_res, geometry, QMode.ADJOINT)
        objective = np.abs(compensated @ matched.conj())
        best = int(np.argmax(objective))
        estimate = float(candidates[best])
        if trace is not None:
            trace.doppler_levels.append(estimate)
            trace.doppler_peaks.append(float(objective[best]))
    return estimate


def doppler_compensate(
    y_res: np.ndarray, k_hat: float, geometry: FrameGeometry
) -> np.ndarray:
    """``y_d = Q^H(k_hat) y_res``."""
    return apply_Q(k_hat, y_res, geometry, QMode.ADJOINT)


def refine_delay(
    y_d: np.ndarray,
    L_hat: int,
    reference: np.ndarray,
    cfg: EstimatorConfig,
    geometry: FrameGeometry,
    trace: Optional[PathTrace] = None,
) -> float:
    """Hierarchical delay search maximizing ``|x^H Q^T(c) y_d|``.

    Candidates that would give a negative delay are never proposed.
    """
    estimate = float(L_hat)
    for level in range(1, cfg.L_h + 1):
        candidates = _delay_candidates(estimate, level, cfg)
        responses = apply_Q(candidates, y_d, geometry, QMode.CONJUGATE_ADJOINT)
        objective = np.abs(responses @ np.conj(reference))
        best = int(np.argmax(objective))
        estimate = float(candidates[best])
        if trace is not None:
            trace.delay_levels.append(estimate)
            trace.delay_peaks.append(float(objective[best]))
    return estimate


def _reference_energy(reference: np.ndarray, energy: Optional[float]) -> float:
    energy = float(np.vdot(reference, reference).real) if energy is None else energy
    if not energy > 0:
        raise ValueError(f"Reference energy must be positive, got {energy}")
    return energy


def estimate_gain(
    y_res: np.ndarray,
    l_hat: float,
    k_hat: float,
    reference: np.ndarray,
    geometry: FrameGeometry,
    energy: Optional[float] = None,
) -> complex:
    """Projection ``g = (T x)^H y / E`` with ``E`` defaulting to ``||x||^2``."""
    energy = _reference_energy(reference, energy)
    response = apply_T(l_hat, k_hat, reference, geometry)
    return complex(np.vdot(response, y_res) / energy)


def cancel_ipi(
    y_res: np.ndarray,
    g_hat: complex,
    l_hat: float,
    k_hat: float,
    reference: np.ndarray,
    geometry: FrameGeometry,
) -> np.ndarray:
    """Remove the reconstructed path: ``y - g T(l, k) x``."""
    return np.asarray(y_res) - g_hat * apply_T(l_hat, k_hat, reference, geometry)


IntegerInit = Callable[[np.ndarray], tuple[int, int]]
StopRule = Callable[[np.ndarray, int], bool]


def successive_extraction(
    y: np.ndarray,
    reference: np.ndarray,
    cfg: EstimatorConfig,
    geometry: FrameGeometry,
    max_paths: int,
    integer_init: IntegerInit,
    energy: Optional[float] = None,
    stop_rule: Optional[StopRule] = None,
) -> tuple[PathSet, list[float], list[PathTrace]]:
    """Extract up to ``max_paths`` paths with interference cancellation.

    Args:
        y: Observation
        reference: Known transmitted frame (pilot or data)
        cfg: Estimator configuration
        geometry: Frame geometry
        max_paths: Number of iterations to run at most
        integer_init: Maps the residual to an integer (L, K) start
        energy: Normalizer of the gain projection, ``||reference||^2`` if None
        stop_rule: Called as ``stop_rule(y_res, i)`` before iteration ``i``

    Returns:
        Estimated paths, residual energies and per-path traces
    """
    energy = _reference_energy(reference, energy)
    y_res = np.array(y, dtype=complex)
    energies = [float(np.vdot(y_res, y_res).real)]
    paths: list[PathParams] = []
    traces: list[PathTrace] = []

    for i in range(1, max_paths + 1):
        if stop_rule is not None and stop_rule(y_res, i):
            logger.debug(f"Stopping criterion fired before iteration {i}")
            break
        L_hat, K_hat = integer_init(y_res)
        trace = PathTrace(integer_delay=L_hat, integer_doppler=K_hat)
        k_hat = refine_doppler(y_res, L_hat, K_hat, reference, cfg, geometry, trace)
        y_d = doppler_compensate(y_res, k_hat, geometry)
        l_hat = refine_delay(y_d, L_hat, reference, cfg, geometry, trace)
        g_hat = estimate_gain(y_res, l_hat, k_hat, reference, geometry, energy)
        y_res = cancel_ipi(y_res, g_hat, l_hat, k_hat, reference, geometry)

        energies.append(float(np.vdot(y_res, y_res).real))
        paths.append(PathParams(gain=g_hat, delay=l_hat, doppler=k_hat))
        traces.append(trace)
        logger.debug(
            f"Path {i}: (L, K)=({L_hat}, {K_hat}) -> l={l_hat:.4f}, k={k_hat:.4f}, "
            f"|g|={abs(g_hat):.4f}, residual {energies[-1]:.4e}"
        )

    return PathSet(tuple(paths)), energies, traces


def _sc_stop_rule(
    y: np.ndarray, pilot: PilotSpec, cfg: EstimatorConfig, geometry: FrameGeometry
) -> StopRule:
    initial = float(np.vdot(y, y).real)
    peak_floor = (cfg.sc_threshold_factor**2) * cfg.noise_variance

    def stop(y_res: np.ndarray, iteration: int) -> bool:
        peak = float(window_energies(geometry.unvec(y_res), pilot, cfg).max())
        if peak < peak_floor:
            return True
        remaining = float(np.vdot(y_res, y_res).real)
        return initial > 0 and remaining / initial < cfg.sc_gamma

    return stop


def _pilot_init(
    pilot: PilotSpec, cfg: EstimatorConfig, geometry: FrameGeometry
) -> IntegerInit:
    return lambda y_res: integer_dd_init(geometry.unvec(y_res), pilot, cfg)


def estimate_channel(
    y: np.ndarray,
    pilot: PilotSpec,
    cfg: EstimatorConfig,
    geometry: FrameGeometry,
    detector: Optional["PathCountDetector"] = None,
) -> EstimationReport:
    """Correlation-based channel estimation from a received pilot frame.

    Args:
        y: Received pilot frame (DD vector)
        pilot: Pilot placement and energy
        cfg: Estimator configuration; ``p_source`` picks how P is found
        geometry: Frame geometry
        detector: Path-count detector, required when ``p_source`` is ``fnn``

    Returns:
        EstimationReport with the estimated paths
    """
    pilot.validate(geometry)
    cfg.validate(geometry)
    y = np.asarray(y, dtype=complex)
    if y.shape != (geometry.size,):
        raise ValueError(
            f"Expected a length-{geometry.size} observation, got {y.shape}"
        )
    x_p = pilot.vector(geometry)
    init = _pilot_init(pilot, cfg, geometry)

    stop_rule: Optional[StopRule] = None
    if cfg.p_source is PathSource.KNOWN:
        max_paths = int(cfg.known_P or 0)
    elif cfg.p_source is PathSource.FNN:
        if detector is None:
            raise ValueError("p_source 'fnn' needs a loaded path-count detector")
        max_paths = detector.count_paths(y, pilot.E_p)
    else:
        max_paths = cfg.sc_max_paths or cfg.search_size
        stop_rule = _sc_stop_rule(y, pilot, cfg, geometry)

    paths, energies, traces = successive_extraction(
        y, x_p, cfg, geometry, max_paths, init, pilot.E_p, stop_rule
    )
    if stop_rule is not None and len(paths) == max_paths:
        logger.warning(f"Stopping criterion reached the cap of {max_paths} paths")
    if len(paths) == 0:
        logger.warning("Channel estimate is empty")

    return EstimationReport(
        paths=paths,
        residual_energies=energies,
        traces=traces,
        P_hat=len(paths),
        source=cfg.p_source.value,
    )


def sc_estimate_P(
    y: np.ndarray, pilot: PilotSpec, cfg: EstimatorConfig, geometry: FrameGeometry
) -> int:
    """Number of iterations run before the stopping criterion fires.

    Iteration ``i`` is skipped (and extraction ends) when the strongest
    window bin of the residual is below ``(3 sigma)^2`` or when the residual
    keeps less than ``sc_gamma`` of the initial energy.
    """
    sc_cfg = cfg
    if cfg.p_source is not PathSource.SC:
        sc_cfg = replace(cfg, p_source=PathSource.SC)
    return estimate_channel(y, pilot, sc_cfg, geometry).P_hat
