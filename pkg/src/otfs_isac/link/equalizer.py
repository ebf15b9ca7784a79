"""Data detection: LMMSE benchmark, IMFC iterative equalizer, ML slicing."""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ..core.geometry import FrameGeometry
from ..core.operators import ChannelOperator, DdOperator
from ..core.rng import SeedLike, as_generator
from .waveform import Constellation

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0


class EqualizationError(RuntimeError):
    """Raised when the LMMSE system cannot be factorized."""


class DivergenceError(RuntimeError):
    """Raised when the IMFC residual grows past the divergence guard."""


@dataclass(frozen=True)
class EqualizerConfig:
    """IMFC parameters.

    Attributes:
        alpha0: Initial step size
        beta: Step decay, ``alpha(n) = alpha0 / (1 + beta (n - 1))``
        epsilon: Stop once the residual norm drops below this value
        n_max: Iteration cap
        safe_step: Replace ``alpha0`` by ``1 / rho`` from power iteration
        power_iterations: Power-iteration count used by ``safe_step``
    """

    alpha0: float = 1.0
    beta: float = 0.05
    epsilon: float = 0.0
    n_max: int = 50
    safe_step: bool = False
    power_iterations: int = 100

    def __post_init__(self) -> None:
        if not self.alpha0 > 0:
            raise ValueError(f"alpha0 must be positive, got {self.alpha0}")
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be a positive integer, got {self.n_max}")
        if self.power_iterations < 1:
            raise ValueError("power_iterations must be positive")

    @classmethod
    def for_noise(
        cls, geometry: FrameGeometry, N0: float, scale: float = 0.5, **kwargs
    ) -> "EqualizerConfig":
        """Config with ``epsilon = scale * sqrt(MN N0)``."""
        if N0 < 0 or scale < 0:
            raise ValueError("N0 and scale must be non-negative")
        return cls(epsilon=scale * math.sqrt(geometry.size * N0), **kwargs)

    def step_size(self, n: int) -> float:
        """Step size used by iteration ``n`` (1-based)."""
        return self.alpha0 / (1.0 + self.beta * (n - 1))


@dataclass
class DetectionResult:
    """Equalizer output and, once sliced, the hard decisions."""

    x_hat: np.ndarray
    iterations: int = 0
    residual_norm: float = 0.0
    converged: bool = True
    residual_history: list[float] = field(default_factory=list)
    symbols: Optional[np.ndarray] = None
    bits: Optional[np.ndarray] = None

    def detect(self, constellation: Constellation) -> "DetectionResult":
        """Fill in ML hard decisions."""
        self.symbols, self.bits = ml_detect(self.x_hat, constellation)
        return self


def _as_matrix(H: Union[np.ndarray, DdOperator]) -> np.ndarray:
    if isinstance(H, DdOperator):
        return H.to_dense()
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"Expected a square channel matrix, got shape {H.shape}")
    return H


def lmmse_equalize(
    y: np.ndarray, H: Union[np.ndarray, DdOperator], snr_d: float
) -> np.ndarray:
    """``x_hat = H^H (H H^H + I / SNR_d)^-1 y`` by Cholesky factorization.

    Args:
        y: Received DD vector
        H: Dense DD channel matrix (operators are materialized)
        snr_d: Linear data SNR ``E_s / N0``

    Returns:
        Equalized DD vector
    """
    if not snr_d > 0:
        raise ValueError(f"snr_d must be positive, got {snr_d}")
    H = _as_matrix(H)
    y = np.asarray(y, dtype=complex)
    if y.shape[-1] != H.shape[0]:
        raise ValueError(f"Observation length {y.shape[-1]} does not match H")

    system = H @ H.conj().T + np.eye(H.shape[0]) / snr_d
    try:
        factor = cho_factor(system, lower=True, check_finite=True)
        z = cho_solve(factor, y.T).T
    except (LinAlgError, ValueError) as e:
        condition = float(np.linalg.cond(system))
        logger.error(f"LMMSE factorization failed (condition number {condition:.3e})")
        raise EqualizationError(
            f"LMMSE factorization failed, condition number {condition:.3e}: {e}"
        ) from e
    return z @ H.conj()


def spectral_radius(
    channel: DdOperator, iterations: int = 100, rng: SeedLike = 0
) -> float:
    """Power-iteration estimate of ``rho(H^H H)`` (a lower bound).

    Only forward and adjoint applications are used.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be positive, got {iterations}")
    rng = as_generator(rng)
    size = channel.geometry.size
    v = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(iterations):
        w = channel.adjoint(channel.forward(v))
        estimate = float(np.real(np.vdot(v, w)))
        norm = np.linalg.norm(w)
        if norm == 0:
            return 0.0
        v = w / norm
    return estimate


def _unmonitored(channel: DdOperator) -> DdOperator:
    if isinstance(channel, ChannelOperator):
        return channel.with_monitor(None)
    return channel


def imfc_equalize(
    y: np.ndarray,
    channel: DdOperator,
    cfg: Optional[EqualizerConfig] = None,
    x0: Optional[np.ndarray] = None,
) -> DetectionResult:
    """Iterative matched-filter combining.

    Repeats ``x <- x + alpha(n) H^H (y - H x)`` until the residual norm
    drops below ``epsilon``, becomes exactly zero, or ``n_max`` iterations
    ran. The run performs ``iterations + 1`` forward and ``iterations``
    adjoint applications of ``channel``.

    Args:
        y: Received DD vector
        channel: Operator with forward and adjoint application
        cfg: Equalizer parameters
        x0: Optional starting point (zeros by default)

    Returns:
        DetectionResult with the estimate and iteration statistics

    Raises:
        DivergenceError: If ``||y - H x|| > 10 ||y||``
    """
    cfg = cfg or EqualizerConfig()
    y = np.asarray(y, dtype=complex)
    if y.shape != (channel.geometry.size,):
        raise ValueError(f"Expected a length-{channel.geometry.size} observation")

    if cfg.safe_step:
        rho = spectral_radius(_unmonitored(channel), cfg.power_iterations)
        if rho <= 0:
            raise EqualizationError("Channel has zero spectral radius")
        cfg = replace(cfg, alpha0=1.0 / rho)
        logger.debug(f"Safe step size alpha0 = 1/{rho:.4g}")

    x_hat = np.zeros_like(y) if x0 is None else np.array(x0, dtype=complex)
    y_norm = float(np.linalg.norm(y))
    residual = y - channel.forward(x_hat)
    residual_norm = float(np.linalg.norm(residual))
    history = [residual_norm]

    n = 0
    while n < cfg.n_max and residual_norm >= cfg.epsilon and residual_norm > 0:
        n += 1
        x_hat = x_hat + cfg.step_size(n) * channel.adjoint(residual)
        residual = y - channel.forward(x_hat)
        residual_norm = float(np.linalg.norm(residual))
        history.append(residual_norm)

        if residual_norm > DIVERGENCE_FACTOR * y_norm:
            logger.error(f"IMFC diverged at iteration {n}")
            raise DivergenceError(
                f"IMFC residual {residual_norm:.3e} exceeds "
                f"{DIVERGENCE_FACTOR:g}x ||y|| = {y_norm:.3e} at iteration {n}; "
                f"step size {cfg.step_size(n):.4g} is too large, "
                f"use alpha0 < 2/rho(H^H H) or safe_step"
            )

    converged = residual_norm < cfg.epsilon or residual_norm == 0
    logger.debug(f"IMFC stopped after {n} iterations, residual {residual_norm:.3e}")
    return DetectionResult(
        x_hat=x_hat,
        iterations=n,
        residual_norm=residual_norm,
        converged=converged,
        residual_history=history,
    )


def ml_detect(
    x_hat: np.ndarray, constellation: Constellation
) -> tuple[np.ndarray, np.ndarray]:
    """Symbol-by-symbol nearest-point decisions and their bits."""
    labels = constellation.nearest_labels(np.asarray(x_hat).reshape(-1))
    return constellation.points[labels], constellation.bits_from_labels(labels)


def bit_errors(bits_tx: np.ndarray, bits_rx: np.ndarray) -> int:
    bits_tx = np.asarray(bits_tx).reshape(-1)
    bits_rx = np.asarray(bits_rx).reshape(-1)
    if bits_tx.shape != bits_rx.shape:
        raise ValueError(f"Bit length mismatch: {bits_tx.size} vs {bits_rx.size}")
    return int(np.count_nonzero(bits_tx != bits_rx))


def ber(bits_tx: np.ndarray, bits_rx: np.ndarray) -> float:
    """Bit error rate (Hamming distance over length)."""
    errors = bit_errors(bits_tx, bits_rx)
    total = np.asarray(bits_tx).size
    if total == 0:
        raise ValueError("Cannot compute a BER over zero bits")
    return errors / total
