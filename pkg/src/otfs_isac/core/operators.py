"""Unitary delay-Doppler operator algebra.

All operators act on column-stacked DD vectors ``x = vec(X)`` of length MN,
where ``X`` is the M x N delay-Doppler grid. With rectangular pulses the
building blocks are

* ``A = F_N kron I_M`` (per-delay DFT across the N slots),
* ``F = F_MN`` (unitary DFT of the whole frame),
* ``D^a = diag(exp(j 2 pi q a / MN))``, ``q = 0..MN-1``,

and the one-parameter matrix ``Q(a) = A D^a F^H A``. Every application has
an FFT fast path and a dense oracle built from explicit DFT matrices.

Parameters may be 1-D arrays: the result then carries a leading batch axis,
one row per parameter value, which is how filterbanks are evaluated.
"""
import logging
from abc import ABC, abstractmethod
from enum import Enum
from typing import TYPE_CHECKING, Optional, Union

import numpy as np
import scipy.fft as sfft
from scipy.linalg import dft

from .geometry import FrameGeometry, PathSet

if TYPE_CHECKING:
    from .safety import PerformanceMonitor

logger = logging.getLogger(__name__)

DENSE_SIZE_LIMIT = 8192

ParameterLike = Union[float, np.ndarray]


class OperatorSizeError(ValueError):
    """Raised when a dense matrix would exceed the materialization guard."""


class QMode(str, Enum):
    """Which variant of ``Q(a)`` to apply."""

    FORWARD = "forward"
    ADJOINT = "adjoint"
    CONJUGATE = "conjugate"
    CONJUGATE_ADJOINT = "conjugate-adjoint"


class DdDomain(str, Enum):
    DELAY_TIME = "delay-time"
    DELAY_DOPPLER = "delay-Doppler"


def _check_vector(v: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    if v.ndim == 0 or v.shape[-1] != geometry.size:
        raise ValueError(
            f"Expected vectors of length MN={geometry.size}, got shape {v.shape}"
        )
    return v


def _check_parameter(a: ParameterLike, name: str = "a") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim > 1:
        raise ValueError(f"Parameter {name} must be a scalar or 1-D array")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"Parameter {name} must be finite, got {a!r}")
    return arr


def phase_ramp(a: ParameterLike, size: int) -> np.ndarray:
    """Diagonal of ``D^a``, formed directly as ``exp(j 2 pi q a / size)``."""
    q = np.arange(size)
    return np.exp(2j * np.pi * np.multiply.outer(np.asarray(a, dtype=float), q) / size)


def _slot_dft(
    v: np.ndarray, geometry: FrameGeometry, inverse: bool = False
) -> np.ndarray:
    # A = F_N kron I_M acts along the slot index of each delay row
    frames = v.reshape(*v.shape[:-1], geometry.N, geometry.M)
    transform = sfft.ifft if inverse else sfft.fft
    return transform(frames, axis=-2, norm="ortho").reshape(frames.shape[:-2] + (-1,))


def _frame_dft(v: np.ndarray, inverse: bool = False) -> np.ndarray:
    transform = sfft.ifft if inverse else sfft.fft
    return transform(v, axis=-1, norm="ortho")


def apply_Q(
    a: ParameterLike,
    v: np.ndarray,
    geometry: FrameGeometry,
    mode: Union[QMode, str] = QMode.FORWARD,
) -> np.ndarray:
    """Apply ``Q(a)`` or one of its adjoint/conjugate variants to ``v``.

    Args:
        a: Real parameter (scalar or 1-D array for a batch of operators)
        v: Vector(s) of length MN along the last axis
        geometry: Frame geometry
        mode: forward ``Q``, ``Q^H``, ``Q^*`` or ``Q^T`` (conjugate-adjoint)

    Returns:
        The mode-selected application, broadcast over any batch axis
    """
    a = _check_parameter(a)
    v = _check_vector(v, geometry)
    mode = QMode(mode)
    size = geometry.size

    if mode is QMode.FORWARD:
        w = _frame_dft(_slot_dft(v, geometry), inverse=True)
        return _slot_dft(phase_ramp(a, size) * w, geometry)
    if mode is QMode.ADJOINT:
        w = phase_ramp(-a, size) * _slot_dft(v, geometry, inverse=True)
        return _slot_dft(_frame_dft(w), geometry, inverse=True)
    if mode is QMode.CONJUGATE:
        w = _frame_dft(_slot_dft(v, geometry, inverse=True))
        return _slot_dft(phase_ramp(-a, size) * w, geometry, inverse=True)
    # Q^T(a) = A F^H D^a A
    w = phase_ramp(a, size) * _slot_dft(v, geometry)
    return _slot_dft(_frame_dft(w, inverse=True), geometry)


def apply_T(
    l: ParameterLike,
    k: ParameterLike,
    v: np.ndarray,
    geometry: FrameGeometry,
    adjoint: bool = False,
) -> np.ndarray:
    """Apply the single-path matrix ``T(l, k) = Q(k) Q^*(l)`` or its adjoint.

    Forward is ``A D^k F^H D^-l F A^H``; the adjoint is
    ``A F^H D^l F D^-k A^H``.
    """
    l = _check_parameter(l, "l")
    k = _check_parameter(k, "k")
    v = _check_vector(v, geometry)
    size = geometry.size

    w = _slot_dft(v, geometry, inverse=True)
    if not adjoint:
        w = _frame_dft(phase_ramp(-l, size) * _frame_dft(w), inverse=True)
        return _slot_dft(phase_ramp(k, size) * w, geometry)
    w = _frame_dft(phase_ramp(-k, size) * w)
    return _slot_dft(_frame_dft(phase_ramp(l, size) * w, inverse=True), geometry)


class DdOperator(ABC):
    """Linear operator on length-MN delay-Doppler vectors."""

    kind: str = "operator"

    def __init__(self, geometry: FrameGeometry):
        self._geometry = geometry

    @property
    def geometry(self) -> FrameGeometry:
        return self._geometry

    @abstractmethod
    def _forward(self, v: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _adjoint(self, v: np.ndarray) -> np.ndarray: ...

    def forward(self, v: np.ndarray) -> np.ndarray:
        """Apply the operator."""
        return self._forward(_check_vector(v, self._geometry))

    def adjoint(self, v: np.ndarray) -> np.ndarray:
        """Apply the Hermitian adjoint."""
        return self._adjoint(_check_vector(v, self._geometry))

    def __matmul__(self, v: np.ndarray) -> np.ndarray:
        return self.forward(v)

    def to_dense(self) -> np.ndarray:
        """Materialize the operator column by column."""
        _check_dense_size(self._geometry)
        basis = np.eye(self._geometry.size, dtype=complex)
        # each row of the batch is the image of one basis vector
        return np.asarray(self._forward(basis)).T.copy()

    def __repr__(self) -> str:
        return f"{type(self).__name__}(kind={self.kind!r}, geometry={self._geometry})"


class QOperator(DdOperator):
    """``Q(a)`` as an operator."""

    kind = "Q"

    def __init__(self, a: float, geometry: FrameGeometry):
        super().__init__(geometry)
        self._a = float(_check_parameter(a))

    @property
    def a(self) -> float:
        return self._a

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return apply_Q(self._a, v, self._geometry, QMode.FORWARD)

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        return apply_Q(self._a, v, self._geometry, QMode.ADJOINT)


class TOperator(DdOperator):
    """Single-path matrix ``T(l, k)``."""

    kind = "T"

    def __init__(self, l: float, k: float, geometry: FrameGeometry):
        super().__init__(geometry)
        self._l = float(_check_parameter(l, "l"))
        self._k = float(_check_parameter(k, "k"))

    @property
    def delay(self) -> float:
        return self._l

    @property
    def doppler(self) -> float:
        return self._k

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return apply_T(self._l, self._k, v, self._geometry)

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        return apply_T(self._l, self._k, v, self._geometry, adjoint=True)


class ChannelOperator(DdOperator):
    """Composite DD channel ``H_DD = sum_i g_i T(l_i, k_i)``.

    The adjoint ``sum_i g_i^* T_i^H`` is the matched-filter combiner. When a
    monitor is given, every application is recorded under
    ``channel.forward`` / ``channel.adjoint``.
    """

    kind = "H_DD"

    def __init__(
        self,
        paths: PathSet,
        geometry: FrameGeometry,
        monitor: Optional["PerformanceMonitor"] = None,
    ):
        if len(paths) == 0:
            raise ValueError("Cannot build a channel operator from an empty PathSet")
        super().__init__(geometry)
        self._paths = paths
        self._monitor = monitor

    @property
    def paths(self) -> PathSet:
        return self._paths

    def _apply(self, v: np.ndarray, adjoint: bool) -> np.ndarray:
        out = np.zeros(v.shape, dtype=complex)
        for path in self._paths:
            gain = np.conj(path.gain) if adjoint else path.gain
            out += gain * apply_T(path.delay, path.doppler, v, self._geometry, adjoint)
        return out

    def _forward(self, v: np.ndarray) -> np.ndarray:
        if self._monitor is None:
            return self._apply(v, adjoint=False)
        with self._monitor.measure_operation("channel.forward"):
            return self._apply(v, adjoint=False)

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        if self._monitor is None:
            return self._apply(v, adjoint=True)
        with self._monitor.measure_operation("channel.adjoint"):
            return self._apply(v, adjoint=True)

    def with_monitor(
        self, monitor: Optional["PerformanceMonitor"]
    ) -> "ChannelOperator":
        return ChannelOperator(self._paths, self._geometry, monitor)


class DenseOperator(DdOperator):
    """Operator backed by an explicit MN x MN matrix."""

    kind = "dense"

    def __init__(self, matrix: np.ndarray, geometry: FrameGeometry):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (geometry.size, geometry.size):
            raise ValueError(
                f"Dense operator must be {geometry.size}x{geometry.size}, "
                f"got {matrix.shape}"
            )
        super().__init__(geometry)
        self._matrix = matrix
        self._matrix.setflags(write=False)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def _forward(self, v: np.ndarray) -> np.ndarray:
        return v @ self._matrix.T

    def _adjoint(self, v: np.ndarray) -> np.ndarray:
        return v @ self._matrix.conj()

    def to_dense(self) -> np.ndarray:
        return self._matrix.copy()


def build_channel_operator(
    paths: PathSet,
    geometry: FrameGeometry,
    monitor: Optional["PerformanceMonitor"] = None,
) -> ChannelOperator:
    """Build ``H_DD`` for a non-empty path set."""
    return ChannelOperator(paths, geometry, monitor)


# Dense oracles


def _check_dense_size(geometry: FrameGeometry) -> None:
    if geometry.size > DENSE_SIZE_LIMIT:
        raise OperatorSizeError(
            f"Refusing to materialize a {geometry.size}x{geometry.size} matrix "
            f"(limit MN <= {DENSE_SIZE_LIMIT})"
        )


def dense_building_blocks(geometry: FrameGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Return the explicit ``(A, F_MN)`` matrices."""
    _check_dense_size(geometry)
    slot = np.kron(dft(geometry.N, scale="sqrtn"), np.eye(geometry.M))
    frame = dft(geometry.size, scale="sqrtn")
    return slot, frame


def dense_phase_matrix(a: float, geometry: FrameGeometry) -> np.ndarray:
    """Explicit ``D^a``."""
    _check_dense_size(geometry)
    return np.diag(phase_ramp(float(a), geometry.size))


def dense_q_matrix(
    a: float, geometry: FrameGeometry, mode: Union[QMode, str] = QMode.FORWARD
) -> np.ndarray:
    slot, frame = dense_building_blocks(geometry)
    q = slot @ dense_phase_matrix(a, geometry) @ frame.conj().T @ slot
    mode = QMode(mode)
    if mode is QMode.ADJOINT:
        return q.conj().T
    if mode is QMode.CONJUGATE:
        return q.conj()
    if mode is QMode.CONJUGATE_ADJOINT:
        return q.T
    return q


def dense_t_matrix(l: float, k: float, geometry: FrameGeometry) -> np.ndarray:
    slot, frame = dense_building_blocks(geometry)
    delay_time = (
        dense_phase_matrix(k, geometry)
        @ frame.conj().T
        @ dense_phase_matrix(-l, geometry)
        @ frame
    )
    return slot @ delay_time @ slot.conj().T


def dense_channel_matrix(
    paths: PathSet,
    geometry: FrameGeometry,
    domain: Union[DdDomain, str] = DdDomain.DELAY_DOPPLER,
) -> np.ndarray:
    """Explicit channel matrix in the delay-time or delay-Doppler domain."""
    slot, frame = dense_building_blocks(geometry)
    delay_time = np.zeros((geometry.size, geometry.size), dtype=complex)
    for path in paths:
        delay_time += path.gain * (
            dense_phase_matrix(path.doppler, geometry)
            @ frame.conj().T
            @ dense_phase_matrix(-path.delay, geometry)
            @ frame
        )
    if DdDomain(domain) is DdDomain.DELAY_TIME:
        return delay_time
    return slot @ delay_time @ slot.conj().T


def cyclic_shift_matrix(shift: int, size: int) -> np.ndarray:
    """Forward cyclic shift permutation ``Pi^shift``: ``(Pi v)[q] = v[q - shift]``."""
    return np.roll(np.eye(size), shift, axis=0)


# Frobenius geometry of channel matrices


def _ramp_sum(x: np.ndarray, size: int) -> np.ndarray:
    return phase_ramp(x.ravel(), size).sum(axis=-1).reshape(x.shape)


def channel_gram(
    paths_a: PathSet, paths_b: PathSet, geometry: FrameGeometry
) -> np.ndarray:
    """Matrix ``G[i, j] = tr(T_a[i]^H T_b[j])`` of Frobenius inner products.

    Uses ``tr(T_i^H T_j) = S(k_j - k_i) S(l_i - l_j) / MN`` with
    ``S(x) = sum_q exp(j 2 pi x q / MN)``.
    """
    size = geometry.size
    doppler_shift = paths_b.dopplers[None, :] - paths_a.dopplers[:, None]
    doppler_term = _ramp_sum(doppler_shift, size)
    delay_term = _ramp_sum(paths_a.delays[:, None] - paths_b.delays[None, :], size)
    return doppler_term * delay_term / size


def frobenius_gram(paths: PathSet, geometry: FrameGeometry) -> np.ndarray:
    return channel_gram(paths, paths, geometry)


def squared_frobenius_norm(paths: PathSet, geometry: FrameGeometry) -> float:
    """``||sum_i g_i T_i||_F^2`` without forming the matrix."""
    if len(paths) == 0:
        return 0.0
    gains = paths.gains
    value = np.real(np.conj(gains) @ frobenius_gram(paths, geometry) @ gains)
    return max(float(value), 0.0)


def frobenius_distance_squared(
    reference: PathSet, estimate: PathSet, geometry: FrameGeometry
) -> float:
    """``||H_ref - H_est||_F^2`` from the two path sets."""
    negated = tuple(p.with_gain(-p.gain) for p in estimate)
    return squared_frobenius_norm(PathSet(reference.paths + negated), geometry)

