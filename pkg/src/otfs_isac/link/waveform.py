"""OTFS modulation with a single reduced cyclic prefix.

With rectangular pulses the transmitter is ``s = (F_N^H kron I_M) x`` and
the receiver ``y = (F_N kron I_M) r``; both are length-N inverse/forward
FFTs along the slot index of every delay row.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft as sfft

from ..core.geometry import FrameGeometry
from ..core.rng import SeedLike, as_generator

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class DdGrid:
    """M x N delay-Doppler symbol grid ``X`` with its frame geometry."""

    geometry: FrameGeometry
    symbols: np.ndarray

    def __post_init__(self) -> None:
        symbols = np.array(self.symbols, dtype=complex)
        if symbols.shape != (self.geometry.M, self.geometry.N):
            raise ValueError(
                f"Grid shape {symbols.shape} does not match "
                f"({self.geometry.M}, {self.geometry.N})"
            )
        symbols.setflags(write=False)
        object.__setattr__(self, "symbols", symbols)

    @classmethod
    def zeros(cls, geometry: FrameGeometry) -> "DdGrid":
        return cls(geometry, np.zeros((geometry.M, geometry.N), dtype=complex))

    @classmethod
    def from_vector(cls, vector: np.ndarray, geometry: FrameGeometry) -> "DdGrid":
        """Build a grid from ``x = vec(X)``."""
        return cls(geometry, geometry.unvec(np.asarray(vector)))

    @property
    def vector(self) -> np.ndarray:
        """Column-stacked ``x = vec(X)``."""
        return self.geometry.vec(self.symbols)

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.symbols) ** 2))


@dataclass(frozen=True)
class PilotSpec:
    """Single-pilot frame ``X_p[m, n] = sqrt(E_p) delta(m - m_p) delta(n - n_p)``.

    Attributes:
        m_p: Delay index of the pilot
        n_p: Doppler index of the pilot
        E_p: Pilot energy
    """

    m_p: int
    n_p: int
    E_p: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.E_p) or self.E_p <= 0:
            raise ValueError(f"Pilot energy must be positive, got {self.E_p}")
        if int(self.m_p) != self.m_p or int(self.n_p) != self.n_p:
            raise ValueError("Pilot indices must be integers")

    @classmethod
    def centered(cls, geometry: FrameGeometry, E_p: float) -> "PilotSpec":
        """Pilot at ``(ceil(M/2), ceil(N/2))``, clamped into the grid."""
        m_p = min(math.ceil(geometry.M / 2), geometry.M - 1)
        n_p = min(math.ceil(geometry.N / 2), geometry.N - 1)
        return cls(m_p=m_p, n_p=n_p, E_p=E_p)

    def validate(self, geometry: FrameGeometry) -> None:
        if not (0 <= self.m_p < geometry.M and 0 <= self.n_p < geometry.N):
            raise ValueError(
                f"Pilot position ({self.m_p}, {self.n_p}) outside the "
                f"{geometry.M}x{geometry.N} grid"
            )

    @property
    def amplitude(self) -> float:
        return math.sqrt(self.E_p)

    def index(self, geometry: FrameGeometry) -> int:
        """Position of the pilot in ``vec(X_p)``."""
        self.validate(geometry)
        return self.m_p + self.n_p * geometry.M

    def vector(self, geometry: FrameGeometry) -> np.ndarray:
        """The pilot frame ``x_p`` as a length-MN vector."""
        x_p = np.zeros(geometry.size, dtype=complex)
        x_p[self.index(geometry)] = self.amplitude
        return x_p


def _gray_to_binary(gray: np.ndarray, width: int) -> np.ndarray:
    binary = gray.copy()
    shift = 1
    while shift < width:
        binary ^= binary >> shift
        shift <<= 1
    return binary


def _bits_to_int(bits: np.ndarray) -> np.ndarray:
    # MSB first along the last axis
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits.astype(np.int64) @ weights


@dataclass(frozen=True, eq=False)
class Constellation:
    """Gray-labeled square QAM with unit average symbol energy.

    ``points[label]`` is the symbol carrying the bit pattern of ``label``
    (MSB first). The first half of the bits selects the in-phase level, the
    second half the quadrature level; on each axis the Gray-decoded index
    ``i`` maps to amplitude ``(L - 1) - 2 i``.
    """

    order: int
    points: np.ndarray

    @classmethod
    def qam(cls, order: int = 4) -> "Constellation":
        bits = math.log2(order) if order > 1 else 0.0
        if order < 4 or not bits.is_integer() or int(bits) % 2:
            raise ValueError(f"Square QAM needs order 4**n, got {order}")
        half = int(bits) // 2
        levels = 1 << half
        labels = np.arange(order)
        i_gray = labels >> half
        q_gray = labels & (levels - 1)
        i_amp = (levels - 1) - 2 * _gray_to_binary(i_gray, half)
        q_amp = (levels - 1) - 2 * _gray_to_binary(q_gray, half)
        scale = math.sqrt(2.0 * (levels**2 - 1) / 3.0)
        return cls(order=order, points=(i_amp + 1j * q_amp) / scale)

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=complex)
        if points.shape != (self.order,):
            raise ValueError(f"Expected {self.order} points, got {points.shape}")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def bits_per_symbol(self) -> int:
        return int(round(math.log2(self.order)))

    @property
    def average_energy(self) -> float:
        return float(np.mean(np.abs(self.points) ** 2))

    def labels_from_bits(self, bits: np.ndarray) -> np.ndarray:
        bits = np.asarray(bits)
        if bits.size % self.bits_per_symbol:
            raise ValueError(
                f"Bit count {bits.size} is not a multiple of {self.bits_per_symbol}"
            )
        if bits.size and not np.all((bits == 0) | (bits == 1)):
            raise ValueError("Bits must be 0 or 1")
        return _bits_to_int(bits.reshape(-1, self.bits_per_symbol))

    def bits_from_labels(self, labels: np.ndarray) -> np.ndarray:
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((labels[:, None] >> shifts) & 1).astype(np.uint8).reshape(-1)

    def map_bits(self, bits: np.ndarray) -> np.ndarray:
        return self.points[self.labels_from_bits(bits)]

    def nearest_labels(self, symbols: np.ndarray) -> np.ndarray:
        """Label of the nearest point; ties go to the smaller label."""
        symbols = np.asarray(symbols, dtype=complex)
        distances = np.abs(symbols[..., None] - self.points) ** 2
        return np.argmin(distances, axis=-1)


def qam_map(
    bits: np.ndarray,
    geometry: FrameGeometry,
    constellation: Optional[Constellation] = None,
) -> DdGrid:
    """Map ``MN log2(Q)`` bits onto a data grid, filling ``vec(X)`` in order."""
    constellation = constellation or Constellation.qam(4)
    bits = np.asarray(bits).reshape(-1)
    expected = geometry.size * constellation.bits_per_symbol
    if bits.size != expected:
        raise ValueError(f"Expected {expected} bits for one frame, got {bits.size}")
    return DdGrid.from_vector(constellation.map_bits(bits), geometry)


def random_data_frame(
    geometry: FrameGeometry,
    constellation: Constellation,
    rng: SeedLike = None,
    E_s: float = 1.0,
) -> tuple[DdGrid, np.ndarray]:
    """Uniform random payload bits and the grid carrying them at energy E_s."""
    if E_s <= 0:
        raise ValueError(f"Symbol energy must be positive, got {E_s}")
    rng = as_generator(rng)
    bits = rng.integers(0, 2, size=geometry.size * constellation.bits_per_symbol)
    bits = bits.astype(np.uint8)
    grid = qam_map(bits, geometry, constellation)
    if E_s != 1.0:
        grid = DdGrid(geometry, grid.symbols * math.sqrt(E_s))
    return grid, bits


def _check_samples(samples: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    samples = np.asarray(samples, dtype=complex)
    if samples.shape[-1:] != (geometry.size,):
        raise ValueError(
            f"Expected {geometry.size} samples per frame, got shape {samples.shape}"
        )
    return samples


def modulate(grid: DdGrid) -> np.ndarray:
    """Transmit samples ``s = (F_N^H kron I_M) vec(X)``."""
    geometry = grid.geometry
    slots = grid.vector.reshape(geometry.N, geometry.M)
    return sfft.ifft(slots, axis=0, norm="ortho").reshape(-1)


def demodulate(r: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    """DD observation ``y = (F_N kron I_M) r`` from CP-free samples."""
    r = _check_samples(r, geometry)
    slots = r.reshape(*r.shape[:-1], geometry.N, geometry.M)
    return sfft.fft(slots, axis=-2, norm="ortho").reshape(r.shape)


def add_rcp(s: np.ndarray, cp_len: int) -> np.ndarray:
    """Prepend the last ``cp_len`` samples as one prefix for the whole frame."""
    s = np.asarray(s, dtype=complex)
    if int(cp_len) != cp_len or not 0 <= cp_len < s.shape[-1]:
        raise ValueError(f"CP length must be in [0, {s.shape[-1]}), got {cp_len}")
    if cp_len == 0:
        return s.copy()
    return np.concatenate([s[..., -cp_len:], s], axis=-1)


def remove_rcp(r_cp: np.ndarray, cp_len: int) -> np.ndarray:
    r_cp = np.asarray(r_cp, dtype=complex)
    if int(cp_len) != cp_len or not 0 <= cp_len < r_cp.shape[-1]:
        raise ValueError(f"CP length must be in [0, {r_cp.shape[-1]}), got {cp_len}")
    return r_cp[..., cp_len:].copy()


def rcp_length(delay_spread_s: float, geometry: FrameGeometry) -> int:
    """Smallest CP length whose duration covers ``delay_spread_s``."""
    if delay_spread_s < 0:
        raise ValueError(f"Delay spread must be non-negative, got {delay_spread_s}")
    cp_len = math.ceil(delay_spread_s / geometry.sample_period - 1e-12)
    if cp_len >= geometry.size:
        raise ValueError(
            f"Delay spread {delay_spread_s}s needs a CP longer than the frame"
        )
    return cp_len


def make_pilot_frame(spec: PilotSpec, geometry: FrameGeometry) -> DdGrid:
    spec.validate(geometry)
    return DdGrid.from_vector(spec.vector(geometry), geometry)


def pilot_energy_for_snr(
    snr_p_db: float, geometry: FrameGeometry, N0: float = 1.0
) -> float:
    """``E_p`` giving ``SNR_p = E_p / (MN N0)``."""
    if N0 <= 0:
        raise ValueError(f"N0 must be positive, got {N0}")
    return geometry.size * N0 * 10.0 ** (snr_p_db / 10.0)


def snr_p_db_for_energy(E_p: float, geometry: FrameGeometry, N0: float = 1.0) -> float:
    if E_p <= 0 or N0 <= 0:
        raise ValueError("E_p and N0 must be positive")
    return 10.0 * math.log10(E_p / (geometry.size * N0))
