"""Frame geometry and propagation path parameters."""
import logging
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.constants import speed_of_light

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = float(speed_of_light)


def round_half_away(value: float) -> int:
    """Round to the nearest integer, ties away from zero."""
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def split_integer_fraction(value: float) -> tuple[int, float]:
    """Split a normalized delay or Doppler into (integer bin, fraction).

    The fraction always satisfies ``|fraction| <= 1/2``.
    """
    integer = round_half_away(value)
    return integer, value - integer


@dataclass(frozen=True)
class FrameGeometry:
    """OTFS frame with M subcarriers and N time slots.

    Attributes:
        M: Number of subcarriers (delay bins)
        N: Number of time slots (Doppler bins)
        delta_f: Subcarrier spacing in Hz
        f_c: Carrier frequency in Hz
    """

    M: int
    N: int
    delta_f: float = 15e3
    f_c: float = 5e9

    def __post_init__(self) -> None:
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        if not math.isfinite(self.delta_f) or self.delta_f <= 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f}")
        if not math.isfinite(self.f_c) or self.f_c <= 0:
            raise ValueError(f"f_c must be positive, got {self.f_c}")

    @property
    def size(self) -> int:
        """Number of DD resource elements (MN)."""
        return self.M * self.N

    @property
    def T(self) -> float:
        """Time-slot duration in seconds."""
        return 1.0 / self.delta_f

    @property
    def delay_resolution(self) -> float:
        """Delay bin width in seconds."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def doppler_resolution(self) -> float:
        """Doppler bin width in Hz."""
        return 1.0 / (self.N * self.T)

    @property
    def sample_period(self) -> float:
        """Sampling period T/M in seconds."""
        return self.T / self.M

    def vec(self, grid: np.ndarray) -> np.ndarray:
        """Column-stack an M x N grid into a length-MN vector."""
        grid = np.asarray(grid)
        if grid.shape[-2:] != (self.M, self.N):
            raise ValueError(
                f"Grid shape {grid.shape[-2:]} does not match ({self.M}, {self.N})"
            )
        return np.swapaxes(grid, -1, -2).reshape(*grid.shape[:-2], self.size)

    def unvec(self, vector: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`vec`."""
        vector = np.asarray(vector)
        if vector.shape[-1] != self.size:
            raise ValueError(
                f"Vector length {vector.shape[-1]} does not match MN={self.size}"
            )
        frames = vector.reshape(*vector.shape[:-1], self.N, self.M)
        return np.swapaxes(frames, -1, -2)

    def max_doppler_bins(self, max_doppler_hz: float) -> int:
        """Smallest integer Doppler bound covering ``max_doppler_hz``."""
        return math.ceil(max_doppler_hz / self.doppler_resolution - 1e-12)

    def max_delay_bins(self, delay_spread_s: float) -> int:
        """Smallest integer delay bound covering ``delay_spread_s``."""
        return math.ceil(delay_spread_s / self.delay_resolution - 1e-12)


@dataclass(frozen=True)
class PathParams:
    """A single propagation path in normalized delay-Doppler units.

    Attributes:
        gain: Complex path gain g
        delay: Normalized delay l = tau / delta_tau (>= 0)
        doppler: Normalized Doppler k = nu / delta_nu
    """

    gain: complex
    delay: float
    doppler: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.delay) and math.isfinite(self.doppler)):
            raise ValueError("Path delay and Doppler must be finite")
        if self.delay < 0:
            raise ValueError(f"Path delay must be non-negative, got {self.delay}")
        object.__setattr__(self, "gain", complex(self.gain))
        object.__setattr__(self, "delay", float(self.delay))
        object.__setattr__(self, "doppler", float(self.doppler))

    @classmethod
    def from_physical(
        cls, gain: complex, tau: float, nu: float, geometry: FrameGeometry
    ) -> "PathParams":
        """Build a path from delay in seconds and Doppler in Hz."""
        return cls(
            gain=gain,
            delay=tau / geometry.delay_resolution,
            doppler=nu / geometry.doppler_resolution,
        )

    @property
    def integer_delay(self) -> int:
        return split_integer_fraction(self.delay)[0]

    @property
    def fractional_delay(self) -> float:
        return split_integer_fraction(self.delay)[1]

    @property
    def integer_doppler(self) -> int:
        return split_integer_fraction(self.doppler)[0]

    @property
    def fractional_doppler(self) -> float:
        return split_integer_fraction(self.doppler)[1]

    def tau(self, geometry: FrameGeometry) -> float:
        """Delay in seconds."""
        return self.delay * geometry.delay_resolution

    def nu(self, geometry: FrameGeometry) -> float:
        """Doppler shift in Hz."""
        return self.doppler * geometry.doppler_resolution

    def with_gain(self, gain: complex) -> "PathParams":
        return PathParams(gain=gain, delay=self.delay, doppler=self.doppler)


@dataclass(frozen=True)
class PathSet:
    """Ordered collection of propagation paths.

    When ``normalized`` is set the total power sum |g_i|^2 must equal one.
    """

    paths: tuple[PathParams, ...] = field(default_factory=tuple)
    normalized: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "paths", tuple(self.paths))
        if self.normalized and self.paths:
            energy = self.energy
            if abs(energy - 1.0) > 1e-12:
                raise ValueError(
                    f"Normalized PathSet has total power {energy!r}, expected 1"
                )

    @classmethod
    def from_arrays(
        cls,
        gains: Iterable[complex],
        delays: Iterable[float],
        dopplers: Iterable[float],
        normalized: bool = False,
    ) -> "PathSet":
        paths = [
            PathParams(gain=g, delay=l, doppler=k)
            for g, l, k in zip(gains, delays, dopplers, strict=True)
        ]
        return cls(tuple(paths), normalized=normalized)

    def __len__(self) -> int:
        return len(self.paths)

    def __iter__(self) -> Iterator[PathParams]:
        return iter(self.paths)

    def __getitem__(self, index: int) -> PathParams:
        return self.paths[index]

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler for p in self.paths], dtype=float)

    @property
    def energy(self) -> float:
        """Total path power sum |g_i|^2."""
        return float(np.sum(np.abs(self.gains) ** 2))

    def normalize(self) -> "PathSet":
        """Return a copy rescaled so that the total power is one."""
        energy = self.energy
        if energy <= 0:
            raise ValueError("Cannot normalize a PathSet with zero total power")
        scale = 1.0 / math.sqrt(energy)
        paths = tuple(p.with_gain(p.gain * scale) for p in self.paths)
        # Rounding can leave |sum - 1| just above the tolerance for long sets.
        residual = float(np.sum(np.abs([p.gain for p in paths]) ** 2))
        if abs(residual - 1.0) > 1e-12:
            paths = tuple(p.with_gain(p.gain / math.sqrt(residual)) for p in paths)
        return PathSet(paths, normalized=True)

    def append(self, path: PathParams) -> "PathSet":
        return PathSet(self.paths + (path,), normalized=False)

    def max_delay(self) -> Optional[float]:
        return max((p.delay for p in self.paths), default=None)
