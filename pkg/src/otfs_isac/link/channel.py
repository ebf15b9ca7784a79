"""Random multipath channels, channel application and AWGN."""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import scipy.fft as sfft

from ..core.geometry import SPEED_OF_LIGHT, FrameGeometry, PathParams, PathSet
from ..core.operators import build_channel_operator, phase_ramp
from ..core.rng import SeedLike, as_generator

logger = logging.getLogger(__name__)


def db_to_linear(value_db: float) -> float:
    return 10.0 ** (value_db / 10.0)


def linear_to_db(value: float) -> float:
    if value <= 0:
        raise ValueError(f"Cannot express {value} in dB")
    return 10.0 * math.log10(value)


def kmh_to_mps(speed_kmh: float) -> float:
    return speed_kmh / 3.6


class DelayModel(str, Enum):
    """How path delays are chosen for each draw."""

    FIXED = "fixed"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class ChannelProfile:
    """Power delay profile and mobility of a multipath scenario.

    Attributes:
        delays_us: Path delays in microseconds
        powers_db: Relative path powers in dB
        v_max_kmh: Maximum speed in km/h (Jakes Doppler spread)
        rayleigh: Draw complex Gaussian gains; otherwise unit-modulus gains
            with uniform phase scaled by the profile powers
        delay_model: ``fixed`` uses ``delays_us`` as given; ``uniform`` keeps
            the first delay and draws the others uniformly in
            ``(0, max(delays_us)]`` on every draw
        delay_jitter_us: Uniform +-jitter added to fixed delays, clipped at 0
    """

    delays_us: tuple[float, ...]
    powers_db: tuple[float, ...]
    v_max_kmh: float
    rayleigh: bool = True
    delay_model: DelayModel = DelayModel.FIXED
    delay_jitter_us: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "delays_us", tuple(float(d) for d in self.delays_us))
        object.__setattr__(self, "powers_db", tuple(float(p) for p in self.powers_db))
        object.__setattr__(self, "delay_model", DelayModel(self.delay_model))
        if not self.delays_us:
            raise ValueError("A channel profile needs at least one path")
        if len(self.delays_us) != len(self.powers_db):
            raise ValueError(
                f"{len(self.delays_us)} delays but {len(self.powers_db)} powers"
            )
        if min(self.delays_us) < 0:
            raise ValueError("Path delays must be non-negative")
        if self.v_max_kmh < 0:
            raise ValueError(
                f"Maximum speed must be non-negative, got {self.v_max_kmh}"
            )
        if self.delay_jitter_us < 0:
            raise ValueError("Delay jitter must be non-negative")

    @classmethod
    def vehicular(cls, v_max_kmh: float = 500.0) -> "ChannelProfile":
        """Four-path vehicular scenario used for the link-level results."""
        return cls(
            delays_us=(0.0, 2.4, 5.0, 7.0),
            powers_db=(0.0, -1.0, -5.0, -7.0),
            v_max_kmh=v_max_kmh,
        )

    @classmethod
    def uniform(
        cls, num_paths: int, max_delay_us: float = 7.0, v_max_kmh: float = 500.0
    ) -> "ChannelProfile":
        """Equal-power paths with random delays, used for detector training."""
        if num_paths < 1:
            raise ValueError(f"num_paths must be positive, got {num_paths}")
        if max_delay_us <= 0:
            raise ValueError("max_delay_us must be positive")
        return cls(
            delays_us=tuple(np.linspace(0.0, max_delay_us, num_paths)),
            powers_db=(0.0,) * num_paths,
            v_max_kmh=v_max_kmh,
            delay_model=DelayModel.UNIFORM,
        )

    @property
    def num_paths(self) -> int:
        return len(self.delays_us)

    @property
    def delay_spread_s(self) -> float:
        return max(self.delays_us) * 1e-6 + self.delay_jitter_us * 1e-6

    @property
    def normalized_powers(self) -> np.ndarray:
        powers = 10.0 ** (np.asarray(self.powers_db) / 10.0)
        return powers / powers.sum()

    def max_doppler_hz(self, f_c: float) -> float:
        """``nu_max = v_max f_c / c``."""
        return kmh_to_mps(self.v_max_kmh) * f_c / SPEED_OF_LIGHT


@dataclass(frozen=True)
class NoiseSpec:
    """White noise with ``C_w = N0 I``."""

    N0: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.N0) or self.N0 <= 0:
            raise ValueError(f"N0 must be positive, got {self.N0}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.N0)

    @classmethod
    def for_symbol_snr(cls, snr_d_db: float, E_s: float = 1.0) -> "NoiseSpec":
        """Noise level giving ``SNR_d = E_s / N0``."""
        return cls(N0=E_s / db_to_linear(snr_d_db))

    @classmethod
    def for_ebn0(
        cls, ebn0_db: float, bits_per_symbol: int, E_s: float = 1.0
    ) -> "NoiseSpec":
        return cls(N0=E_s / (bits_per_symbol * db_to_linear(ebn0_db)))


def _draw_delays_us(profile: ChannelProfile, rng: np.random.Generator) -> np.ndarray:
    delays = np.asarray(profile.delays_us)
    if profile.delay_model is DelayModel.UNIFORM and profile.num_paths > 1:
        upper = max(profile.delays_us)
        # uniform on (0, upper]
        drawn = upper - rng.uniform(0.0, upper, size=profile.num_paths - 1)
        delays = np.concatenate([delays[:1], drawn])
    if profile.delay_jitter_us > 0:
        jitter = rng.uniform(
            -profile.delay_jitter_us, profile.delay_jitter_us, size=profile.num_paths
        )
        delays = np.maximum(delays + jitter, 0.0)
    return delays


def draw_channel(
    profile: ChannelProfile,
    geometry: FrameGeometry,
    rng: SeedLike = None,
    cp_len: Optional[int] = None,
) -> PathSet:
    """Draw one channel realization.

    Gains are ``sqrt(p_i) CN(0, 1)`` renormalized to unit total power, and
    Dopplers follow the Jakes model ``nu_i = nu_max cos(theta_i)``.

    Args:
        profile: Scenario
        geometry: Frame geometry
        rng: Seed or generator
        cp_len: Optional prefix length; delays beyond it are rejected

    Returns:
        Normalized PathSet in units of the delay/Doppler resolutions
    """
    rng = as_generator(rng)
    P = profile.num_paths
    amplitudes = np.sqrt(profile.normalized_powers)

    if profile.rayleigh:
        fading = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) / math.sqrt(2)
    else:
        fading = np.exp(2j * np.pi * rng.uniform(0.0, 1.0, size=P))
    gains = amplitudes * fading

    theta = rng.uniform(0.0, 2 * np.pi, size=P)
    nu = profile.max_doppler_hz(geometry.f_c) * np.cos(theta)
    tau = _draw_delays_us(profile, rng) * 1e-6

    delays = tau / geometry.delay_resolution
    guard = geometry.M if cp_len is None else cp_len
    if np.any(delays > guard):
        raise ValueError(
            f"Path delay {delays.max():.3f} bins exceeds the guard of {guard} bins"
        )

    paths = PathSet.from_arrays(gains, delays, nu / geometry.doppler_resolution)
    return paths.normalize()


def draw_target(
    range_m: float,
    velocity_mps: float,
    geometry: FrameGeometry,
    rng: SeedLike = None,
    amplitude: float = 1.0,
) -> PathSet:
    """Single monostatic radar echo with round-trip delay and Doppler.

    The gain has modulus ``amplitude`` and uniform phase, so the radar SNR
    is ``amplitude**2 / N0``.
    """
    if range_m < 0:
        raise ValueError(f"Target range must be non-negative, got {range_m}")
    rng = as_generator(rng)
    tau = 2.0 * range_m / SPEED_OF_LIGHT
    nu = 2.0 * velocity_mps * geometry.f_c / SPEED_OF_LIGHT
    gain = amplitude * np.exp(2j * np.pi * rng.uniform(0.0, 1.0))
    return PathSet((PathParams.from_physical(gain, tau, nu, geometry),))


def apply_channel(paths: PathSet, x: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    """Noiseless DD observation ``y = H_DD x``."""
    return build_channel_operator(paths, geometry).forward(x)


def propagate(paths: PathSet, s: np.ndarray, geometry: FrameGeometry) -> np.ndarray:
    """Delay-time channel on CP-free transmit samples.

    Each path contributes ``g [F^H (F s * d(l))] * c(k)`` with the frequency
    steering vector ``d(l)[q] = exp(-j 2 pi q l / MN)`` and the temporal one
    ``c(k)[q] = exp(j 2 pi q k / MN)``.
    """
    s = np.asarray(s, dtype=complex)
    if s.shape[-1] != geometry.size:
        raise ValueError(f"Expected {geometry.size} samples, got shape {s.shape}")
    spectrum = sfft.fft(s, norm="ortho")
    r = np.zeros_like(s)
    for path in paths:
        ramp = phase_ramp(-path.delay, geometry.size)
        delayed = sfft.ifft(spectrum * ramp, norm="ortho")
        r += path.gain * delayed * phase_ramp(path.doppler, geometry.size)
    return r


def add_awgn(y: np.ndarray, spec: NoiseSpec, rng: SeedLike = None) -> np.ndarray:
    """Add circularly-symmetric complex Gaussian noise of variance N0."""
    rng = as_generator(rng)
    y = np.asarray(y, dtype=complex)
    noise = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
    return y + math.sqrt(spec.N0 / 2.0) * noise
