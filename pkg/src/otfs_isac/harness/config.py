"""TOML experiment configuration.

Every section maps to a frozen dataclass whose defaults reproduce the
vehicular link-level scenario. Unknown sections or keys and ill-typed values
are errors naming the offending ``section.key``.
"""
import logging
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

from ..core.geometry import FrameGeometry
from ..estimation.correlation import EstimatorConfig, PathSource
from ..estimation.fnn import TrainConfig
from ..link.channel import ChannelProfile, DelayModel
from ..link.equalizer import EqualizerConfig
from ..link.waveform import Constellation, PilotSpec

logger = logging.getLogger(__name__)

SWEEP_AXES = ("snr_p_db", "ebn0_db", "snr_rad_db", "N", "epsilon_scale")


class ConfigError(ValueError):
    """Invalid configuration, carrying the offending ``section.key``."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


@dataclass(frozen=True)
class FrameSection:
    M: int = 64
    N: int = 16
    delta_f: float = 15e3
    f_c: float = 5e9

    def geometry(self, N: Optional[int] = None) -> FrameGeometry:
        return FrameGeometry(self.M, self.N if N is None else N, self.delta_f, self.f_c)


@dataclass(frozen=True)
class ChannelSection:
    delays_us: tuple[float, ...] = (0.0, 2.4, 5.0, 7.0)
    powers_db: tuple[float, ...] = (0.0, -1.0, -5.0, -7.0)
    v_max_kmh: float = 500.0
    rayleigh: bool = True
    delay_model: str = "fixed"
    delay_jitter_us: float = 0.0

    def profile(self) -> ChannelProfile:
        return ChannelProfile(
            delays_us=self.delays_us,
            powers_db=self.powers_db,
            v_max_kmh=self.v_max_kmh,
            rayleigh=self.rayleigh,
            delay_model=DelayModel(self.delay_model),
            delay_jitter_us=self.delay_jitter_us,
        )


@dataclass(frozen=True)
class PilotSection:
    """Pilot placement (centered unless given) and the pilot SNR used for
    estimated CSI in BER sweeps."""

    m_p: Optional[int] = None
    n_p: Optional[int] = None
    snr_p_db: float = 15.0

    def spec(self, geometry: FrameGeometry, E_p: float) -> PilotSpec:
        centered = PilotSpec.centered(geometry, E_p)
        m_p = centered.m_p if self.m_p is None else self.m_p
        n_p = centered.n_p if self.n_p is None else self.n_p
        spec = PilotSpec(m_p=m_p, n_p=n_p, E_p=E_p)
        spec.validate(geometry)
        return spec


@dataclass(frozen=True)
class EstimatorSection:
    L_max: Optional[int] = None
    K_max: Optional[int] = None
    L_h: int = 2
    levels: tuple[int, ...] = ()
    N_l: int = 7
    N_k: int = 7
    p_source: str = "known"
    known_P: Optional[int] = None
    sc_gamma: float = 0.05
    sc_threshold_factor: float = 3.0
    sc_max_paths: Optional[int] = None
    methods: tuple[str, ...] = ("correlation", "threshold")
    model: Optional[str] = None

    @property
    def hierarchy_levels(self) -> tuple[int, ...]:
        return self.levels or (self.L_h,)

    def build(
        self,
        profile: ChannelProfile,
        geometry: FrameGeometry,
        noise_variance: float = 1.0,
        L_h: Optional[int] = None,
    ) -> EstimatorConfig:
        overrides: dict[str, Any] = {
            "L_h": self.L_h if L_h is None else L_h,
            "N_l": self.N_l,
            "N_k": self.N_k,
            "p_source": PathSource(self.p_source),
            "noise_variance": noise_variance,
            "sc_gamma": self.sc_gamma,
            "sc_threshold_factor": self.sc_threshold_factor,
            "sc_max_paths": self.sc_max_paths,
        }
        for key in ("L_max", "K_max", "known_P"):
            if getattr(self, key) is not None:
                overrides[key] = getattr(self, key)
        return EstimatorConfig.from_profile(profile, geometry, **overrides)


@dataclass(frozen=True)
class EqualizerSection:
    alpha0: float = 1.0
    beta: float = 0.05
    epsilon_scale: float = 0.5
    n_max: int = 50
    safe_step: bool = False
    detectors: tuple[str, ...] = ("imfc", "lmmse")
    csi: tuple[str, ...] = ("perfect",)
    qam_order: int = 4
    E_s: float = 1.0
    ebn0_db: float = 12.0

    def build(
        self, geometry: FrameGeometry, N0: float, epsilon_scale: Optional[float] = None
    ) -> EqualizerConfig:
        return EqualizerConfig.for_noise(
            geometry,
            N0,
            scale=self.epsilon_scale if epsilon_scale is None else epsilon_scale,
            alpha0=self.alpha0,
            beta=self.beta,
            n_max=self.n_max,
            safe_step=self.safe_step,
        )

    def constellation(self) -> Constellation:
        return Constellation.qam(self.qam_order)


@dataclass(frozen=True)
class SensingSection:
    range_m: float = 300.0
    velocity_kmh: float = 70.0
    L_max: int = 3
    K_max: int = 3
    levels: tuple[int, ...] = (1, 2, 3)
    N_l: int = 7
    N_k: int = 7
    qam_order: int = 4

    def build(self, L_h: int) -> EstimatorConfig:
        return EstimatorConfig(
            L_max=self.L_max,
            K_max=self.K_max,
            L_h=L_h,
            N_l=self.N_l,
            N_k=self.N_k,
            known_P=1,
        )


@dataclass(frozen=True)
class FnnSection:
    epochs: int = 2000
    batch_size: int = 1000
    learning_rate: float = 1e-3
    decay_factor: float = 0.9
    decay_period: int = 50
    snr_levels_db: tuple[float, ...] = (5.0, 10.0, 15.0)
    samples_per_level: int = 6000
    path_counts: tuple[int, ...] = (2, 3, 4, 5)
    max_delay_us: float = 7.0
    v_max_kmh: float = 500.0
    validation_fraction: float = 0.1
    feature_scaling: str = "pilot"
    model: str = "fnn_model.bin"
    dataset: Optional[str] = None

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            decay_factor=self.decay_factor,
            decay_period=self.decay_period,
            snr_levels_db=self.snr_levels_db,
            samples_per_level=self.samples_per_level,
            path_counts=self.path_counts,
            max_delay_us=self.max_delay_us,
            v_max_kmh=self.v_max_kmh,
            validation_fraction=self.validation_fraction,
            feature_scaling=self.feature_scaling,
            seed=seed,
        )


@dataclass(frozen=True)
class SweepSection:
    name: Optional[str] = None
    points: tuple[float, ...] = ()


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    trials: int = 100
    threads: int = 1
    out: str = "results.csv"


@dataclass(frozen=True)
class SimConfig:
    """Complete experiment description."""

    frame: FrameSection = field(default_factory=FrameSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    pilot: PilotSection = field(default_factory=PilotSection)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    equalizer: EqualizerSection = field(default_factory=EqualizerSection)
    sensing: SensingSection = field(default_factory=SensingSection)
    fnn: FnnSection = field(default_factory=FnnSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    run: RunSection = field(default_factory=RunSection)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        out: Optional[str] = None,
        trials: Optional[int] = None,
        threads: Optional[int] = None,
    ) -> "SimConfig":
        """Apply command-line overrides to ``[run]``."""
        changes = {
            key: value
            for key, value in (
                ("seed", seed), ("out", out), ("trials", trials), ("threads", threads)
            )
            if value is not None
        }
        if not changes:
            return self
        updated = replace(self, run=replace(self.run, **changes))
        validate_config(updated)
        return updated

    def geometry(self, N: Optional[int] = None) -> FrameGeometry:
        return self.frame.geometry(N)


def _coerce(value: Any, annotation: Any, key: str) -> Any:
    origin = get_origin(annotation)
    if origin is Union:
        inner = [arg for arg in get_args(annotation) if arg is not type(None)]
        return _coerce(value, inner[0], key)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(f"expected a list, got {type(value).__name__}", key)
        item_type = get_args(annotation)[0]
        return tuple(_coerce(item, item_type, key) for item in value)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected true/false, got {value!r}", key)
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    raise ConfigError(f"unsupported field type {annotation}", key)


def _build_section(section_cls: type, section: str, table: Any) -> Any:
    if not isinstance(table, dict):
        raise ConfigError("expected a table", section)
    hints = get_type_hints(section_cls)
    names = {f.name for f in fields(section_cls)}
    values = {}
    for key, value in table.items():
        full_key = f"{section}.{key}"
        if key not in names:
            raise ConfigError("unknown key", full_key)
        values[key] = _coerce(value, hints[key], full_key)
    return section_cls(**values)


def _check(condition: bool, message: str, key: str) -> None:
    if not condition:
        raise ConfigError(message, key)


def validate_config(cfg: SimConfig) -> None:
    """Range checks across sections; raises ConfigError."""
    _check(cfg.run.trials >= 1, "must be at least 1", "run.trials")
    _check(cfg.run.threads >= 1, "must be at least 1", "run.threads")
    _check(cfg.run.seed >= 0, "must be non-negative", "run.seed")
    points = cfg.sweep.points
    _check(
        all(b > a for a, b in zip(points, points[1:])),
        "points must be strictly increasing",
        "sweep.points",
    )
    if cfg.sweep.name is not None:
        _check(
            cfg.sweep.name in SWEEP_AXES, f"must be one of {SWEEP_AXES}", "sweep.name"
        )
    if cfg.sweep.name == "N":
        _check(
            all(float(p).is_integer() and p >= 1 for p in points),
            "N sweep points must be positive integers",
            "sweep.points",
        )

    checks = (
        ("frame", lambda: cfg.geometry()),
        ("channel", lambda: cfg.channel.profile()),
        ("pilot", lambda: cfg.pilot.spec(cfg.geometry(), 1.0)),
        (
            "estimator",
            lambda: cfg.estimator.build(cfg.channel.profile(), cfg.geometry()).validate(
                cfg.geometry()
            ),
        ),
        ("equalizer", lambda: cfg.equalizer.build(cfg.geometry(), 1.0)),
        ("equalizer", lambda: cfg.equalizer.constellation()),
        ("sensing", lambda: [cfg.sensing.build(h) for h in cfg.sensing.levels]),
        ("fnn", lambda: cfg.fnn.train_config(cfg.run.seed)),
    )
    for section, build in checks:
        try:
            build()
        except ConfigError:
            raise
        except (ValueError, KeyError) as e:
            raise ConfigError(str(e), section) from e

    for level in cfg.estimator.hierarchy_levels:
        _check(level >= 1, "hierarchy levels must be at least 1", "estimator.levels")
    for method in cfg.estimator.methods:
        _check(
            method in ("correlation", "threshold"),
            f"unknown method {method!r}",
            "estimator.methods",
        )
    for detector in cfg.equalizer.detectors:
        _check(
            detector in ("imfc", "lmmse"),
            f"unknown detector {detector!r}",
            "equalizer.detectors",
        )
    for csi in cfg.equalizer.csi:
        _check(
            csi in ("perfect", "correlation", "threshold"),
            f"unknown CSI source {csi!r}",
            "equalizer.csi",
        )
    if PathSource(cfg.estimator.p_source) is PathSource.FNN:
        _check(
            cfg.estimator.model is not None,
            "required when p_source is 'fnn'",
            "estimator.model",
        )
        _check(
            Path(str(cfg.estimator.model)).exists(),
            f"model file {cfg.estimator.model} does not exist",
            "estimator.model",
        )


def config_from_dict(data: dict[str, Any]) -> SimConfig:
    hints = get_type_hints(SimConfig)
    sections = {}
    for name, table in data.items():
        if name not in hints:
            raise ConfigError("unknown section", name)
        sections[name] = _build_section(hints[name], name, table)
    cfg = SimConfig(**sections)
    validate_config(cfg)
    return cfg


def parse_config(text: str) -> SimConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"TOML syntax error: {e}") from e
    return config_from_dict(data)


def load_config(path: Union[str, Path, None]) -> SimConfig:
    """Load a TOML file; ``None`` gives the default scenario."""
    if path is None:
        cfg = SimConfig()
        validate_config(cfg)
        return cfg
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    cfg = parse_config(text)
    logger.info(f"Loaded configuration {path}")
    return cfg
