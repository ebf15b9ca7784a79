"""Delay-Doppler (OTFS) integrated sensing and communication simulation lab."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    FrameGeometry,
    PathParams,
    PathSet,
    apply_Q,
    apply_T,
    build_channel_operator,
    performance_monitor,
)
from .estimation import (  # noqa: E402
    EstimatorConfig,
    PathCountDetector,
    estimate_channel,
    sc_estimate_P,
    sense_targets,
    threshold_estimate,
)
from .harness import SimConfig, load_config, run_experiment  # noqa: E402
from .link import (  # noqa: E402
    ChannelProfile,
    Constellation,
    EqualizerConfig,
    PilotSpec,
    apply_channel,
    draw_channel,
    imfc_equalize,
    lmmse_equalize,
)

__all__ = [
    # Operators
    "FrameGeometry",
    "PathParams",
    "PathSet",
    "apply_Q",
    "apply_T",
    "build_channel_operator",
    "performance_monitor",
    # Link
    "ChannelProfile",
    "Constellation",
    "PilotSpec",
    "apply_channel",
    "draw_channel",
    "EqualizerConfig",
    "imfc_equalize",
    "lmmse_equalize",
    # Estimation and sensing
    "EstimatorConfig",
    "PathCountDetector",
    "estimate_channel",
    "sc_estimate_P",
    "sense_targets",
    "threshold_estimate",
    # Experiments
    "SimConfig",
    "load_config",
    "run_experiment",
]
