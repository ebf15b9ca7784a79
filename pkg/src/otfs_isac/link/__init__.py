"""OTFS link: waveform, channel simulation and data detection."""

from .channel import (
    ChannelProfile,
    DelayModel,
    NoiseSpec,
    add_awgn,
    apply_channel,
    db_to_linear,
    draw_channel,
    draw_target,
    kmh_to_mps,
    linear_to_db,
    propagate,
)
from .equalizer import (
    DetectionResult,
    DivergenceError,
    EqualizationError,
    EqualizerConfig,
    ber,
    bit_errors,
    imfc_equalize,
    lmmse_equalize,
    ml_detect,
    spectral_radius,
)
from .waveform import (
    Constellation,
    DdGrid,
    PilotSpec,
    add_rcp,
    demodulate,
    make_pilot_frame,
    modulate,
    pilot_energy_for_snr,
    qam_map,
    random_data_frame,
    rcp_length,
    remove_rcp,
    snr_p_db_for_energy,
)

__all__ = [
    # Waveform
    "Constellation",
    "DdGrid",
    "PilotSpec",
    "add_rcp",
    "demodulate",
    "make_pilot_frame",
    "modulate",
    "pilot_energy_for_snr",
    "qam_map",
    "random_data_frame",
    "rcp_length",
    "remove_rcp",
    "snr_p_db_for_energy",
    # Channel
    "ChannelProfile",
    "DelayModel",
    "NoiseSpec",
    "add_awgn",
    "apply_channel",
    "db_to_linear",
    "draw_channel",
    "draw_target",
    "kmh_to_mps",
    "linear_to_db",
    "propagate",
    # Detection
    "DetectionResult",
    "DivergenceError",
    "EqualizationError",
    "EqualizerConfig",
    "ber",
    "bit_errors",
    "imfc_equalize",
    "lmmse_equalize",
    "ml_detect",
    "spectral_radius",
]
