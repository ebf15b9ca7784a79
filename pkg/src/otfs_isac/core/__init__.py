"""Delay-Doppler operator algebra and shared infrastructure."""

from .geometry import (
    SPEED_OF_LIGHT,
    FrameGeometry,
    PathParams,
    PathSet,
    round_half_away,
    split_integer_fraction,
)
from .operators import (
    DENSE_SIZE_LIMIT,
    ChannelOperator,
    DdDomain,
    DdOperator,
    DenseOperator,
    OperatorSizeError,
    QMode,
    QOperator,
    TOperator,
    apply_Q,
    apply_T,
    build_channel_operator,
    channel_gram,
    cyclic_shift_matrix,
    dense_channel_matrix,
    dense_q_matrix,
    dense_t_matrix,
    frobenius_distance_squared,
    frobenius_gram,
    phase_ramp,
    squared_frobenius_norm,
)
from .rng import as_generator, trial_rng
from .safety import (
    PerformanceMonitor,
    SafeFileOperation,
    performance_monitor,
    safe_write_bytes,
    safe_write_context,
    safe_write_text,
)

__all__ = [
    # Geometry
    "SPEED_OF_LIGHT",
    "FrameGeometry",
    "PathParams",
    "PathSet",
    "round_half_away",
    "split_integer_fraction",
    # Operators
    "DENSE_SIZE_LIMIT",
    "ChannelOperator",
    "DdDomain",
    "DdOperator",
    "DenseOperator",
    "OperatorSizeError",
    "QMode",
    "QOperator",
    "TOperator",
    "apply_Q",
    "apply_T",
    "build_channel_operator",
    "channel_gram",
    "cyclic_shift_matrix",
    "dense_channel_matrix",
    "dense_q_matrix",
    "dense_t_matrix",
    "frobenius_distance_squared",
    "frobenius_gram",
    "phase_ramp",
    "squared_frobenius_norm",
    # Random streams
    "as_generator",
    "trial_rng",
    # Safety mechanisms
    "PerformanceMonitor",
    "SafeFileOperation",
    "performance_monitor",
    "safe_write_bytes",
    "safe_write_context",
    "safe_write_text",
]
