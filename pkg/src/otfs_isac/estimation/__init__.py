"""Channel estimation, radar sensing and path-count detection."""

from .correlation import (
    EstimationReport,
    EstimatorConfig,
    PathSource,
    PathTrace,
    cancel_ipi,
    doppler_compensate,
    estimate_channel,
    estimate_gain,
    integer_dd_init,
    refine_delay,
    refine_doppler,
    sc_estimate_P,
    successive_extraction,
    window_energies,
)
from .fnn import (
    Dataset,
    FeatureScaling,
    FnnModel,
    PathCountDetector,
    TrainConfig,
    TrainingError,
    TrainingHistory,
    estimate_P,
    extract_features,
    fnn_forward,
    fnn_train,
    generate_dataset,
    learning_rate_at,
    load_dataset,
    loss_and_gradients,
    save_dataset,
)
from .sensing import (
    RadarTarget,
    SensingReport,
    correlation_grid,
    sense_targets,
    sensing_integer_init,
)
from .threshold import threshold_estimate, threshold_window

__all__ = [
    # Correlation-based estimation
    "EstimationReport",
    "EstimatorConfig",
    "PathSource",
    "PathTrace",
    "cancel_ipi",
    "doppler_compensate",
    "estimate_channel",
    "estimate_gain",
    "integer_dd_init",
    "refine_delay",
    "refine_doppler",
    "sc_estimate_P",
    "successive_extraction",
    "window_energies",
    # Baseline
    "threshold_estimate",
    "threshold_window",
    # Sensing
    "RadarTarget",
    "SensingReport",
    "correlation_grid",
    "sense_targets",
    "sensing_integer_init",
    # Path-count detector
    "Dataset",
    "FeatureScaling",
    "FnnModel",
    "PathCountDetector",
    "TrainConfig",
    "TrainingError",
    "TrainingHistory",
    "estimate_P",
    "extract_features",
    "fnn_forward",
    "fnn_train",
    "generate_dataset",
    "learning_rate_at",
    "load_dataset",
    "loss_and_gradients",
    "save_dataset",
]
