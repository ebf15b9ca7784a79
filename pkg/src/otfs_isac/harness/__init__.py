"""Experiment harness: configuration, sweeps, metrics and reports."""

from .config import (
    ConfigError,
    SimConfig,
    config_from_dict,
    load_config,
    parse_config,
    validate_config,
)
from .experiments import (
    CRLB_REFERENCE,
    EXPERIMENTS,
    crlb_reference_rows,
    run_experiment,
    sweep_axis,
    train_detector,
)
from .metrics import (
    BerAccumulator,
    MeanAccumulator,
    MetricRow,
    NmseAccumulator,
    RmseAccumulator,
    nmse,
    operator_nmse,
    to_db,
)
from .reporting import CSV_HEADER, load_report, render_report, write_report
from .selftest import CheckResult, run_selftest

__all__ = [
    # Configuration
    "ConfigError",
    "SimConfig",
    "config_from_dict",
    "load_config",
    "parse_config",
    "validate_config",
    # Experiments
    "CRLB_REFERENCE",
    "EXPERIMENTS",
    "crlb_reference_rows",
    "run_experiment",
    "sweep_axis",
    "train_detector",
    # Metrics
    "BerAccumulator",
    "MeanAccumulator",
    "MetricRow",
    "NmseAccumulator",
    "RmseAccumulator",
    "nmse",
    "operator_nmse",
    "to_db",
    # Reports
    "CSV_HEADER",
    "load_report",
    "render_report",
    "write_report",
    # Self-test
    "CheckResult",
    "run_selftest",
]
