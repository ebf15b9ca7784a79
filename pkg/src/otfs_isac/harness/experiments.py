"""Monte Carlo sweeps.

Every trial draws from its own child stream ``(seed, stream, point, trial)``
so results do not depend on the number of workers. Trials fan out to a
process pool and are reduced in trial-index order.
"""
import logging
import math
from collections.abc import Callable, Iterator
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from functools import partial
from pathlib import Path
from typing import Any, Optional

import numpy as np
from tqdm import tqdm

from ..core.geometry import FrameGeometry, PathSet
from ..core.operators import build_channel_operator, dense_channel_matrix
from ..core.rng import trial_rng
from ..core.safety import performance_monitor
from ..estimation.correlation import PathSource, estimate_channel, sc_estimate_P
from ..estimation.fnn import (
    FnnModel,
    PathCountDetector,
    fnn_train,
    generate_dataset,
    load_dataset,
    pilot_observation,
    save_dataset,
)
from ..estimation.sensing import sense_targets
from ..estimation.threshold import threshold_estimate
from ..link.channel import (
    ChannelProfile,
    NoiseSpec,
    add_awgn,
    apply_channel,
    db_to_linear,
    draw_channel,
    draw_target,
    kmh_to_mps,
)
from ..link.equalizer import DivergenceError, imfc_equalize, lmmse_equalize, ml_detect
from ..link.waveform import (
    Constellation,
    PilotSpec,
    pilot_energy_for_snr,
    random_data_frame,
)
from .config import ConfigError, SimConfig
from .metrics import (
    BerAccumulator,
    MeanAccumulator,
    MetricRow,
    NmseAccumulator,
    RmseAccumulator,
    operator_nmse,
)

logger = logging.getLogger(__name__)

# Reference CRLB values for the single-target scenario (M = N = 32), keyed by
# SNR_rad in dB: (range in m, velocity in m/s). Emitted as fixed reference
# rows, not computed.
CRLB_REFERENCE = {
    -20.0: (20.3098327796734, 0.914278165245258),
    -15.0: (11.3877838586348, 0.514288836353744),
    -10.0: (6.40278866554551, 0.288686650397794),
    -5.0: (3.63674856166898, 0.162756021280667),
    0.0: (2.03565073990067, 0.0916496608676246),
    5.0: (1.14644942341252, 0.0515558960163395),
    10.0: (0.642741110556078, 0.0288712360318711),
    15.0: (0.362448006332245, 0.0162747944520075),
    20.0: (0.204338722886295, 0.00916766949039323),
}

EXPERIMENTS = ("chest-sweep", "ber-sweep", "sensing-sweep", "detect-eval", "fnn-eval")

SWEEP_DEFAULTS: dict[str, tuple[tuple[str, ...], tuple[float, ...]]] = {
    "chest-sweep": (("snr_p_db", "N"), tuple(np.arange(0.0, 20.1, 2.5))),
    "ber-sweep": (("ebn0_db", "epsilon_scale"), tuple(np.arange(0.0, 14.1, 2.0))),
    "sensing-sweep": (("snr_rad_db",), tuple(np.arange(-20.0, 20.1, 5.0))),
    "detect-eval": (("snr_p_db",), (0.0, 5.0, 10.0, 15.0, 20.0)),
    "fnn-eval": (("snr_p_db",), (0.0, 5.0, 10.0, 15.0, 20.0)),
}

ACCUMULATORS = {
    "mean": MeanAccumulator,
    "nmse": NmseAccumulator,
    "rmse": RmseAccumulator,
    "ber": BerAccumulator,
}

Sample = tuple[str, str, Any]


def _pilot_frame(
    cfg: SimConfig,
    geometry: FrameGeometry,
    paths: PathSet,
    snr_p_db: float,
    N0: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, PilotSpec]:
    pilot = cfg.pilot.spec(geometry, pilot_energy_for_snr(snr_p_db, geometry, N0))
    y = apply_channel(paths, pilot.vector(geometry), geometry)
    return add_awgn(y, NoiseSpec(N0), rng), pilot


def chest_trial(
    cfg: SimConfig,
    axis: str,
    point: int,
    value: float,
    model: Optional[FnnModel],
    trial: int,
) -> list[Sample]:
    """Channel-estimation NMSE of every configured method on one draw."""
    geometry = cfg.geometry(int(value) if axis == "N" else None)
    snr_p_db = value if axis == "snr_p_db" else cfg.pilot.snr_p_db
    rng = trial_rng(cfg.run.seed, "channel-estimation", point, trial)
    profile = cfg.channel.profile()
    paths = draw_channel(profile, geometry, rng)
    y, pilot = _pilot_frame(cfg, geometry, paths, snr_p_db, 1.0, rng)
    detector = PathCountDetector(model) if model is not None else None

    samples: list[Sample] = []
    for method in cfg.estimator.methods:
        if method == "threshold":
            est_cfg = cfg.estimator.build(profile, geometry)
            report = threshold_estimate(y, pilot, est_cfg, geometry)
            ratio = operator_nmse(paths, report.paths, geometry, db=False)
            samples.append(("nmse_db_threshold", "nmse", ratio))
            continue
        for L_h in cfg.estimator.hierarchy_levels:
            est_cfg = cfg.estimator.build(profile, geometry, L_h=L_h)
            report = estimate_channel(y, pilot, est_cfg, geometry, detector)
            ratio = operator_nmse(paths, report.paths, geometry, db=False)
            samples.append((f"nmse_db_correlation_Lh{L_h}", "nmse", ratio))
            if est_cfg.p_source is not PathSource.KNOWN:
                samples.append((f"mean_p_hat_Lh{L_h}", "mean", report.P_hat))
    return samples


def _estimate_csi(
    cfg: SimConfig,
    csi: str,
    geometry: FrameGeometry,
    profile: ChannelProfile,
    paths: PathSet,
    N0: float,
    rng: np.random.Generator,
    detector: Optional[PathCountDetector],
) -> PathSet:
    if csi == "perfect":
        return paths
    y_p, pilot = _pilot_frame(cfg, geometry, paths, cfg.pilot.snr_p_db, N0, rng)
    est_cfg = cfg.estimator.build(
        profile, geometry, noise_variance=N0, L_h=max(cfg.estimator.hierarchy_levels)
    )
    if csi == "threshold":
        return threshold_estimate(y_p, pilot, est_cfg, geometry).paths
    return estimate_channel(y_p, pilot, est_cfg, geometry, detector).paths


def ber_trial(
    cfg: SimConfig,
    axis: str,
    point: int,
    value: float,
    model: Optional[FnnModel],
    trial: int,
) -> list[Sample]:
    """Bit errors of every (detector, CSI) pair on one data frame."""
    geometry = cfg.geometry()
    eq = cfg.equalizer
    ebn0_db = eq.ebn0_db if axis == "epsilon_scale" else value
    scale = value if axis == "epsilon_scale" else None
    constellation = eq.constellation()
    N0 = NoiseSpec.for_ebn0(ebn0_db, constellation.bits_per_symbol, eq.E_s).N0

    rng = trial_rng(cfg.run.seed, "ber", point, trial)
    profile = cfg.channel.profile()
    paths = draw_channel(profile, geometry, rng)
    grid, bits = random_data_frame(geometry, constellation, rng, eq.E_s)
    y = add_awgn(apply_channel(paths, grid.vector, geometry), NoiseSpec(N0), rng)
    detector = PathCountDetector(model) if model is not None else None
    eq_cfg = eq.build(geometry, N0, scale)

    samples: list[Sample] = []
    for csi in eq.csi:
        estimate = _estimate_csi(cfg, csi, geometry, profile, paths, N0, rng, detector)
        for name in eq.detectors:
            x_hat = np.zeros(geometry.size, dtype=complex)
            if len(estimate) and name == "imfc":
                operator = build_channel_operator(estimate, geometry)
                try:
                    result = imfc_equalize(y, operator, eq_cfg)
                    fallback = 0
                except DivergenceError:
                    logger.warning(
                        f"IMFC diverged ({csi} CSI), retrying with safe step"
                    )
                    result = imfc_equalize(y, operator, replace(eq_cfg, safe_step=True))
                    fallback = 1
                x_hat = result.x_hat
                samples.append((f"iterations_{csi}", "mean", result.iterations))
                samples.append((f"imfc_safe_fallback_{csi}", "mean", fallback))
            elif len(estimate):
                H = dense_channel_matrix(estimate, geometry)
                x_hat = lmmse_equalize(y, H, eq.E_s / N0)
            _, bits_rx = ml_detect(x_hat / math.sqrt(eq.E_s), constellation)
            errors = int(np.count_nonzero(bits_rx != bits))
            samples.append((f"ber_{name}_{csi}", "ber", (errors, bits.size)))
    return samples


def sensing_trial(
    cfg: SimConfig,
    axis: str,
    point: int,
    value: float,
    model: Optional[FnnModel],
    trial: int,
) -> list[Sample]:
    """Range and velocity squared errors for one echo at SNR_rad = value."""
    geometry = cfg.geometry()
    sensing = cfg.sensing
    N0 = 1.0 / db_to_linear(value)
    rng = trial_rng(cfg.run.seed, "sensing", point, trial)
    velocity = kmh_to_mps(sensing.velocity_kmh)
    target = draw_target(sensing.range_m, velocity, geometry, rng)
    grid, _ = random_data_frame(geometry, Constellation.qam(sensing.qam_order), rng)
    x = grid.vector
    y = add_awgn(apply_channel(target, x, geometry), NoiseSpec(N0), rng)

    samples: list[Sample] = []
    for L_h in sensing.levels:
        report = sense_targets(y, x, sensing.build(L_h), geometry, num_targets=1)
        estimate = report.targets[0]
        samples.append(
            (f"range_rmse_m_Lh{L_h}", "rmse", (estimate.range_m - sensing.range_m) ** 2)
        )
        samples.append(
            (
                f"velocity_rmse_mps_Lh{L_h}",
                "rmse",
                (estimate.velocity_mps - velocity) ** 2,
            )
        )
    return samples


def detect_trial(
    cfg: SimConfig,
    axis: str,
    point: int,
    value: float,
    model: Optional[FnnModel],
    trial: int,
) -> list[Sample]:
    """Path-count estimates of the stopping criterion and, if loaded, the FNN."""
    geometry = cfg.geometry()
    rng = trial_rng(cfg.run.seed, "path-detection", point, trial)
    profile = cfg.channel.profile()
    paths = draw_channel(profile, geometry, rng)
    y, pilot = _pilot_frame(cfg, geometry, paths, value, 1.0, rng)
    true_count = len(paths)

    est_cfg = cfg.estimator.build(profile, geometry)
    estimates = {"sc": sc_estimate_P(y, pilot, est_cfg, geometry)}
    if model is not None:
        estimates["fnn"] = PathCountDetector(model).count_paths(y, pilot.E_p)

    samples: list[Sample] = []
    for method, count in estimates.items():
        samples.append((f"mean_p_hat_{method}", "mean", count))
        samples.append((f"rmse_p_hat_{method}", "rmse", (count - true_count) ** 2))
    return samples


def fnn_eval_trial(
    cfg: SimConfig,
    axis: str,
    point: int,
    value: float,
    model: Optional[FnnModel],
    trial: int,
) -> list[Sample]:
    """Detector accuracy on a fresh uniform-profile pilot frame."""
    if model is None:
        raise ValueError("fnn-eval needs a trained model")
    geometry = cfg.geometry()
    rng = trial_rng(cfg.run.seed, "path-detection", point, trial)
    true_count = int(rng.choice(model.classes))
    fnn = cfg.fnn
    profile = ChannelProfile.uniform(true_count, fnn.max_delay_us, fnn.v_max_kmh)
    y, pilot, _ = pilot_observation(geometry, profile, value, rng)
    count = PathCountDetector(model).count_paths(y, pilot.E_p)
    return [
        ("accuracy", "mean", float(count == true_count)),
        ("mean_p_hat", "mean", count),
        ("mean_p_true", "mean", true_count),
    ]


TRIALS: dict[str, Callable[..., list[Sample]]] = {
    "chest-sweep": chest_trial,
    "ber-sweep": ber_trial,
    "sensing-sweep": sensing_trial,
    "detect-eval": detect_trial,
    "fnn-eval": fnn_eval_trial,
}


def sweep_axis(kind: str, cfg: SimConfig) -> tuple[str, tuple[float, ...]]:
    """Resolve the sweep axis and points of ``kind`` (config or defaults)."""
    axes, default_points = SWEEP_DEFAULTS[kind]
    name = cfg.sweep.name or axes[0]
    if name not in axes:
        raise ConfigError(f"{kind} sweeps one of {axes}, not {name!r}", "sweep.name")
    points = cfg.sweep.points
    if not points:
        if name != axes[0]:
            raise ConfigError(f"points are required for a {name} sweep", "sweep.points")
        points = tuple(float(p) for p in default_points)
    return name, points


@contextmanager
def _trial_mapper(threads: int) -> Iterator[Callable[..., Any]]:
    if threads <= 1:
        yield map
        return
    with ProcessPoolExecutor(max_workers=threads) as executor:
        yield executor.map


def _reduce(
    axis: str, value: float, results: list[list[Sample]]
) -> list[MetricRow]:
    accumulators: dict[str, Any] = {}
    for samples in results:
        for metric, kind, sample in samples:
            if metric not in accumulators:
                accumulators[metric] = ACCUMULATORS[kind]()
            if kind == "ber":
                accumulators[metric].add(*sample)
            else:
                accumulators[metric].add(sample)
    return [acc.row(axis, value, metric) for metric, acc in accumulators.items()]


def _model_for(kind: str, cfg: SimConfig) -> Optional[FnnModel]:
    path: Optional[str] = None
    if kind == "fnn-eval":
        path = cfg.fnn.model
    elif kind == "detect-eval":
        fallback = cfg.fnn.model if Path(cfg.fnn.model).exists() else None
        path = cfg.estimator.model or fallback
    elif PathSource(cfg.estimator.p_source) is PathSource.FNN:
        path = cfg.estimator.model
    if path is None:
        return None
    if not Path(path).exists():
        raise ConfigError(f"model file {path} does not exist", "fnn.model")
    return FnnModel.load(path)


def run_experiment(
    kind: str, cfg: SimConfig, progress: bool = False
) -> list[MetricRow]:
    """Run one sweep and return its metric rows (sweep point order).

    Args:
        kind: One of ``EXPERIMENTS``
        cfg: Experiment configuration
        progress: Show a progress bar

    Returns:
        One row per sweep point and metric, followed by reference rows for
        the sensing sweep
    """
    if kind not in TRIALS:
        raise ValueError(f"Unknown experiment {kind!r}, expected one of {EXPERIMENTS}")
    axis, points = sweep_axis(kind, cfg)
    model = _model_for(kind, cfg)
    performance_monitor.reset()
    trials = cfg.run.trials
    logger.info(
        f"Running {kind} over {axis}={list(points)} with {trials} trials per point "
        f"on {cfg.run.threads} worker(s), seed {cfg.run.seed}"
    )

    rows: list[MetricRow] = []
    chunksize = max(1, trials // (4 * cfg.run.threads))
    with _trial_mapper(cfg.run.threads) as mapper, tqdm(
        total=len(points) * trials, desc=kind, disable=not progress
    ) as bar:
        for point, value in enumerate(points):
            trial_fn = partial(TRIALS[kind], cfg, axis, point, float(value), model)
            with performance_monitor.measure_operation(f"{kind}.point"):
                kwargs = {} if mapper is map else {"chunksize": chunksize}
                results = []
                for samples in mapper(trial_fn, range(trials), **kwargs):
                    results.append(samples)
                    bar.update()
            rows.extend(_reduce(axis, float(value), results))

    if kind == "sensing-sweep":
        rows.extend(crlb_reference_rows())
    performance_monitor.log_summary()
    return rows


def crlb_reference_rows() -> list[MetricRow]:
    rows = []
    for snr_db, (range_m, velocity_mps) in CRLB_REFERENCE.items():
        rows.append(
            MetricRow("snr_rad_db", snr_db, "reference_crlb_range_m", range_m, 0.0, 0)
        )
        rows.append(
            MetricRow(
                "snr_rad_db",
                snr_db,
                "reference_crlb_velocity_mps",
                velocity_mps,
                0.0,
                0,
            )
        )
    return rows


def train_detector(
    cfg: SimConfig, progress: bool = False
) -> tuple[FnnModel, list[MetricRow]]:
    """Generate (or load the cached) dataset, train and save the detector.

    Returns:
        The trained model and its per-epoch history as metric rows
    """
    geometry = cfg.geometry()
    train_cfg = cfg.fnn.train_config(cfg.run.seed)
    performance_monitor.reset()

    dataset = None
    if cfg.fnn.dataset is not None:
        stem = Path(cfg.fnn.dataset)
        if stem.with_suffix(".bin").exists() and stem.with_suffix(".meta").exists():
            dataset = load_dataset(stem)
            if dataset.features.shape[1] != geometry.size:
                raise ConfigError(
                    f"cached dataset {stem} has {dataset.features.shape[1]} features, "
                    f"frame needs {geometry.size}",
                    "fnn.dataset",
                )
            logger.info(f"Using cached dataset {stem} ({len(dataset)} samples)")
    if dataset is None:
        with performance_monitor.measure_operation("fnn.dataset"):
            dataset = generate_dataset(train_cfg, geometry, progress)
        if cfg.fnn.dataset is not None:
            save_dataset(dataset, cfg.fnn.dataset)

    with performance_monitor.measure_operation("fnn.training"):
        model = fnn_train(dataset, train_cfg, progress=progress)
    model.save(cfg.fnn.model)
    logger.info(f"Saved path-count model to {cfg.fnn.model}")

    rows: list[MetricRow] = []
    history = model.history
    for epoch, (loss, lr) in enumerate(zip(history.losses, history.learning_rates), 1):
        rows.append(MetricRow("epoch", float(epoch), "loss", loss, 0.0, 1))
        rows.append(MetricRow("epoch", float(epoch), "learning_rate", lr, 0.0, 1))
        if history.validation_accuracy:
            accuracy = history.validation_accuracy[epoch - 1]
            rows.append(
                MetricRow(
                    "epoch", float(epoch), "validation_accuracy", accuracy, 0.0, 1
                )
            )
    performance_monitor.log_summary()
    return model, rows
