"""In-process oracle checks behind ``otfs-isac selftest``.

Each check compares a fast path against its dense or analytic counterpart
on a small frame and reports pass/fail with a short detail string.
"""
import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from ..core.geometry import FrameGeometry, PathParams, PathSet
from ..core.operators import (
    QMode,
    apply_Q,
    apply_T,
    build_channel_operator,
    channel_gram,
    dense_channel_matrix,
    dense_q_matrix,
    dense_t_matrix,
)
from ..core.rng import trial_rng
from ..estimation.correlation import EstimatorConfig, estimate_channel
from ..estimation.fnn import FnnModel
from ..link.channel import apply_channel, propagate
from ..link.equalizer import EqualizerConfig, imfc_equalize, lmmse_equalize
from ..link.waveform import (
    Constellation,
    PilotSpec,
    add_rcp,
    demodulate,
    modulate,
    random_data_frame,
    remove_rcp,
)
from .metrics import operator_nmse

logger = logging.getLogger(__name__)

TOLERANCE = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rng() -> np.random.Generator:
    return trial_rng(0, "selftest")


def _random_vector(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b))) / scale


def check_operators_match_dense() -> tuple[bool, str]:
    geometry = FrameGeometry(6, 4)
    rng = _rng()
    v = _random_vector(geometry.size, rng)
    worst = 0.0
    for a in (0.0, 1.0, 2.37, -1.6):
        for mode in QMode:
            fast = apply_Q(a, v, geometry, mode)
            dense = dense_q_matrix(a, geometry, mode)
            worst = max(worst, _relative_error(fast, dense @ v))
    for l, k in ((0.0, 0.0), (1.0, -2.0), (2.3, 0.71), (0.5, -1.25)):
        T = dense_t_matrix(l, k, geometry)
        worst = max(worst, _relative_error(apply_T(l, k, v, geometry), T @ v))
        adjoint = apply_T(l, k, v, geometry, adjoint=True)
        worst = max(worst, _relative_error(adjoint, T.conj().T @ v))
    return worst < TOLERANCE, f"max relative error {worst:.2e}"


def check_closed_form_gram() -> tuple[bool, str]:
    geometry = FrameGeometry(5, 4)
    paths = PathSet.from_arrays(
        gains=np.ones(3), delays=[0.0, 1.4, 3.0], dopplers=[0.3, -1.0, 1.5]
    )
    closed = channel_gram(paths, paths, geometry)
    dense = [dense_t_matrix(p.delay, p.doppler, geometry) for p in paths]
    explicit = np.array([[np.trace(a.conj().T @ b) for b in dense] for a in dense])
    error = float(np.max(np.abs(closed - explicit)))
    return error < 1e-8 * geometry.size, f"max entry error {error:.2e}"


def check_waveform_chain() -> tuple[bool, str]:
    geometry = FrameGeometry(8, 4)
    rng = _rng()
    grid, _ = random_data_frame(geometry, Constellation.qam(4), rng)
    paths = PathSet.from_arrays(
        gains=[0.8, 0.6j], delays=[0.0, 2.6], dopplers=[0.4, -1.1]
    )
    s = modulate(grid)
    received = remove_rcp(add_rcp(propagate(paths, s, geometry), 3), 3)
    expected = apply_channel(paths, grid.vector, geometry)
    error = _relative_error(demodulate(received, geometry), expected)
    return error < TOLERANCE, f"relative error {error:.2e}"


def check_gray_mapping() -> tuple[bool, str]:
    constellation = Constellation.qam(16)
    points = constellation.points
    labels = np.arange(points.size)
    bits = constellation.bits_from_labels(labels).reshape(points.size, -1)
    nearest = 2.0 * float(np.min(np.abs(points.real))) + 1e-9
    violations = 0
    for i in range(points.size):
        for j in range(i + 1, points.size):
            if abs(points[i] - points[j]) <= nearest:
                violations += int(np.count_nonzero(bits[i] != bits[j]) != 1)
    energy = constellation.average_energy
    passed = violations == 0 and abs(energy - 1.0) < TOLERANCE
    detail = f"{violations} neighbour pairs off by more than one bit"
    return passed, f"{detail}, Es={energy:.6f}"


def check_noiseless_estimation() -> tuple[bool, str]:
    geometry = FrameGeometry(16, 8)
    pilot = PilotSpec.centered(geometry, 100.0)
    paths = PathSet(
        (PathParams(0.8 + 0.2j, 1.0, 1.0), PathParams(-0.3 + 0.4j, 3.0, -2.0))
    )
    y = apply_channel(paths, pilot.vector(geometry), geometry)
    cfg = EstimatorConfig(L_max=4, K_max=2, L_h=2, known_P=2)
    report = estimate_channel(y, pilot, cfg, geometry)
    value = operator_nmse(paths, report.paths, geometry)
    return value < -80.0, f"NMSE {value:.1f} dB with {report.P_hat} paths"


def check_equalizers() -> tuple[bool, str]:
    geometry = FrameGeometry(8, 4)
    rng = _rng()
    grid, _ = random_data_frame(geometry, Constellation.qam(4), rng)
    unitary = PathSet((PathParams(1.0, 2.0, 1.0),), normalized=False)
    y = apply_channel(unitary, grid.vector, geometry)
    operator = build_channel_operator(unitary, geometry)
    result = imfc_equalize(y, operator, EqualizerConfig(epsilon=1e-9, n_max=5))
    imfc_error = _relative_error(result.x_hat, grid.vector)

    paths = PathSet.from_arrays(
        gains=[0.9, 0.4j], delays=[0.0, 1.7], dopplers=[0.2, -0.8]
    )
    y = apply_channel(paths, grid.vector, geometry)
    x_hat = lmmse_equalize(y, dense_channel_matrix(paths, geometry), 1e10)
    lmmse_error = _relative_error(x_hat, grid.vector)
    passed = imfc_error < 1e-8 and result.iterations == 1 and lmmse_error < 1e-3
    detail = f"IMFC error {imfc_error:.2e} in {result.iterations} step(s)"
    return passed, f"{detail}, LMMSE {lmmse_error:.2e}"


def check_model_serialization() -> tuple[bool, str]:
    model = FnnModel.initialize([12, 6, 3, 4], rng=_rng())
    restored = FnnModel.from_bytes(model.to_bytes())
    same = (
        restored.layer_sizes == model.layer_sizes
        and restored.classes == model.classes
        and restored.scaling == model.scaling
        and all(np.array_equal(a, b) for a, b in zip(restored.weights, model.weights))
        and all(np.array_equal(a, b) for a, b in zip(restored.biases, model.biases))
    )
    return same, f"layers {model.layer_sizes}"


def check_stream_determinism() -> tuple[bool, str]:
    first = trial_rng(7, "ber", 2, 5).standard_normal(8)
    second = trial_rng(7, "ber", 2, 5).standard_normal(8)
    other = trial_rng(7, "sensing", 2, 5).standard_normal(8)
    passed = np.array_equal(first, second) and not np.array_equal(first, other)
    return passed, "same key repeats, different stream differs"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "operators-match-dense": check_operators_match_dense,
    "closed-form-gram": check_closed_form_gram,
    "waveform-chain": check_waveform_chain,
    "gray-mapping": check_gray_mapping,
    "noiseless-estimation": check_noiseless_estimation,
    "equalizers": check_equalizers,
    "model-serialization": check_model_serialization,
    "stream-determinism": check_stream_determinism,
}


def run_selftest() -> list[CheckResult]:
    """Run every check; an exception counts as a failure."""
    results = []
    for name, check in CHECKS.items():
        try:
            passed, detail = check()
        except Exception as e:
            logger.exception(f"Self-test {name} raised")
            passed, detail = False, f"{type(e).__name__}: {e}"
        level = logging.INFO if passed else logging.ERROR
        logger.log(level, f"{name}: {'ok' if passed else 'FAILED'} ({detail})")
        results.append(CheckResult(name, bool(passed), detail))
    return results
