"""Feed-forward path-count detector.

A fully connected network with two ReLU hidden layers maps the magnitude of
a received pilot frame to a probability over candidate path counts. It is
trained with mini-batch gradient descent on the cross-entropy loss, with the
learning rate reduced by a constant factor every fixed number of epochs.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.special import logsumexp, softmax
from tqdm import tqdm

from ..core.geometry import FrameGeometry
from ..core.rng import SeedLike, as_generator, trial_rng
from ..core.safety import safe_write_bytes, safe_write_text
from ..link.channel import (
    ChannelProfile,
    NoiseSpec,
    add_awgn,
    apply_channel,
    draw_channel,
)
from ..link.waveform import PilotSpec, pilot_energy_for_snr

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"OTFSFNN\0"
MODEL_VERSION = 1
DEFAULT_CLASSES = (2, 3, 4, 5)


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss."""


class FeatureScaling(int, Enum):
    """Transformation applied to ``|y|`` before the network."""

    NONE = 0
    PILOT = 1

    @classmethod
    def parse(cls, value: Union[str, int, "FeatureScaling"]) -> "FeatureScaling":
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


def extract_features(
    y: np.ndarray, E_p: float, scaling: FeatureScaling = FeatureScaling.PILOT
) -> np.ndarray:
    """``|y|``, divided by ``sqrt(E_p)`` under pilot scaling."""
    features = np.abs(np.asarray(y))
    if scaling is FeatureScaling.PILOT:
        if E_p <= 0:
            raise ValueError(f"Pilot energy must be positive, got {E_p}")
        features = features / math.sqrt(E_p)
    return features


@dataclass
class TrainingHistory:
    losses: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    validation_accuracy: list[float] = field(default_factory=list)


@dataclass
class FnnModel:
    """Weights ``W[i]`` (fan_in x fan_out) and biases ``b[i]`` per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classes: tuple[int, ...] = DEFAULT_CLASSES
    scaling: FeatureScaling = FeatureScaling.PILOT
    history: TrainingHistory = field(default_factory=TrainingHistory)

    def __post_init__(self) -> None:
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        self.classes = tuple(int(c) for c in self.classes)
        self.scaling = FeatureScaling.parse(self.scaling)
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("Model needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases, strict=True)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(
                    f"Layer {i} has inconsistent shapes {w.shape}, {b.shape}"
                )
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"Layer {i} input size does not match layer {i - 1}")
        if self.layer_sizes[-1] != len(self.classes):
            raise ValueError(
                f"Output size {self.layer_sizes[-1]} does not match "
                f"{len(self.classes)} classes"
            )

    @staticmethod
    def default_layer_sizes(geometry: FrameGeometry, num_classes: int) -> list[int]:
        """``[MN, MN/4, MN/8, C]``."""
        size = geometry.size
        return [size, max(size // 4, 1), max(size // 8, 1), num_classes]

    @classmethod
    def initialize(
        cls,
        layer_sizes: list[int],
        classes: tuple[int, ...] = DEFAULT_CLASSES,
        rng: SeedLike = None,
        scaling: FeatureScaling = FeatureScaling.PILOT,
    ) -> "FnnModel":
        """Fan-in scaled Gaussian weights, zero biases."""
        rng = as_generator(rng)
        weights = [
            rng.standard_normal((fan_in, fan_out)) * math.sqrt(2.0 / fan_in)
            for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:])
        ]
        biases = [np.zeros(fan_out) for fan_out in layer_sizes[1:]]
        return cls(weights, biases, classes, scaling)

    @classmethod
    def zeros(
        cls, layer_sizes: list[int], classes: tuple[int, ...] = DEFAULT_CLASSES
    ) -> "FnnModel":
        weights = [np.zeros((a, b)) for a, b in zip(layer_sizes[:-1], layer_sizes[1:])]
        biases = [np.zeros(b) for b in layer_sizes[1:]]
        return cls(weights, biases, classes)

    @property
    def layer_sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_size(self) -> int:
        return self.weights[0].shape[0]

    def features(self, y: np.ndarray, E_p: float) -> np.ndarray:
        return extract_features(y, E_p, self.scaling)

    def copy(self) -> "FnnModel":
        return FnnModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.classes,
            self.scaling,
            self.history,
        )

    def to_bytes(self) -> bytes:
        """Serialize to the little-endian model file layout."""
        sizes = self.layer_sizes
        parts = [
            MODEL_MAGIC,
            np.array([MODEL_VERSION, len(sizes)], dtype="<u4").tobytes(),
            np.array(sizes, dtype="<u4").tobytes(),
            np.array([len(self.classes)], dtype="<u4").tobytes(),
            np.array(self.classes, dtype="<i4").tobytes(),
            np.array([int(self.scaling)], dtype="<u4").tobytes(),
        ]
        for w, b in zip(self.weights, self.biases, strict=True):
            parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FnnModel":
        reader = _Reader(data)
        if reader.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
            raise ValueError("Not a path-count model file (bad magic)")
        version, count = reader.array("<u4", 2)
        if version != MODEL_VERSION:
            raise ValueError(f"Unsupported model file version {version}")
        sizes = [int(s) for s in reader.array("<u4", int(count))]
        (num_classes,) = reader.array("<u4", 1)
        classes = tuple(int(c) for c in reader.array("<i4", int(num_classes)))
        (scaling,) = reader.array("<u4", 1)
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            flat = reader.array("<f8", fan_in * fan_out)
            weights.append(flat.reshape(fan_in, fan_out))
            biases.append(reader.array("<f8", fan_out))
        if not reader.exhausted:
            raise ValueError("Trailing bytes after model payload")
        return cls(weights, biases, classes, FeatureScaling(int(scaling)))

    def save(self, path: Union[str, Path]) -> Path:
        return safe_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FnnModel":
        model = cls.from_bytes(Path(path).read_bytes())
        logger.info(f"Loaded path-count model {path} with layers {model.layer_sizes}")
        return model


class _Reader:
    def __init__(self, data: bytes):
        self._data = data
        self._offset = 0

    def take(self, size: int) -> bytes:
        if self._offset + size > len(self._data):
            raise ValueError("Model file is truncated")
        chunk = self._data[self._offset : self._offset + size]
        self._offset += size
        return chunk

    def array(self, dtype: str, count: int) -> np.ndarray:
        item = np.dtype(dtype)
        raw = self.take(item.itemsize * count)
        return np.frombuffer(raw, dtype=item).astype(item.newbyteorder("="))

    @property
    def exhausted(self) -> bool:
        return self._offset == len(self._data)


def _check_features(model: FnnModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != model.input_size:
        raise ValueError(
            f"Feature length {features.shape[-1]} does not match model input "
            f"{model.input_size}"
        )
    return features


def _forward_pass(
    model: FnnModel, features: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    activations = [features]
    pre_activations = []
    for i, (w, b) in enumerate(zip(model.weights, model.biases, strict=True)):
        z = activations[-1] @ w + b
        pre_activations.append(z)
        if i < len(model.weights) - 1:
            activations.append(np.maximum(z, 0.0))
    return activations, pre_activations


def fnn_forward(model: FnnModel, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of them."""
    features = _check_features(model, features)
    _, pre_activations = _forward_pass(model, features)
    return softmax(pre_activations[-1], axis=-1)


def loss_and_gradients(
    model: FnnModel, features: np.ndarray, labels: np.ndarray
) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean cross-entropy over the batch and its parameter gradients.

    Args:
        model: Network
        features: Batch of shape (B, input_size)
        labels: Class indices (positions in ``model.classes``) of shape (B,)

    Returns:
        Loss, weight gradients and bias gradients
    """
    features = np.atleast_2d(_check_features(model, features))
    labels = np.asarray(labels, dtype=np.int64)
    batch = features.shape[0]
    activations, pre_activations = _forward_pass(model, features)
    logits = pre_activations[-1]
    rows = np.arange(batch)

    loss = float(np.mean(logsumexp(logits, axis=1) - logits[rows, labels]))

    delta = softmax(logits, axis=1)
    delta[rows, labels] -= 1.0
    delta /= batch

    grad_w: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    grad_b: list[np.ndarray] = [np.empty(0)] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ model.weights[i].T) * (pre_activations[i - 1] > 0)
    return loss, grad_w, grad_b


def estimate_P(p: np.ndarray, classes: tuple[int, ...] = DEFAULT_CLASSES) -> int:
    """Most probable path count; ties go to the smaller count."""
    p = np.asarray(p, dtype=float)
    if p.shape != (len(classes),):
        raise ValueError(f"Expected {len(classes)} probabilities, got {p.shape}")
    best = p.max()
    return int(min(c for c, value in zip(classes, p) if value == best))


@dataclass(frozen=True)
class TrainConfig:
    """Dataset and optimizer settings of the path-count detector.

    Attributes:
        epochs: Passes over the training split
        batch_size: Mini-batch size
        learning_rate: Initial step size
        decay_factor: Multiplicative learning-rate decay
        decay_period: Epochs between decays
        snr_levels_db: Pilot SNR levels of the dataset
        samples_per_level: Samples generated per SNR level
        path_counts: Candidate path counts, drawn uniformly per sample
        max_delay_us: Delay span of the uniform training profile
        v_max_kmh: Maximum speed of the training profile
        validation_fraction: Share of samples held out for accuracy
        feature_scaling: ``pilot`` or ``none``
        seed: Master seed for dataset, initialization and shuffling
    """

    epochs: int = 2000
    batch_size: int = 1000
    learning_rate: float = 1e-3
    decay_factor: float = 0.9
    decay_period: int = 50
    snr_levels_db: tuple[float, ...] = (5.0, 10.0, 15.0)
    samples_per_level: int = 6000
    path_counts: tuple[int, ...] = DEFAULT_CLASSES
    max_delay_us: float = 7.0
    v_max_kmh: float = 500.0
    validation_fraction: float = 0.1
    feature_scaling: str = "pilot"
    seed: int = 0

    def __post_init__(self) -> None:
        snr_levels = tuple(float(s) for s in self.snr_levels_db)
        object.__setattr__(self, "snr_levels_db", snr_levels)
        path_counts = tuple(sorted(int(p) for p in self.path_counts))
        object.__setattr__(self, "path_counts", path_counts)
        for name in ("epochs", "batch_size", "decay_period", "samples_per_level"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ValueError(
                f"learning_rate must be positive, got {self.learning_rate}"
            )
        if not 0 < self.decay_factor <= 1:
            raise ValueError(
                f"decay_factor must lie in (0, 1], got {self.decay_factor}"
            )
        if not self.snr_levels_db or not self.path_counts:
            raise ValueError("snr_levels_db and path_counts must be non-empty")
        if min(self.path_counts) < 1:
            raise ValueError("Path counts must be positive")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        FeatureScaling.parse(self.feature_scaling)


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate used during ``epoch`` (0-based)."""
    return cfg.learning_rate * cfg.decay_factor ** (epoch // cfg.decay_period)


@dataclass
class Dataset:
    """Feature matrix, path-count labels and the SNR of every sample."""

    features: np.ndarray
    labels: np.ndarray
    snr_db: np.ndarray
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("Features must be a 2-D array")
        count = self.features.shape[0]
        if self.labels.shape != (count,) or self.snr_db.shape != (count,):
            raise ValueError("Labels and SNRs must have one entry per sample")

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[index], self.labels[index], self.snr_db[index], self.meta
        )


def pilot_observation(
    geometry: FrameGeometry,
    profile: ChannelProfile,
    snr_p_db: float,
    rng: np.random.Generator,
    pilot: Optional[PilotSpec] = None,
) -> tuple[np.ndarray, PilotSpec, int]:
    """One received pilot frame at unit noise power; returns (y, pilot, P)."""
    E_p = pilot_energy_for_snr(snr_p_db, geometry)
    pilot = PilotSpec.centered(geometry, E_p) if pilot is None else pilot
    paths = draw_channel(profile, geometry, rng)
    y = apply_channel(paths, pilot.vector(geometry), geometry)
    return add_awgn(y, NoiseSpec(1.0), rng), pilot, len(paths)


def generate_dataset(
    cfg: TrainConfig, geometry: FrameGeometry, progress: bool = False
) -> Dataset:
    """Pilot-frame magnitudes through random uniform-profile channels.

    Sample ``s`` of SNR level ``j`` uses its own child stream, so the
    dataset is a pure function of ``cfg.seed``.
    """
    scaling = FeatureScaling.parse(cfg.feature_scaling)
    total = len(cfg.snr_levels_db) * cfg.samples_per_level
    features = np.empty((total, geometry.size))
    labels = np.empty(total, dtype=np.int64)
    snrs = np.empty(total)

    with tqdm(total=total, desc="dataset", disable=not progress) as bar:
        row = 0
        for level, snr_db in enumerate(cfg.snr_levels_db):
            for sample in range(cfg.samples_per_level):
                rng = trial_rng(cfg.seed, "fnn-dataset", level, sample)
                P = int(rng.choice(cfg.path_counts))
                profile = ChannelProfile.uniform(P, cfg.max_delay_us, cfg.v_max_kmh)
                y, pilot, _ = pilot_observation(geometry, profile, snr_db, rng)
                features[row] = extract_features(y, pilot.E_p, scaling)
                labels[row] = P
                snrs[row] = snr_db
                row += 1
                bar.update()

    meta = {
        "samples": str(total),
        "features": str(geometry.size),
        "snr_levels_db": ",".join(f"{s:g}" for s in cfg.snr_levels_db),
        "path_counts": ",".join(str(p) for p in cfg.path_counts),
        "feature_scaling": scaling.name.lower(),
        "seed": str(cfg.seed),
        "M": str(geometry.M),
        "N": str(geometry.N),
        "delta_f": f"{geometry.delta_f:g}",
        "f_c": f"{geometry.f_c:g}",
    }
    logger.info(f"Generated {total} samples at SNR_p {cfg.snr_levels_db} dB")
    return Dataset(features, labels, snrs, meta)


def save_dataset(dataset: Dataset, stem: Union[str, Path]) -> tuple[Path, Path]:
    """Write ``<stem>.bin`` and its ``<stem>.meta`` key = value sidecar."""
    stem = Path(stem)
    payload = b"".join(
        [
            np.ascontiguousarray(dataset.features, dtype="<f8").tobytes(),
            np.ascontiguousarray(dataset.labels, dtype="<i8").tobytes(),
            np.ascontiguousarray(dataset.snr_db, dtype="<f8").tobytes(),
        ]
    )
    meta = dict(dataset.meta)
    meta["samples"] = str(len(dataset))
    meta["features"] = str(dataset.features.shape[1])
    sidecar = "".join(f"{key} = {value}\n" for key, value in meta.items())
    bin_path = safe_write_bytes(stem.with_suffix(".bin"), payload)
    meta_path = safe_write_text(stem.with_suffix(".meta"), sidecar)
    return bin_path, meta_path


def load_dataset(stem: Union[str, Path]) -> Dataset:
    stem = Path(stem)
    meta: dict[str, str] = {}
    for line in stem.with_suffix(".meta").read_text(encoding="utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    try:
        samples = int(meta["samples"])
        width = int(meta["features"])
    except (KeyError, ValueError) as e:
        raise ValueError(f"Dataset sidecar {stem}.meta lacks samples/features") from e

    raw = stem.with_suffix(".bin").read_bytes()
    expected = samples * (width * 8 + 8 + 8)
    if len(raw) != expected:
        raise ValueError(f"Dataset payload has {len(raw)} bytes, expected {expected}")
    split = samples * width * 8
    features = np.frombuffer(raw[:split], dtype="<f8").reshape(samples, width)
    labels = np.frombuffer(raw[split : split + samples * 8], dtype="<i8")
    snrs = np.frombuffer(raw[split + samples * 8 :], dtype="<f8")
    return Dataset(features.copy(), labels.copy(), snrs.copy(), meta)


def split_dataset(
    dataset: Dataset, fraction: float, rng: SeedLike = None
) -> tuple[Dataset, Optional[Dataset]]:
    """Shuffle and hold out ``floor(fraction * len)`` samples for validation."""
    rng = as_generator(rng)
    order = rng.permutation(len(dataset))
    holdout = int(math.floor(fraction * len(dataset)))
    if holdout == 0:
        return dataset.subset(order), None
    return dataset.subset(order[holdout:]), dataset.subset(order[:holdout])


def accuracy(model: FnnModel, dataset: Dataset) -> float:
    predictions = predict_counts(model, dataset.features)
    return float(np.mean(predictions == dataset.labels))


def predict_counts(model: FnnModel, features: np.ndarray) -> np.ndarray:
    probabilities = np.atleast_2d(fnn_forward(model, features))
    counts = [estimate_P(p, model.classes) for p in probabilities]
    return np.array(counts, dtype=np.int64)


def fnn_train(
    dataset: Dataset,
    cfg: TrainConfig,
    model: Optional[FnnModel] = None,
    progress: bool = False,
) -> FnnModel:
    """Train the detector with mini-batch gradient descent.

    Args:
        dataset: Labeled features
        cfg: Training settings
        model: Starting model (fresh fan-in Gaussian init if None)
        progress: Show a progress bar over epochs

    Returns:
        The trained model with its training history

    Raises:
        TrainingError: If the loss becomes NaN or infinite
    """
    if len(dataset) == 0:
        raise ValueError("Cannot train on an empty dataset")
    classes = tuple(cfg.path_counts)
    class_index = {c: i for i, c in enumerate(classes)}
    unknown = set(np.unique(dataset.labels).tolist()) - set(classes)
    if unknown:
        raise ValueError(f"Labels {sorted(unknown)} are not in classes {classes}")

    rng = trial_rng(cfg.seed, "fnn-training")
    if model is None:
        sizes = [dataset.features.shape[1]]
        sizes += [max(sizes[0] // 4, 1), max(sizes[0] // 8, 1), len(classes)]
        model = FnnModel.initialize(
            sizes, classes, rng, FeatureScaling.parse(cfg.feature_scaling)
        )
    else:
        model = model.copy()
        model.history = TrainingHistory()

    train, validation = split_dataset(dataset, cfg.validation_fraction, rng)
    targets = np.array([class_index[int(c)] for c in train.labels], dtype=np.int64)

    for epoch in tqdm(range(cfg.epochs), desc="training", disable=not progress):
        lr = learning_rate_at(cfg, epoch)
        order = rng.permutation(len(train))
        total, seen = 0.0, 0
        for start in range(0, len(train), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            loss, grad_w, grad_b = loss_and_gradients(
                model, train.features[batch], targets[batch]
            )
            if not math.isfinite(loss):
                batch_index = start // cfg.batch_size
                logger.error(f"Non-finite loss at epoch {epoch}, batch {batch_index}")
                raise TrainingError(
                    f"Loss became {loss} at epoch {epoch}, "
                    f"batch {batch_index} (learning rate {lr:g})"
                )
            for i in range(len(model.weights)):
                model.weights[i] -= lr * grad_w[i]
                model.biases[i] -= lr * grad_b[i]
            total += loss * batch.size
            seen += batch.size

        model.history.losses.append(total / seen)
        model.history.learning_rates.append(lr)
        if validation is not None:
            model.history.validation_accuracy.append(accuracy(model, validation))
        if (epoch + 1) % cfg.decay_period == 0 or epoch + 1 == cfg.epochs:
            logger.info(
                f"Epoch {epoch + 1}/{cfg.epochs}: loss {total / seen:.4f}, lr {lr:.3g}"
            )
    return model


class PathCountDetector:
    """Estimates the number of paths in a received pilot frame."""

    def __init__(self, model: FnnModel):
        self.model = model

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "PathCountDetector":
        return cls(FnnModel.load(path))

    def probabilities(self, y: np.ndarray, E_p: float) -> np.ndarray:
        return fnn_forward(self.model, self.model.features(y, E_p))

    def count_paths(self, y: np.ndarray, E_p: float) -> int:
        return estimate_P(self.probabilities(y, E_p), self.model.classes)
