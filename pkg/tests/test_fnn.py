"""Tests for the path-count network, its training and its file formats."""
import shutil
import struct
import tempfile
from pathlib import Path

import numpy as np
import pytest
from otfs_isac.core.geometry import FrameGeometry
from otfs_isac.estimation.fnn import (
    MODEL_MAGIC,
    Dataset,
    FeatureScaling,
    FnnModel,
    PathCountDetector,
    TrainConfig,
    TrainingError,
    accuracy,
    estimate_P,
    extract_features,
    fnn_forward,
    fnn_train,
    generate_dataset,
    learning_rate_at,
    load_dataset,
    loss_and_gradients,
    predict_counts,
    save_dataset,
    split_dataset,
)


def separable_dataset(samples: int = 80, width: int = 32, seed: int = 0) -> Dataset:
    """Class 2 lights the first half of the features, class 3 the second."""
    rng = np.random.default_rng(seed)
    labels = np.where(np.arange(samples) % 2 == 0, 2, 3)
    features = 0.1 * rng.random((samples, width))
    half = width // 2
    features[labels == 2, :half] += 1.0
    features[labels == 3, half:] += 1.0
    return Dataset(features, labels, np.full(samples, 10.0))


class TestFeatures:
    def test_pilot_scaling(self) -> None:
        y = np.array([3 + 4j, -2.0])
        np.testing.assert_allclose(extract_features(y, 25.0), [1.0, 0.4])
        np.testing.assert_allclose(
            extract_features(y, 25.0, FeatureScaling.NONE), [5.0, 2.0]
        )
        with pytest.raises(ValueError):
            extract_features(y, 0.0)

    def test_parse(self) -> None:
        assert FeatureScaling.parse("pilot") is FeatureScaling.PILOT
        assert FeatureScaling.parse(0) is FeatureScaling.NONE
        with pytest.raises(KeyError):
            FeatureScaling.parse("log")


class TestModel:
    """Shapes, forward pass and the path-count rule."""

    def setup_method(self) -> None:
        self.model = FnnModel.initialize([6, 4, 3, 2], classes=(2, 3), rng=1)

    def test_default_layer_sizes(self) -> None:
        sizes = FnnModel.default_layer_sizes(FrameGeometry(64, 16), 4)
        assert sizes == [1024, 256, 128, 4]

    def test_shape_validation(self) -> None:
        with pytest.raises(ValueError):
            FnnModel([np.zeros((3, 2))], [np.zeros(3)], classes=(2, 3))
        with pytest.raises(ValueError):
            FnnModel([np.zeros((3, 2)), np.zeros((4, 2))], [np.zeros(2)] * 2, (2, 3))
        with pytest.raises(ValueError):
            FnnModel.zeros([3, 2], classes=(2, 3, 4))

    def test_forward_is_a_distribution(self) -> None:
        features = np.random.default_rng(2).random((5, 6))
        probabilities = fnn_forward(self.model, features)
        assert probabilities.shape == (5, 2)
        np.testing.assert_allclose(probabilities.sum(axis=1), 1.0)
        single = fnn_forward(self.model, features[0])
        np.testing.assert_allclose(single, probabilities[0])
        with pytest.raises(ValueError):
            fnn_forward(self.model, np.zeros(5))

    def test_gradients_match_finite_differences(self) -> None:
        rng = np.random.default_rng(3)
        features = rng.random((4, 6))
        labels = np.array([0, 1, 1, 0])
        _, grad_w, grad_b = loss_and_gradients(self.model, features, labels)
        step = 1e-6
        for layer in range(3):
            for array, grad in (
                (self.model.weights[layer], grad_w[layer]),
                (self.model.biases[layer], grad_b[layer]),
            ):
                for index in list(np.ndindex(array.shape))[:4]:
                    original = array[index]
                    array[index] = original + step
                    plus = loss_and_gradients(self.model, features, labels)[0]
                    array[index] = original - step
                    minus = loss_and_gradients(self.model, features, labels)[0]
                    array[index] = original
                    numeric = (plus - minus) / (2 * step)
                    assert grad[index] == pytest.approx(numeric, rel=1e-4, abs=1e-8)

    def test_hand_computed_micro_model(self) -> None:
        model = FnnModel(
            weights=[
                np.array([[1.0, -1.0], [0.5, 1.0]]),
                np.array([[0.5, -0.5], [2.0, 1.0]]),
            ],
            biases=[np.array([0.0, -1.0]), np.array([0.0, 0.25])],
            classes=(2, 3),
        )
        x = np.array([1.0, 2.0])
        # hidden pre-activation [2, 0], logits [1, -0.75]
        p1 = 1.0 / (1.0 + np.exp(1.75))
        np.testing.assert_allclose(fnn_forward(model, x), [1.0 - p1, p1])

        loss, grad_w, grad_b = loss_and_gradients(model, x[None, :], np.array([0]))
        assert loss == pytest.approx(np.log1p(np.exp(-1.75)))
        np.testing.assert_allclose(grad_w[1], [[-2 * p1, 2 * p1], [0.0, 0.0]])
        np.testing.assert_allclose(grad_b[1], [-p1, p1])
        np.testing.assert_allclose(grad_w[0], [[-p1, 0.0], [-2 * p1, 0.0]])
        np.testing.assert_allclose(grad_b[0], [-p1, 0.0])

    def test_uniform_output_loss(self) -> None:
        model = FnnModel.zeros([6, 4, 3, 2], classes=(2, 3))
        loss, _, _ = loss_and_gradients(model, np.ones((3, 6)), np.array([0, 1, 0]))
        assert loss == pytest.approx(np.log(2))

    def test_estimate_p(self) -> None:
        assert estimate_P(np.array([0.1, 0.6, 0.2, 0.1])) == 3
        assert estimate_P(np.array([0.1, 0.4, 0.4, 0.1])) == 3
        assert estimate_P(np.array([0.5, 0.5]), classes=(4, 2)) == 2
        with pytest.raises(ValueError):
            estimate_P(np.array([0.5, 0.5]))

    def test_detector(self) -> None:
        model = FnnModel.zeros([8, 2, 2, 4])
        model.biases[-1][:] = [0.0, 0.0, 0.0, 1.0]
        detector = PathCountDetector(model)
        y = np.ones(8, dtype=complex)
        assert detector.count_paths(y, 4.0) == 5
        np.testing.assert_allclose(detector.probabilities(y, 4.0).sum(), 1.0)


class TestModelFile:
    """Binary model format."""

    def setup_method(self) -> None:
        self.temp_dir = tempfile.mkdtemp()
        self.model = FnnModel.initialize([8, 4, 2, 3], classes=(1, 2, 3), rng=4)

    def teardown_method(self) -> None:
        shutil.rmtree(self.temp_dir)

    def test_layout(self) -> None:
        data = self.model.to_bytes()
        assert data.startswith(MODEL_MAGIC)
        version, count = struct.unpack_from("<II", data, len(MODEL_MAGIC))
        assert (version, count) == (1, 4)
        weights = 8 * 4 + 4 + 4 * 2 + 2 + 2 * 3 + 3
        header = len(MODEL_MAGIC) + 4 * (2 + 4 + 1 + 3 + 1)
        assert len(data) == header + 8 * weights

    def test_save_and_load(self) -> None:
        path = Path(self.temp_dir) / "models" / "fnn.bin"
        self.model.save(path)
        loaded = FnnModel.load(path)
        assert loaded.layer_sizes == [8, 4, 2, 3]
        assert loaded.classes == (1, 2, 3)
        assert loaded.scaling is FeatureScaling.PILOT
        for a, b in zip(loaded.weights, self.model.weights):
            np.testing.assert_array_equal(a, b)
        detector = PathCountDetector.from_file(path)
        assert detector.model.layer_sizes == [8, 4, 2, 3]

    @pytest.mark.parametrize(
        "corrupt",
        [
            lambda data: b"NOTAMODL" + data[8:],
            lambda data: data[:-3],
            lambda data: data + b"\x00",
            lambda data: data[:8] + struct.pack("<I", 2) + data[12:],
        ],
    )
    def test_corrupt_files(self, corrupt) -> None:
        with pytest.raises(ValueError):
            FnnModel.from_bytes(corrupt(self.model.to_bytes()))


class TestDataset:
    """Generation and the binary dataset cache."""

    def setup_method(self) -> None:
        self.temp_dir = tempfile.mkdtemp()
        self.geometry = FrameGeometry(4, 2)
        self.cfg = TrainConfig(
            snr_levels_db=(5.0, 10.0), samples_per_level=3, path_counts=(2, 3), seed=5
        )

    def teardown_method(self) -> None:
        shutil.rmtree(self.temp_dir)

    def test_generate(self) -> None:
        dataset = generate_dataset(self.cfg, self.geometry)
        assert len(dataset) == 6
        assert dataset.features.shape == (6, 8)
        assert set(dataset.labels.tolist()) <= {2, 3}
        np.testing.assert_array_equal(dataset.snr_db, [5, 5, 5, 10, 10, 10])
        assert np.all(dataset.features >= 0)
        assert dataset.meta["M"] == "4"
        again = generate_dataset(self.cfg, self.geometry)
        np.testing.assert_array_equal(dataset.features, again.features)

    def test_save_and_load(self) -> None:
        dataset = generate_dataset(self.cfg, self.geometry)
        stem = Path(self.temp_dir) / "train"
        bin_path, meta_path = save_dataset(dataset, stem)
        assert bin_path.suffix == ".bin"
        assert "samples = 6" in meta_path.read_text()
        loaded = load_dataset(stem)
        np.testing.assert_array_equal(loaded.features, dataset.features)
        np.testing.assert_array_equal(loaded.labels, dataset.labels)
        np.testing.assert_array_equal(loaded.snr_db, dataset.snr_db)
        assert loaded.meta["seed"] == "5"

    def test_load_rejects_bad_files(self) -> None:
        dataset = generate_dataset(self.cfg, self.geometry)
        stem = Path(self.temp_dir) / "train"
        bin_path, meta_path = save_dataset(dataset, stem)
        bin_path.write_bytes(bin_path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="bytes"):
            load_dataset(stem)
        meta_path.write_text("seed = 5\n")
        with pytest.raises(ValueError, match="samples"):
            load_dataset(stem)

    def test_dataset_shapes_checked(self) -> None:
        with pytest.raises(ValueError):
            Dataset(np.zeros((3, 2)), np.zeros(2), np.zeros(3))
        with pytest.raises(ValueError):
            Dataset(np.zeros(3), np.zeros(3), np.zeros(3))

    def test_split(self) -> None:
        dataset = separable_dataset(samples=25)
        train, validation = split_dataset(dataset, 0.1, rng=0)
        assert len(train) == 23
        assert len(validation) == 2
        whole, none = split_dataset(dataset, 0.0, rng=0)
        assert len(whole) == 25
        assert none is None


class TestTraining:
    """Mini-batch gradient descent."""

    def test_learning_rate_schedule(self) -> None:
        cfg = TrainConfig(learning_rate=0.1, decay_factor=0.5, decay_period=2)
        assert [learning_rate_at(cfg, e) for e in range(5)] == pytest.approx(
            [0.1, 0.1, 0.05, 0.05, 0.025]
        )

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"epochs": 0},
            {"learning_rate": 0.0},
            {"decay_factor": 1.5},
            {"path_counts": ()},
            {"path_counts": (0, 1)},
            {"validation_fraction": 1.0},
            {"feature_scaling": "log"},
        ],
    )
    def test_invalid_config(self, kwargs: dict) -> None:
        with pytest.raises((ValueError, KeyError)):
            TrainConfig(**kwargs)

    def test_learns_separable_classes(self) -> None:
        dataset = separable_dataset()
        cfg = TrainConfig(
            epochs=150,
            batch_size=8,
            learning_rate=0.05,
            decay_period=50,
            path_counts=(2, 3),
            validation_fraction=0.1,
        )
        model = fnn_train(dataset, cfg)
        assert model.classes == (2, 3)
        assert model.layer_sizes == [32, 8, 4, 2]
        assert len(model.history.losses) == 150
        assert len(model.history.validation_accuracy) == 150
        assert model.history.losses[-1] < model.history.losses[0]
        assert accuracy(model, dataset) >= 0.95
        assert set(predict_counts(model, dataset.features).tolist()) <= {2, 3}

    def test_memorizes_single_sample(self) -> None:
        features = np.random.default_rng(6).random((1, 8))
        dataset = Dataset(features, np.array([5]), np.array([10.0]))
        cfg = TrainConfig(
            epochs=300, batch_size=1, learning_rate=0.1, validation_fraction=0.0
        )
        start = FnnModel.initialize([8, 16, 8, 4], classes=(2, 3, 4, 5), rng=0)
        model = fnn_train(dataset, cfg, model=start)
        assert predict_counts(model, features).tolist() == [5]
        assert model.history.losses[-1] < 0.05
        assert model.history.losses[-1] < model.history.losses[0]

    def test_default_batch_size(self) -> None:
        assert TrainConfig().batch_size == 1000

    def test_training_is_reproducible(self) -> None:
        dataset = separable_dataset(samples=20)
        cfg = TrainConfig(epochs=3, batch_size=4, path_counts=(2, 3), seed=9)
        a = fnn_train(dataset, cfg)
        b = fnn_train(dataset, cfg)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_continues_from_model(self) -> None:
        dataset = separable_dataset(samples=20)
        cfg = TrainConfig(epochs=2, batch_size=4, path_counts=(2, 3))
        start = FnnModel.initialize([32, 8, 4, 2], classes=(2, 3), rng=0)
        trained = fnn_train(dataset, cfg, model=start)
        assert trained is not start
        assert len(trained.history.losses) == 2
        assert not np.array_equal(trained.weights[0], start.weights[0])

    def test_non_finite_loss(self) -> None:
        dataset = separable_dataset(samples=8)
        dataset.features[0, 0] = np.nan
        cfg = TrainConfig(
            epochs=1, batch_size=8, path_counts=(2, 3), validation_fraction=0.0
        )
        with pytest.raises(TrainingError):
            fnn_train(dataset, cfg)

    def test_rejects_unknown_labels(self) -> None:
        dataset = separable_dataset(samples=8)
        with pytest.raises(ValueError, match="not in classes"):
            fnn_train(dataset, TrainConfig(epochs=1, path_counts=(4, 5)))
        empty = Dataset(np.zeros((0, 4)), np.zeros(0), np.zeros(0))
        with pytest.raises(ValueError):
            fnn_train(empty, TrainConfig(epochs=1))
