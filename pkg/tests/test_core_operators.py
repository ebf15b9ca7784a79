"""Tests for the delay-Doppler operator algebra against dense oracles."""
from typing import Any

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from otfs_isac.core.geometry import FrameGeometry, PathParams, PathSet
from otfs_isac.core.operators import (
    ChannelOperator,
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
    dense_building_blocks,
    dense_channel_matrix,
    dense_q_matrix,
    dense_t_matrix,
    frobenius_distance_squared,
    squared_frobenius_norm,
)
from otfs_isac.core.safety import PerformanceMonitor

GEOMETRIES = [(4, 4), (8, 4), (16, 8)]

parameters = st.floats(min_value=-6.0, max_value=6.0, allow_nan=False)
delays = st.floats(min_value=0.0, max_value=6.0, allow_nan=False)


def random_vector(size: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(size) + 1j * rng.standard_normal(size)


def random_paths(rng: np.random.Generator, count: int = 3) -> PathSet:
    gains = rng.standard_normal(count) + 1j * rng.standard_normal(count)
    return PathSet.from_arrays(
        gains, rng.uniform(0, 5, count), rng.uniform(-3, 3, count)
    ).normalize()


class TestDenseBuildingBlocks:
    """Unitarity of the explicit DFT matrices and of Q(a)."""

    @pytest.mark.parametrize("M,N", GEOMETRIES)
    def test_building_blocks_are_unitary(self, M: int, N: int) -> None:
        geometry = FrameGeometry(M, N)
        slot, frame = dense_building_blocks(geometry)
        identity = np.eye(geometry.size)
        np.testing.assert_allclose(slot @ slot.conj().T, identity, atol=1e-12)
        np.testing.assert_allclose(frame @ frame.conj().T, identity, atol=1e-12)

    @pytest.mark.parametrize("M,N", GEOMETRIES)
    @pytest.mark.parametrize("a", [0.0, 1.0, 2.5, -3.3])
    def test_q_is_unitary(self, M: int, N: int, a: float) -> None:
        geometry = FrameGeometry(M, N)
        q = dense_q_matrix(a, geometry)
        np.testing.assert_allclose(q @ q.conj().T, np.eye(geometry.size), atol=1e-10)

    def test_integer_delay_time_is_cyclic_shift(self) -> None:
        """With k = 0 and integer l the delay-time matrix is Pi^l."""
        geometry = FrameGeometry(4, 4)
        paths = PathSet((PathParams(1.0, 3.0, 0.0),))
        delay_time = dense_channel_matrix(paths, geometry, domain="delay-time")
        np.testing.assert_allclose(
            delay_time, cyclic_shift_matrix(3, geometry.size), atol=1e-12
        )

    def test_size_guard(self) -> None:
        geometry = FrameGeometry(128, 128)
        with pytest.raises(OperatorSizeError):
            dense_q_matrix(1.0, geometry)
        with pytest.raises(OperatorSizeError):
            TOperator(1.0, 1.0, geometry).to_dense()


class TestFastOperators:
    """FFT fast paths match the dense oracles."""

    def setup_method(self) -> None:
        self.rng = np.random.default_rng(1234)

    @pytest.mark.parametrize("M,N", GEOMETRIES)
    @pytest.mark.parametrize("mode", list(QMode))
    def test_apply_q_matches_dense(self, M: int, N: int, mode: QMode) -> None:
        geometry = FrameGeometry(M, N)
        v = random_vector(geometry.size, self.rng)
        for a in (0.0, 1.0, -2.0, 0.37, 3.81):
            expected = dense_q_matrix(a, geometry, mode) @ v
            actual = apply_Q(a, v, geometry, mode)
            np.testing.assert_allclose(actual, expected, atol=1e-10)

    @pytest.mark.parametrize("M,N", GEOMETRIES)
    def test_apply_t_matches_dense(self, M: int, N: int) -> None:
        geometry = FrameGeometry(M, N)
        v = random_vector(geometry.size, self.rng)
        for l, k in ((0.0, 0.0), (2.0, -1.0), (1.42, 0.61), (3.5, -2.25)):
            T = dense_t_matrix(l, k, geometry)
            np.testing.assert_allclose(apply_T(l, k, v, geometry), T @ v, atol=1e-10)
            np.testing.assert_allclose(
                apply_T(l, k, v, geometry, adjoint=True), T.conj().T @ v, atol=1e-10
            )

    def test_t_factorizes_into_q_operators(self) -> None:
        """T(l, k) = Q(k) Q^*(l)."""
        geometry = FrameGeometry(8, 4)
        v = random_vector(geometry.size, self.rng)
        for l, k in ((1.0, 2.0), (2.7, -0.4)):
            composed = apply_Q(k, apply_Q(l, v, geometry, QMode.CONJUGATE), geometry)
            np.testing.assert_allclose(apply_T(l, k, v, geometry), composed, atol=1e-10)

    def test_batched_parameters(self) -> None:
        geometry = FrameGeometry(8, 4)
        v = random_vector(geometry.size, self.rng)
        a = np.array([0.0, 0.5, 1.25, -2.0])
        batch = apply_Q(a, v, geometry, QMode.ADJOINT)
        assert batch.shape == (a.size, geometry.size)
        for row, value in zip(batch, a):
            np.testing.assert_allclose(row, apply_Q(value, v, geometry, QMode.ADJOINT))

        l = np.array([0.0, 1.5, 3.0])
        k = np.array([1.0, -0.5, 2.0])
        batch = apply_T(l, k, v, geometry)
        assert batch.shape == (3, geometry.size)
        expected = apply_T(1.5, -0.5, v, geometry)
        np.testing.assert_allclose(batch[1], expected, atol=1e-12)

    def test_rejects_bad_inputs(self) -> None:
        geometry = FrameGeometry(4, 4)
        with pytest.raises(ValueError):
            apply_Q(1.0, np.ones(15), geometry)
        with pytest.raises(ValueError):
            apply_Q(np.nan, np.ones(16), geometry)
        with pytest.raises(ValueError):
            apply_T(np.ones((2, 2)), 0.0, np.ones(16), geometry)

    @settings(max_examples=30, deadline=None)
    @given(l=delays, k=parameters, seed=st.integers(0, 2**32 - 1))
    def test_adjoint_identity(self, l: float, k: float, seed: int) -> None:
        """<T x, y> = <x, T^H y> for any fractional (l, k)."""
        geometry = FrameGeometry(8, 4)
        rng = np.random.default_rng(seed)
        x = random_vector(geometry.size, rng)
        y = random_vector(geometry.size, rng)
        lhs = np.vdot(y, apply_T(l, k, x, geometry))
        rhs = np.vdot(apply_T(l, k, y, geometry, adjoint=True), x)
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))

    @settings(max_examples=30, deadline=None)
    @given(a=parameters, seed=st.integers(0, 2**32 - 1))
    def test_q_preserves_norm(self, a: float, seed: int) -> None:
        geometry = FrameGeometry(4, 4)
        v = random_vector(geometry.size, np.random.default_rng(seed))
        for mode in QMode:
            out = apply_Q(a, v, geometry, mode)
            assert np.linalg.norm(out) == pytest.approx(np.linalg.norm(v), rel=1e-10)


class TestChannelOperator:
    """Composite channel operator and its monitor hook."""

    def setup_method(self) -> None:
        self.rng = np.random.default_rng(42)
        self.geometry = FrameGeometry(16, 8)

    def test_random_channels_match_dense(self) -> None:
        for _ in range(50):
            paths = random_paths(self.rng, int(self.rng.integers(1, 5)))
            v = random_vector(self.geometry.size, self.rng)
            H = dense_channel_matrix(paths, self.geometry)
            operator = build_channel_operator(paths, self.geometry)
            fast = operator.forward(v)
            assert np.linalg.norm(fast - H @ v) <= 1e-10 * np.linalg.norm(H @ v)
            back = operator.adjoint(v)
            assert np.linalg.norm(back - H.conj().T @ v) <= 1e-10 * np.linalg.norm(v)

    def test_to_dense_matches_oracle(self) -> None:
        geometry = FrameGeometry(8, 4)
        paths = random_paths(self.rng)
        operator = ChannelOperator(paths, geometry)
        np.testing.assert_allclose(
            operator.to_dense(), dense_channel_matrix(paths, geometry), atol=1e-10
        )
        np.testing.assert_allclose(
            QOperator(1.3, geometry).to_dense(),
            dense_q_matrix(1.3, geometry),
            atol=1e-10,
        )

    def test_dense_operator(self) -> None:
        geometry = FrameGeometry(4, 4)
        H = dense_channel_matrix(random_paths(self.rng), geometry)
        operator = DenseOperator(H, geometry)
        v = random_vector(geometry.size, self.rng)
        np.testing.assert_allclose(operator @ v, H @ v)
        np.testing.assert_allclose(operator.adjoint(v), H.conj().T @ v)
        with pytest.raises(ValueError):
            DenseOperator(np.eye(3), geometry)

    def test_empty_path_set_rejected(self) -> None:
        with pytest.raises(ValueError):
            ChannelOperator(PathSet(), self.geometry)

    def test_monitor_counts_applications(self) -> None:
        monitor = PerformanceMonitor()
        paths = random_paths(self.rng)
        operator = build_channel_operator(paths, self.geometry, monitor)
        v = random_vector(self.geometry.size, self.rng)
        for _ in range(3):
            operator.forward(v)
        operator.adjoint(v)
        assert monitor.count("channel.forward") == 3
        assert monitor.count("channel.adjoint") == 1
        assert operator.with_monitor(None).forward(v) is not None
        assert monitor.count("channel.forward") == 3


class TestFrobeniusGeometry:
    """Closed-form Gram entries against explicit traces."""

    def setup_method(self) -> None:
        self.rng = np.random.default_rng(7)

    @pytest.mark.parametrize("M,N", GEOMETRIES)
    def test_gram_matches_traces(self, M: int, N: int) -> None:
        geometry = FrameGeometry(M, N)
        a = random_paths(self.rng, 3)
        b = random_paths(self.rng, 2)
        gram = channel_gram(a, b, geometry)
        for i, p in enumerate(a):
            for j, q in enumerate(b):
                Ti = dense_t_matrix(p.delay, p.doppler, geometry)
                Tj = dense_t_matrix(q.delay, q.doppler, geometry)
                assert gram[i, j] == pytest.approx(np.trace(Ti.conj().T @ Tj), abs=1e-8)

    def test_diagonal_equals_frame_size(self) -> None:
        geometry = FrameGeometry(8, 4)
        paths = random_paths(self.rng, 4)
        np.testing.assert_allclose(
            np.diag(channel_gram(paths, paths, geometry)), geometry.size, rtol=1e-12
        )

    def test_norm_and_distance_match_dense(self) -> None:
        geometry = FrameGeometry(8, 4)
        truth = random_paths(self.rng, 3)
        estimate = random_paths(self.rng, 2)
        H = dense_channel_matrix(truth, geometry)
        H_hat = dense_channel_matrix(estimate, geometry)
        assert squared_frobenius_norm(truth, geometry) == pytest.approx(
            np.linalg.norm(H) ** 2, rel=1e-9
        )
        assert frobenius_distance_squared(truth, estimate, geometry) == pytest.approx(
            np.linalg.norm(H - H_hat) ** 2, rel=1e-9
        )
        assert frobenius_distance_squared(truth, truth, geometry) == pytest.approx(
            0.0, abs=1e-9
        )
        assert squared_frobenius_norm(PathSet(), geometry) == 0.0


class TestOperatorPerformance:
    """Fast application cost at the vehicular frame size."""

    @pytest.mark.performance
    def test_channel_application(self, benchmark: Any) -> None:
        geometry = FrameGeometry(64, 16)
        rng = np.random.default_rng(0)
        operator = build_channel_operator(random_paths(rng, 4), geometry)
        v = random_vector(geometry.size, rng)
        result = benchmark(operator.forward, v)
        assert result.shape == (geometry.size,)
