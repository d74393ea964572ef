"""Test the multi-scale temporal encoder."""

from __future__ import annotations

import numpy as np
import pytest

from chaoscast import (
    ParamRegistry,
    ShapeMismatchError,
    Tensor,
    check_gradients,
    downsample,
    encode,
)
from chaoscast import _tensor as tn
from chaoscast._temporal import (
    FACTORS,
    EncoderWeights,
    LSTMWeights,
    MultiScaleConfig,
    branch_energies,
    fuse_scales,
    lstm_encode,
    pooling_centres,
    spline_upsample,
    upsample_branches,
)


def _encoder(layers: int = 1, seq_len: int = 8) -> tuple[ParamRegistry, EncoderWeights]:
    registry = ParamRegistry()
    config = MultiScaleConfig(hidden=4, seq_len=seq_len, layers=layers, heads=2)
    return registry, EncoderWeights.init(registry, "enc", 2, config, np.random.default_rng(0))


class TestDownsample:
    """Mean pooling."""

    def test_ragged_tail(self) -> None:
        x = np.arange(5.0)[:, None]
        np.testing.assert_allclose(downsample(x, 2).data[:, 0], [0.5, 2.5, 4.0])

    def test_identity(self) -> None:
        x = Tensor(np.ones((3, 2)))
        assert downsample(x, 1) is x

    def test_invalid_factor(self) -> None:
        with pytest.raises(ValueError, match="Pooling factor"):
            downsample(np.ones((8, 1)), 3)

    def test_centres(self) -> None:
        np.testing.assert_allclose(pooling_centres(12, 8), [3.5, 9.5])
        np.testing.assert_allclose(pooling_centres(4, 2), [0.5, 2.5])


class TestSplineUpsample:
    """Cubic spline interpolation."""

    def test_reproduces_cubic(self) -> None:
        knots = np.arange(6.0)
        targets = np.linspace(0.0, 5.0, 23)
        values = (knots**3 - 2.0 * knots)[:, None]
        out = spline_upsample(values, 23, knots, targets).data[:, 0]
        np.testing.assert_allclose(out, targets**3 - 2.0 * targets, atol=1e-9)

    def test_keeps_end_samples(self) -> None:
        values = np.random.default_rng(0).normal(size=(5, 3))
        out = spline_upsample(values, 17).data
        np.testing.assert_allclose(out[0], values[0], atol=1e-12)
        np.testing.assert_allclose(out[-1], values[-1], atol=1e-12)

    def test_single_sample(self) -> None:
        out = spline_upsample(np.array([[2.0, 3.0]]), 4).data
        np.testing.assert_array_equal(out, np.tile([2.0, 3.0], (4, 1)))

    @pytest.mark.parametrize("k", FACTORS)
    def test_linear_round_trip(self, k: int) -> None:
        t = np.arange(12.0)
        x = (1.5 + 0.25 * t)[:, None]
        branches = [downsample(x, factor) for factor in FACTORS]
        restored = upsample_branches(branches, 12)[FACTORS.index(k)].data
        np.testing.assert_allclose(restored, x, atol=1e-9)


class TestLSTM:
    """Recurrent branches."""

    def test_shapes(self) -> None:
        registry = ParamRegistry()
        w = LSTMWeights.init(registry, "lstm", 3, 5, np.random.default_rng(0))
        out = lstm_encode(np.random.default_rng(1).normal(size=(2, 7, 3)), w)
        assert out.shape == (2, 7, 5)
        assert np.all(np.abs(out.data) < 1.0)
        np.testing.assert_array_equal(w.b.data[5:10], np.ones(5))

    def test_wrong_width(self) -> None:
        w = LSTMWeights.init(ParamRegistry(), "lstm", 3, 5, np.random.default_rng(0))
        with pytest.raises(ShapeMismatchError):
            lstm_encode(np.zeros((7, 4)), w)


def test_fuse_scales_shape_mismatch() -> None:
    with pytest.raises(ShapeMismatchError):
        fuse_scales([np.zeros((8, 4)), np.zeros((4, 4))], np.zeros((8, 4)))


def test_fixed_factors() -> None:
    with pytest.raises(ValueError, match="fixed"):
        MultiScaleConfig(factors=(1, 2, 4))


class TestEncode:
    """Full encoder."""

    def test_shapes(self) -> None:
        _, w = _encoder(layers=2)
        rng = np.random.default_rng(1)
        out = encode(rng.normal(size=(3, 8, 2)), rng.normal(size=(3, 20)), w)
        assert out.shape == (3, 8, 4)

    def test_profile_changes_output(self) -> None:
        _, w = _encoder()
        x = np.random.default_rng(2).normal(size=(8, 2))
        a = encode(x, np.zeros(20), w).data
        b = encode(x, np.full(20, 3.0), w).data
        assert not np.allclose(a, b)

    def test_branch_energies(self) -> None:
        _, w = _encoder()
        energies = branch_energies(np.random.default_rng(3).normal(size=(8, 2)), w)
        assert sorted(energies) == list(FACTORS)
        assert all(value >= 0 for value in energies.values())

    def test_branch_energies_separate_scales(self) -> None:
        _, w = _encoder()
        t = np.arange(32, dtype=np.float64)
        slow = np.sin(2.0 * np.pi * t / 32.0)
        fast = np.tile([1.0, -1.0], 16)
        slow_energy = branch_energies(np.column_stack([slow, slow]), w)
        fast_energy = branch_energies(np.column_stack([fast, fast]), w)
        assert fast_energy[8] == 0.0
        assert fast_energy[1] > 0.0
        assert slow_energy[8] > 0.0
        assert slow_energy[8] / slow_energy[1] > fast_energy[8] / fast_energy[1]

    def test_gradients(self) -> None:
        registry, w = _encoder()
        rng = np.random.default_rng(4)
        x = rng.normal(size=(2, 8, 2))
        c = rng.normal(size=(2, 20))

        def loss() -> Tensor:
            return tn.sum(encode(x, c, w) * np.linspace(-1.0, 1.0, 4))

        result = check_gradients(loss, registry.tensors(), max_coords=3)
        assert result.ok, result.failures
        assert result.skipped == 0
