"""Test the seeded synthetic systems."""

from __future__ import annotations

import numpy as np
import pytest

from chaoscast import RegimeLabel, generate, generate_city, regime_series


def test_logistic_values() -> None:
    np.testing.assert_allclose(
        generate("logistic", 3, x0=0.3), [0.84, 0.5376, 0.99434496], rtol=1e-12
    )


@pytest.mark.parametrize("system", ["logistic", "lorenz", "ar1", "sine"])
def test_same_seed_same_series(system: str) -> None:
    params = {"burn_in": 50} if system == "lorenz" else {}
    first = generate(system, 200, seed=11, **params)
    assert first.shape == (200,)
    np.testing.assert_array_equal(first, generate(system, 200, seed=11, **params))
    if system != "sine":
        assert not np.array_equal(first, generate(system, 200, seed=12, **params))


def test_white_noise_is_the_seeded_stream() -> None:
    expected = np.random.default_rng(np.random.SeedSequence(5)).standard_normal(100)
    np.testing.assert_array_equal(generate("ar1", 100, seed=5, phi=0.0), expected)


def test_logistic_stays_in_unit_interval() -> None:
    series = generate("logistic", 2000, seed=3)
    assert np.all((series >= 0.0) & (series <= 1.0))


def test_lorenz_dimensions() -> None:
    out = generate("lorenz", 30, burn_in=10, dims=3)
    assert out.shape == (30, 3)
    assert np.all(np.isfinite(out))


def test_empty_series() -> None:
    assert generate("sine", 0).shape == (0,)


@pytest.mark.parametrize(
    ("system", "n", "params", "match"),
    [
        ("henon", 10, {}, "Unknown system"),
        ("sine", -1, {}, "non-negative"),
        ("sine", 10, {"bogus": 1.0}, "Bad parameters"),
        ("sine", 10, {"period": 0.0}, "Period"),
        ("logistic", 10, {"r": 4.5}, "r must lie"),
        ("logistic", 10, {"x0": 1.5}, "x0 must lie"),
        ("lorenz", 10, {"dt": 0.0}, "Time step"),
    ],
)
def test_invalid(system: str, n: int, params: dict[str, float], match: str) -> None:
    with pytest.raises(ValueError, match=match):
        generate(system, n, **params)


class TestRegimeSeries:
    """Series typical of each regime."""

    def test_chaotic_is_the_full_logistic_map(self) -> None:
        np.testing.assert_array_equal(
            regime_series("Chaotic", 50, 1), generate("logistic", 50, 1, r=4.0)
        )

    def test_regular_is_a_sine(self) -> None:
        series = regime_series(RegimeLabel.Regular, 48, 2)
        assert np.max(np.abs(series)) < 0.7

    def test_unknown_label(self) -> None:
        with pytest.raises(ValueError, match="Chaos"):
            regime_series("Chaos", 10)


class TestGenerateCity:
    """Coupled multi-sensor cities."""

    def test_shapes_and_ring(self) -> None:
        readings, coords = generate_city(5, 40, seed=1)
        assert readings.shape == (40, 5)
        assert coords.shape == (5, 2)
        np.testing.assert_allclose(np.linalg.norm(coords, axis=1), np.ones(5))

    def test_uncoupled_sensors_are_seeded_copies(self) -> None:
        readings, _ = generate_city(3, 20, seed=4, system="ar1", coupling=0.0, phi=0.0)
        seeds = np.random.SeedSequence(4).generate_state(3)
        for column, seed in zip(readings.T, seeds):
            np.testing.assert_array_equal(column, generate("ar1", 20, int(seed), phi=0.0))

    def test_full_coupling_averages_neighbours(self) -> None:
        raw, _ = generate_city(4, 10, seed=2, system="sine", coupling=0.0, noise=0.1)
        coupled, _ = generate_city(4, 10, seed=2, system="sine", coupling=1.0, noise=0.1)
        expected = 0.5 * (np.roll(raw, 1, axis=1) + np.roll(raw, -1, axis=1))
        np.testing.assert_allclose(coupled, expected, atol=1e-15)

    def test_deterministic(self) -> None:
        a, _ = generate_city(3, 30, seed=9)
        b, _ = generate_city(3, 30, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_invalid(self) -> None:
        with pytest.raises(ValueError, match="at least one sensor"):
            generate_city(0, 10)
        with pytest.raises(ValueError, match="Coupling"):
            generate_city(2, 10, coupling=1.5)
