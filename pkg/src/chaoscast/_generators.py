"""Seeded synthetic dynamical systems: single series, regime series and multi-sensor cities."""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from ._profile import RegimeLabel

LORENZ_START = (1.0, 1.0, 1.0)


def logistic_map(
    n: int, rng: np.random.Generator, r: float = 4.0, x0: float | None = None
) -> np.ndarray:
    """Iterates ``x <- r x (1 - x)``; the first value emitted is ``f(x0)``."""
    if not 0.0 <= r <= 4.0:  # noqa: PLR2004
        msg = f"Logistic parameter r must lie in [0, 4], got {r}."
        raise ValueError(msg)
    x = rng.uniform(0.1, 0.9) if x0 is None else x0
    if not 0.0 <= x <= 1.0:
        msg = f"Logistic start x0 must lie in [0, 1], got {x}."
        raise ValueError(msg)
    out = np.empty(n)
    for i in range(n):
        x = r * x * (1.0 - x)
        out[i] = x
    return out


def _lorenz_rate(
    state: tuple[float, float, float], sigma: float, rho: float, beta: float
) -> tuple[float, float, float]:
    x, y, z = state
    return sigma * (y - x), x * (rho - z) - y, x * y - beta * z


def lorenz(  # noqa: PLR0913
    n: int,
    rng: np.random.Generator,
    sigma: float = 10.0,
    rho: float = 28.0,
    beta: float = 8.0 / 3.0,
    dt: float = 0.01,
    burn_in: int = 1000,
    dims: int = 1,
) -> np.ndarray:
    """Fixed-step RK4 Lorenz trajectory; emits ``x`` (or the first ``dims`` coordinates).

    The start point is jittered from ``(1, 1, 1)`` by the generator and ``burn_in`` steps
    are discarded.
    """
    if dt <= 0:
        msg = f"Time step must be positive, got {dt}."
        raise ValueError(msg)
    jitter = rng.normal(0.0, 0.01, 3)
    state = (
        LORENZ_START[0] + float(jitter[0]),
        LORENZ_START[1] + float(jitter[1]),
        LORENZ_START[2] + float(jitter[2]),
    )
    out = np.empty((n, 3))
    half = 0.5 * dt
    for i in range(int(burn_in) + n):
        k1 = _lorenz_rate(state, sigma, rho, beta)
        k2 = _lorenz_rate(tuple(s + half * k for s, k in zip(state, k1)), sigma, rho, beta)
        k3 = _lorenz_rate(tuple(s + half * k for s, k in zip(state, k2)), sigma, rho, beta)
        k4 = _lorenz_rate(tuple(s + dt * k for s, k in zip(state, k3)), sigma, rho, beta)
        state = tuple(
            s + dt / 6.0 * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )
        if i >= burn_in:
            out[i - int(burn_in)] = state
    return out[:, 0] if dims == 1 else out[:, :dims]


def ar1(n: int, rng: np.random.Generator, phi: float = 0.5, sigma: float = 1.0) -> np.ndarray:
    """``x_t = phi x_{t-1} + sigma e_t`` started at zero; ``phi = 0`` gives white noise."""
    noise = sigma * rng.standard_normal(n)
    out = np.empty(n)
    previous = 0.0
    for i in range(n):
        previous = phi * previous + noise[i]
        out[i] = previous
    return out


def sine(
    n: int,
    rng: np.random.Generator,
    period: float = 24.0,
    noise: float = 0.0,
    amplitude: float = 1.0,
) -> np.ndarray:
    """``amplitude * sin(2 pi t / period)`` plus Gaussian noise of standard deviation ``noise``."""
    if period <= 0:
        msg = f"Period must be positive, got {period}."
        raise ValueError(msg)
    t = np.arange(n, dtype=np.float64)
    return amplitude * np.sin(2.0 * np.pi * t / period) + noise * rng.standard_normal(n)


SYSTEMS: Dict[str, Callable[..., np.ndarray]] = {
    "logistic": logistic_map,
    "lorenz": lorenz,
    "ar1": ar1,
    "sine": sine,
}


def generate(system: str, n: int, seed: int = 0, **params: float) -> np.ndarray:
    """Length-``n`` series of a named system; identical seeds give identical series.

    :param system: one of ``logistic``, ``lorenz``, ``ar1`` or ``sine``.
    :param params: keyword parameters of that system.
    :raises ValueError: for an unknown system, unknown parameters or a negative length.
    """
    if system not in SYSTEMS:
        msg = f"Unknown system '{system}', choose from {', '.join(sorted(SYSTEMS))}."
        raise ValueError(msg)
    if n < 0:
        msg = f"Series length must be non-negative, got {n}."
        raise ValueError(msg)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    try:
        return SYSTEMS[system](n, rng, **params)
    except TypeError as e:
        msg = f"Bad parameters for '{system}': {e}"
        raise ValueError(msg) from None


def regime_series(label: RegimeLabel | str, n: int, seed: int = 0) -> np.ndarray:
    """A series typical of a predictability regime.

    Regular is a noisy sine, WeakChaotic the logistic map at ``r = 3.7`` and Chaotic the
    logistic map at ``r = 4``.
    """
    label = RegimeLabel(label)
    if label is RegimeLabel.Regular:
        return generate("sine", n, seed, period=24.0, noise=0.02, amplitude=0.5)
    if label is RegimeLabel.WeakChaotic:
        return generate("logistic", n, seed, r=3.7)
    return generate("logistic", n, seed, r=4.0)


def ring_coordinates(n_nodes: int, radius: float = 1.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_nodes) / max(n_nodes, 1)
    return radius * np.column_stack([np.cos(angles), np.sin(angles)])


def generate_city(  # noqa: PLR0913
    n_nodes: int,
    n: int,
    seed: int = 0,
    system: str | None = None,
    label: RegimeLabel | str = RegimeLabel.Chaotic,
    coupling: float = 0.1,
    **params: float,
) -> tuple[np.ndarray, np.ndarray]:
    """``(n, n_nodes)`` readings of sensors on a ring and their ``(n_nodes, 2)`` positions.

    Each sensor runs its own seeded copy of ``system`` (or of the ``label`` regime series);
    every reading is then blended with the mean of its two ring neighbours by ``coupling``.
    """
    if n_nodes < 1:
        msg = f"A city needs at least one sensor, got {n_nodes}."
        raise ValueError(msg)
    if not 0.0 <= coupling <= 1.0:
        msg = f"Coupling must lie in [0, 1], got {coupling}."
        raise ValueError(msg)
    seeds = np.random.SeedSequence(seed).generate_state(n_nodes)
    columns = [
        regime_series(label, n, int(s)) if system is None else generate(system, n, int(s), **params)
        for s in seeds
    ]
    readings = np.column_stack(columns)
    if n_nodes > 2:  # noqa: PLR2004
        neighbours = 0.5 * (np.roll(readings, 1, axis=1) + np.roll(readings, -1, axis=1))
        readings = (1.0 - coupling) * readings + coupling * neighbours
    return readings, ring_coordinates(n_nodes)
