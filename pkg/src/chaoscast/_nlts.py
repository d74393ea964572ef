"""Nonlinear time-series estimators: delay embedding, Lyapunov, Hurst, entropy, dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from scipy.special import gammaln

from ._errors import (
    DegenerateSeriesError,
    InsufficientPointsError,
    NonFiniteSeriesError,
    SeriesTooShortError,
)

DEGENERATE_VARIANCE = 1e-12
COINCIDENCE_SCALE = 1e-9
MIN_DIMENSION_POINTS = 500
MIN_RECURRENCE_POINTS = 50
MIN_BOX_POINTS = 50
MIN_HURST_LENGTH = 64
MIN_STATISTICS_LENGTH = 8


@dataclass(frozen=True, eq=False)
class Series:
    """A finite, real-valued, evenly sampled signal.

    :param values: samples (flow units, any scale).
    :param dt: sampling interval in minutes.
    """

    values: np.ndarray
    dt: float = 1.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if values.size < 2:  # noqa: PLR2004
            msg = f"A series needs at least 2 samples, got {values.size}."
            raise SeriesTooShortError(msg)
        if not np.all(np.isfinite(values)):
            msg = "Series contains NaN or infinite values."
            raise NonFiniteSeriesError(msg)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return int(self.values.size)


SeriesLike = Union[Series, np.ndarray, Sequence[float]]


def as_series(series: SeriesLike) -> Series:
    return series if isinstance(series, Series) else Series(np.asarray(series))


@dataclass(frozen=True, eq=False)
class DelayEmbedding:
    """Delay vectors ``(x_t, x_{t-tau}, ..., x_{t-(m-1)tau})``, one per row."""

    dim: int
    delay: int
    points: np.ndarray

    def __len__(self) -> int:
        return int(self.points.shape[0])


def delay_embed(series: SeriesLike, m: int, tau_e: int) -> DelayEmbedding:
    """Reconstruct the state space of a scalar series.

    :param series: the signal.
    :param m: embedding dimension.
    :param tau_e: delay in samples.
    :returns: embedding with ``T - (m-1)*tau_e`` points ordered most-recent-first.
    """
    if m < 1 or tau_e < 1:
        msg = f"Embedding dimension and delay must be positive, got m={m}, tau_e={tau_e}."
        raise ValueError(msg)
    values = as_series(series).values
    span = (m - 1) * tau_e
    if values.size < span + 2:
        msg = (
            f"Delay embedding with m={m}, tau_e={tau_e} needs at least {span + 2} samples, "
            f"got {values.size}."
        )
        raise SeriesTooShortError(msg)
    windows = sliding_window_view(values, span + 1)[:, ::tau_e][:, ::-1]
    return DelayEmbedding(dim=m, delay=tau_e, points=np.ascontiguousarray(windows))


def estimate_delay(series: SeriesLike, max_lag: int = 10) -> int:
    """First lag at which the autocorrelation drops below 1/e, capped at ``max_lag``."""
    values = as_series(series).values
    centred = values - values.mean()
    denom = float(np.dot(centred, centred))
    if denom == 0.0:
        return 1
    for lag in range(1, min(max_lag, values.size - 1) + 1):
        if float(np.dot(centred[:-lag], centred[lag:])) / denom < 1.0 / np.e:
            return lag
    return max_lag


def _require_variance(values: np.ndarray) -> None:
    if float(np.var(values)) < DEGENERATE_VARIANCE:
        msg = "Series is constant; the estimator is undefined."
        raise DegenerateSeriesError(msg)


def largest_lyapunov(
    series: SeriesLike,
    m: int = 5,
    tau_e: int | None = None,
    horizon: int = 10,
) -> float:
    """Rosenstein estimate of the largest Lyapunov exponent, in 1/step (natural log).

    Each point is paired with its nearest neighbour outside a Theiler window of
    ``tau_e * m`` samples; the mean log distance of the paired trajectories is followed for
    ``horizon`` steps and its slope is fitted over the part of the curve before it has
    covered half of its total rise (at least three points). Distances are floored at
    ``1e-9`` times the series standard deviation.
    """
    values = as_series(series).values
    _require_variance(values)
    tau = estimate_delay(values) if tau_e is None else tau_e
    points = delay_embed(values, m, tau).points
    theiler = tau * m
    usable = len(points) - horizon
    if usable < 2 * theiler + 3:
        msg = f"Series too short for a Lyapunov estimate with a Theiler window of {theiler}."
        raise SeriesTooShortError(msg)

    tree = cKDTree(points[:usable])
    dist, idx = tree.query(points[:usable], k=min(2 * theiler + 2, usable))
    outside = np.abs(idx - np.arange(usable)[:, None]) > theiler
    has_pair = outside.any(axis=1)
    first = np.argmax(outside, axis=1)
    origin = np.arange(usable)[has_pair]
    partner = idx[has_pair, first[has_pair]]

    steps = np.arange(horizon + 1)
    dists = np.stack(
        [np.linalg.norm(points[origin + s] - points[partner + s], axis=1) for s in steps]
    )
    # separations at rounding level count as coincident
    floor = COINCIDENCE_SCALE * float(np.std(values))
    curve = np.log(np.maximum(dists, floor)).mean(axis=1)

    rise = float(curve.max() - curve[0])
    end = horizon
    if rise > 0:
        end = max(int(np.argmax(curve >= curve[0] + 0.5 * rise)), 2)
    fit = stats.linregress(steps[: end + 1], curve[: end + 1])
    return float(fit.slope)


def _expected_rescaled_range(n: int) -> float:
    # Anis-Lloyd-Peters expectation of R/S for a memoryless series of length n.
    i = np.arange(1, n)
    front = (n - 0.5) / n
    total = float(np.sum(np.sqrt((n - i) / i)))
    if n <= 340:  # noqa: PLR2004
        ratio = float(np.exp(gammaln((n - 1) / 2) - gammaln(n / 2)) / np.sqrt(np.pi))
    else:
        ratio = 1.0 / np.sqrt(n * np.pi / 2)
    return front * ratio * total


def hurst_exponent(series: SeriesLike, min_window: int = 16) -> float:
    """Corrected rescaled-range Hurst exponent over dyadic windows, clamped to [0, 1.5].

    The Anis-Lloyd-Peters expectation is subtracted from each log R/S value so that a
    memoryless series scores 0.5.
    """
    values = as_series(series).values
    if values.size < MIN_HURST_LENGTH:
        msg = f"Hurst exponent needs at least {MIN_HURST_LENGTH} samples, got {values.size}."
        raise SeriesTooShortError(msg)
    _require_variance(values)

    sizes = []
    size = min_window
    while size <= values.size // 2:
        sizes.append(size)
        size *= 2
    log_sizes, log_excess = [], []
    for size in sizes:
        chunks = values[: (values.size // size) * size].reshape(-1, size)
        deviations = chunks - chunks.mean(axis=1, keepdims=True)
        walk = np.cumsum(deviations, axis=1)
        ranges = walk.max(axis=1) - walk.min(axis=1)
        spread = chunks.std(axis=1)
        ok = spread > 0
        if not np.any(ok):
            continue
        rescaled = float(np.mean(ranges[ok] / spread[ok]))
        log_sizes.append(np.log(size))
        log_excess.append(np.log(rescaled) - np.log(_expected_rescaled_range(size)))
    if len(log_sizes) < 2:  # noqa: PLR2004
        msg = "Not enough non-constant windows for a rescaled-range fit."
        raise DegenerateSeriesError(msg)
    slope = stats.linregress(log_sizes, log_excess).slope
    return float(np.clip(0.5 + slope, 0.0, 1.5))


def _chebyshev_pairs(templates: np.ndarray, tolerance: float) -> int:
    tree = cKDTree(templates)
    total = int(tree.count_neighbors(tree, tolerance, p=np.inf))
    return (total - len(templates)) // 2


def sample_entropy(series: SeriesLike, m: int = 2, r: float | None = None) -> float:
    """Sample entropy ``-ln(A/B)``.

    :param m: template length.
    :param r: absolute Chebyshev tolerance; defaults to 0.2 times the standard deviation.
    :returns: 0 for a constant series and ``ln(B + 1)`` when no (m+1)-template matches.
    """
    values = as_series(series).values
    if values.size < 2 * m + 2:
        msg = f"Sample entropy with m={m} needs at least {2 * m + 2} samples, got {values.size}."
        raise SeriesTooShortError(msg)
    spread = float(np.std(values))
    if spread == 0.0:
        return 0.0
    tolerance = 0.2 * spread if r is None else r
    if tolerance <= 0:
        msg = f"Tolerance r must be positive, got {tolerance}."
        raise ValueError(msg)
    count = values.size - m
    matches_m = _chebyshev_pairs(sliding_window_view(values, m)[:count], tolerance)
    matches_m1 = _chebyshev_pairs(sliding_window_view(values, m + 1)[:count], tolerance)
    if matches_m1 == 0:
        return float(np.log(matches_m + 1))
    return float(-np.log(matches_m1 / matches_m))


def _middle_half(log_scale: np.ndarray) -> np.ndarray:
    low, high = log_scale.min(), log_scale.max()
    keep = (log_scale >= low + 0.25 * (high - low)) & (log_scale <= low + 0.75 * (high - low))
    return keep if keep.sum() >= 2 else np.ones_like(log_scale, dtype=bool)  # noqa: PLR2004


def correlation_dimension(  # noqa: PLR0913
    emb: DelayEmbedding,
    theiler: int | None = None,
    n_reference: int = 2000,
    n_radii: int = 20,
    quantiles: tuple[float, float] = (1e-3, 1e-1),
    n_pair_samples: int = 200_000,
    min_points: int = MIN_DIMENSION_POINTS,
) -> float:
    """Grassberger-Procaccia correlation dimension.

    Radii span the given quantiles of the pairwise distance distribution; the slope of
    ``log C(eps)`` against ``log eps`` is fitted over the middle half of that log range.
    Pairs closer in time than ``theiler`` samples (default ``delay * dim``) are ignored.

    :param min_points: fewest embedded points accepted; lower it only for short windows
        whose dimension is a coarse feature rather than a measurement.
    """
    points = emb.points
    n = len(points)
    if n < min_points:
        msg = f"Correlation dimension needs at least {min_points} points, got {n}."
        raise InsufficientPointsError(msg)
    window = emb.delay * emb.dim if theiler is None else theiler

    rng = np.random.default_rng(0)
    first = rng.integers(0, n, n_pair_samples)
    second = rng.integers(0, n, n_pair_samples)
    apart = np.abs(first - second) > window
    sample = np.linalg.norm(points[first[apart]] - points[second[apart]], axis=1)
    sample = sample[sample > 0]
    if sample.size == 0:
        return 0.0
    low, high = np.quantile(sample, quantiles)
    if not high > low > 0:
        return 0.0
    radii = np.geomspace(low, high, n_radii)

    reference = np.linspace(0, n - 1, min(n_reference, n)).astype(np.int64)
    counts = cKDTree(points[reference]).count_neighbors(cKDTree(points), radii).astype(float)
    offsets = np.arange(-window, window + 1)
    neighbours = reference[:, None] + offsets[None, :]
    inside = (neighbours >= 0) & (neighbours < n)
    owners = np.broadcast_to(reference[:, None], neighbours.shape)[inside]
    near = np.linalg.norm(points[owners] - points[neighbours[inside]], axis=1)
    counts -= np.searchsorted(np.sort(near), radii, side="right")
    pairs = float(reference.size) * float(n) - float(inside.sum())
    integral = counts / pairs

    log_radii = np.log(radii)
    keep = _middle_half(log_radii) & (integral > 0)
    if keep.sum() < 2:  # noqa: PLR2004
        return 0.0
    return float(stats.linregress(log_radii[keep], np.log(integral[keep])).slope)


def box_counting_dimension(emb: DelayEmbedding, max_level: int = 20) -> float:
    """Box-counting dimension on dyadic grids over the normalized bounding box.

    Grid levels stop once more than a quarter of the points occupy their own box; the slope
    of ``log N`` against ``log(1/eps)`` is fitted over the middle half of the kept levels.
    """
    points = emb.points
    n = len(points)
    if n < MIN_BOX_POINTS:
        msg = f"Box counting needs at least {MIN_BOX_POINTS} points, got {n}."
        raise InsufficientPointsError(msg)
    origin = points.min(axis=0)
    extent = float((points.max(axis=0) - origin).max())
    if extent == 0.0:
        return 0.0
    unit = (points - origin) / extent

    levels, occupied = [], []
    for level in range(1, max_level + 1):
        cells = np.minimum(np.floor(unit * 2**level).astype(np.int64), 2**level - 1)
        count = len(np.unique(cells, axis=0))
        if count > n / 4 and len(levels) >= 2:  # noqa: PLR2004
            break
        levels.append(level)
        occupied.append(count)
    log_inverse_eps = np.array(levels, dtype=float) * np.log(2.0)
    keep = _middle_half(log_inverse_eps)
    return float(stats.linregress(log_inverse_eps[keep], np.log(occupied)[keep]).slope)


def recurrence_metrics(emb: DelayEmbedding, eps: float | None = None) -> tuple[float, float]:
    """Recurrence rate and determinism of the thresholded distance matrix.

    :param eps: recurrence threshold; defaults to 10% of the embedding diameter.
    :returns: ``(recurrence_rate, determinism)``, both in [0, 1]. The main diagonal is
        excluded; determinism counts recurrent points on diagonal lines of length >= 2. The
        corner diagonal holds a single point and can never form a line, so determinism is
        taken over offsets ``1..n-2``.
    """
    points = emb.points
    n = len(points)
    if n < MIN_RECURRENCE_POINTS:
        msg = f"Recurrence analysis needs at least {MIN_RECURRENCE_POINTS} points, got {n}."
        raise InsufficientPointsError(msg)
    distances = cdist(points, points)
    threshold = 0.1 * float(distances.max()) if eps is None else eps
    if threshold < 0:
        msg = f"Recurrence threshold must be non-negative, got {threshold}."
        raise ValueError(msg)
    recurrent = distances <= threshold

    upper = (int(recurrent.sum()) - n) // 2
    rate = upper / (n * (n - 1) / 2)
    if upper == 0:
        return float(rate), 0.0
    lined = upper - int(recurrent[0, n - 1])
    if lined == 0:
        return float(rate), 0.0
    on_lines = 0
    for offset in range(1, n - 1):
        diagonal = np.diagonal(recurrent, offset).astype(np.int8)
        edges = np.diff(np.concatenate(([0], diagonal, [0])))
        lengths = np.flatnonzero(edges == -1) - np.flatnonzero(edges == 1)
        on_lines += int(lengths[lengths >= 2].sum())  # noqa: PLR2004
    return float(rate), float(on_lines / lined)


@dataclass(frozen=True)
class StatisticalDescriptors:
    """Moment, spectral and decomposition statistics of a series."""

    mean: float
    variance: float
    coeff_variation: float
    autocorr_lag1: float
    skewness: float
    kurtosis: float
    spectral_energy: float
    trend_strength: float
    seasonal_strength: float


def _seasonal_strength(detrended: np.ndarray) -> float:
    n = detrended.size
    power = np.abs(np.fft.rfft(detrended)) ** 2
    if power.size < 2:  # noqa: PLR2004
        return 0.0
    peak = int(np.argmax(power[1:])) + 1
    period = round(n / peak)
    if period < 2 or period > n // 2:  # noqa: PLR2004
        return 0.0
    phase = np.arange(n) % period
    profile = np.bincount(phase, weights=detrended) / np.bincount(phase)
    remainder = detrended - profile[phase]
    total = float(np.var(detrended))
    if total == 0.0:
        return 0.0
    return max(0.0, 1.0 - float(np.var(remainder)) / total)


def statistical_descriptors(series: SeriesLike) -> StatisticalDescriptors:
    """Moments, lag-1 autocorrelation, spectral energy, trend and seasonal strength.

    Spectral energy sums the squared DFT magnitudes over every bin but the zero bin and
    divides by the length; by Parseval this equals ``n * variance``. Seasonal strength folds
    the detrended series at the period of the dominant spectral peak.
    """
    values = as_series(series).values
    n = values.size
    if n < MIN_STATISTICS_LENGTH:
        msg = f"Statistics need at least {MIN_STATISTICS_LENGTH} samples, got {n}."
        raise SeriesTooShortError(msg)
    mean = float(values.mean())
    if np.ptp(values) == 0:
        return StatisticalDescriptors(mean, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    variance = float(values.var())
    centred = values - mean
    autocorr = float(np.dot(centred[:-1], centred[1:]) / np.dot(centred, centred))
    spectrum = np.abs(np.fft.fft(values)) ** 2
    time = np.arange(n, dtype=float)
    slope, intercept = np.polyfit(time, values, 1)
    detrended = values - (slope * time + intercept)
    return StatisticalDescriptors(
        mean=mean,
        variance=variance,
        coeff_variation=float(np.sqrt(variance) / abs(mean)) if mean != 0 else 0.0,
        autocorr_lag1=autocorr,
        skewness=float(stats.skew(values)),
        kurtosis=float(stats.kurtosis(values)),
        spectral_energy=float(spectrum[1:].sum() / n),
        trend_strength=max(0.0, 1.0 - float(np.var(detrended)) / variance),
        seasonal_strength=_seasonal_strength(detrended),
    )
