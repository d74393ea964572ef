"""Sensor tables, static graphs, preprocessing and sliding windows."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist, squareform

from ._errors import NonFiniteSeriesError, SeriesTooShortError, ShapeMismatchError

IQR_FLOOR = 1e-6
VARIANCE_WINDOW = 12
DEFAULT_INTERVAL = 5.0
READINGS_FILE = "readings.csv"
DISTANCES_FILE = "distances.csv"
COORDINATES_FILE = "coordinates.csv"


@dataclass
class SensorTable:
    """``(T, N)`` readings of ``N`` sensors sampled every ``interval`` minutes."""

    readings: np.ndarray
    sensor_ids: list[str]
    interval: float = DEFAULT_INTERVAL
    coords: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.readings = np.asarray(self.readings, dtype=np.float64).reshape(
            -1, len(self.sensor_ids)
        )
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.float64)
            if self.coords.shape != (len(self.sensor_ids), 2):
                msg = (
                    f"SensorTable: coordinates {self.coords.shape} do not match "
                    f"{len(self.sensor_ids)} sensors"
                )
                raise ShapeMismatchError(msg)

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_ids)

    def __len__(self) -> int:
        return len(self.readings)


def interpolate_missing(frame: pd.DataFrame) -> pd.DataFrame:
    """Linear interpolation of interior gaps, nearest valid value at both ends."""
    filled = frame.interpolate(method="linear", limit_area="inside", axis=0)
    return filled.ffill().bfill()


def read_readings_csv(path: str | Path) -> SensorTable:
    """Read ``timestamp,<sensor_id>...`` rows; non-numeric cells count as missing.

    :raises NonFiniteSeriesError: when a sensor has no valid reading at all.
    """
    frame = pd.read_csv(path)
    if frame.shape[1] < 2:  # noqa: PLR2004
        msg = f"{path}: expected a timestamp column and at least one sensor column."
        raise ValueError(msg)
    timestamps = frame.iloc[:, 0].astype(str)
    values = frame.iloc[:, 1:].apply(pd.to_numeric, errors="coerce").astype(np.float64)
    values = values.where(np.isfinite(values))
    if len(values):
        empty = [str(c) for c in values.columns if values[c].isna().all()]
        if empty:
            msg = f"{path}: sensors without any valid reading: {', '.join(empty)}"
            raise NonFiniteSeriesError(msg)
    values = interpolate_missing(values)
    return SensorTable(
        readings=values.to_numpy(dtype=np.float64),
        sensor_ids=[str(c) for c in values.columns],
        interval=_interval_minutes(timestamps),
    )


def _interval_minutes(timestamps: pd.Series) -> float:
    stamps = pd.to_datetime(timestamps, errors="coerce")
    steps = stamps.diff().dropna()
    if steps.empty:
        return DEFAULT_INTERVAL
    return float(steps.median().total_seconds() / 60.0)


def write_readings_csv(
    path: str | Path,
    readings: np.ndarray,
    sensor_ids: Sequence[str],
    interval: float = DEFAULT_INTERVAL,
) -> None:
    """Write readings with ISO timestamps starting at 2020-01-01 00:00."""
    readings = np.asarray(readings, dtype=np.float64).reshape(-1, len(sensor_ids))
    index = pd.date_range("2020-01-01", periods=len(readings), freq=pd.Timedelta(minutes=interval))
    frame = pd.DataFrame(readings, columns=list(sensor_ids))
    frame.insert(0, "timestamp", index.strftime("%Y-%m-%dT%H:%M:%S"))
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def read_distances_csv(path: str | Path, sensor_ids: Sequence[str]) -> np.ndarray:
    """``(N, N)`` distance matrix from ``from,to,distance_meters`` rows.

    Pairs without a row are infinitely far apart; the diagonal is zero.
    """
    frame = pd.read_csv(path, dtype={"from": str, "to": str})
    missing = {"from", "to", "distance_meters"} - set(frame.columns)
    if missing:
        msg = f"{path}: missing columns {', '.join(sorted(missing))}"
        raise ValueError(msg)
    position = {sensor: i for i, sensor in enumerate(sensor_ids)}
    unknown = sorted((set(frame["from"]) | set(frame["to"])) - set(position))
    if unknown:
        msg = f"{path}: unknown sensors {', '.join(unknown)}"
        raise ValueError(msg)
    distances = np.full((len(sensor_ids), len(sensor_ids)), np.inf)
    rows = frame["from"].map(position).to_numpy()
    cols = frame["to"].map(position).to_numpy()
    distances[rows, cols] = frame["distance_meters"].to_numpy(dtype=np.float64)
    if np.any(distances < 0):
        msg = f"{path}: distances must be non-negative."
        raise ValueError(msg)
    np.fill_diagonal(distances, 0.0)
    return distances


def read_coordinates_csv(path: str | Path, sensor_ids: Sequence[str]) -> np.ndarray:
    """``(N, 2)`` positions from ``sensor_id,x,y`` rows, ordered like ``sensor_ids``."""
    frame = pd.read_csv(path, dtype={"sensor_id": str}).set_index("sensor_id")
    absent = [s for s in sensor_ids if s not in frame.index]
    if absent:
        msg = f"{path}: no coordinates for {', '.join(absent)}"
        raise ValueError(msg)
    return frame.loc[list(sensor_ids), ["x", "y"]].to_numpy(dtype=np.float64)


@dataclass
class StaticGraphSpec:
    """Pairwise sensor distances with the Gaussian kernel width and cutoff.

    ``sigma`` defaults to the standard deviation of the finite off-diagonal distances and
    ``kappa`` to their 75th percentile.
    """

    distances: np.ndarray
    sigma: float | None = None
    kappa: float | None = None

    def __post_init__(self) -> None:
        self.distances = np.asarray(self.distances, dtype=np.float64)
        n = len(self.distances)
        if self.distances.shape != (n, n):
            msg = f"StaticGraphSpec: distances must be square, got {self.distances.shape}"
            raise ShapeMismatchError(msg)
        if np.any(self.distances < 0) or np.any(np.diag(self.distances) != 0):
            msg = "Distances must be non-negative with a zero diagonal."
            raise ValueError(msg)

    @classmethod
    def from_coords(cls, coords: np.ndarray) -> StaticGraphSpec:
        return cls(squareform(pdist(np.asarray(coords, dtype=np.float64))))

    def _finite_pairs(self) -> np.ndarray:
        off = ~np.eye(len(self.distances), dtype=bool)
        values = self.distances[off]
        return values[np.isfinite(values)]

    @property
    def kernel_width(self) -> float:
        if self.sigma is not None:
            return self.sigma
        pairs = self._finite_pairs()
        width = float(np.std(pairs)) if pairs.size else 0.0
        return width if width > 0 else 1.0

    @property
    def cutoff(self) -> float:
        if self.kappa is not None:
            return self.kappa
        pairs = self._finite_pairs()
        return float(np.percentile(pairs, 75)) if pairs.size else 0.0


def gaussian_adjacency(graph: StaticGraphSpec) -> np.ndarray:
    """``A_ij = exp(-d_ij^2 / sigma^2)`` for ``d_ij <= kappa``, else 0."""
    d = graph.distances
    with np.errstate(over="ignore", invalid="ignore"):
        weights = np.exp(-(d * d) / graph.kernel_width**2)
    return np.where(d <= graph.cutoff, weights, 0.0)


def spectral_normalize(a: np.ndarray) -> np.ndarray:
    """``D^-1/2 A D^-1/2`` with ``D`` the row sums; zero-degree rows stay zero."""
    a = np.asarray(a, dtype=np.float64)
    degree = a.sum(axis=1)
    inv_sqrt = np.zeros_like(degree)
    positive = degree > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(degree[positive])
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


@dataclass
class RobustScaler:
    """Per-sensor ``(x - median) / IQR`` with the IQR floored at ``1e-6``."""

    median: np.ndarray
    iqr: np.ndarray

    @classmethod
    def fit(cls, readings: np.ndarray) -> RobustScaler:
        readings = np.asarray(readings, dtype=np.float64)
        q25, median, q75 = np.percentile(readings, [25, 50, 75], axis=0)
        return cls(median=median, iqr=np.maximum(q75 - q25, IQR_FLOOR))

    def transform(self, readings: np.ndarray) -> np.ndarray:
        return (np.asarray(readings, dtype=np.float64) - self.median) / self.iqr

    def inverse_transform(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=np.float64) * self.iqr + self.median


def robust_scale(readings: np.ndarray) -> tuple[np.ndarray, RobustScaler]:
    scaler = RobustScaler.fit(readings)
    return scaler.transform(readings), scaler


@dataclass
class PhysicsFeatures:
    """``(T, N)`` degree centrality, rolling flow variance, neighbour influence and gradient."""

    degree: np.ndarray
    variance: np.ndarray
    influence: np.ndarray
    gradient: np.ndarray

    def stacked(self) -> np.ndarray:
        """The ``(T, N, 4)`` feature block."""
        return np.stack([self.degree, self.variance, self.influence, self.gradient], axis=-1)


def physics_features(
    readings: np.ndarray, a: np.ndarray, window: int = VARIANCE_WINDOW
) -> PhysicsFeatures:
    """Graph and flow features of ``(T, N)`` readings over adjacency ``a``.

    The variance is the population variance over the trailing ``window`` steps (fewer at the
    start); the gradient of the first step is zero.
    """
    readings = np.asarray(readings, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    t, n = readings.shape
    if a.shape != (n, n):
        msg = f"physics_features: adjacency {a.shape} does not match readings {readings.shape}"
        raise ShapeMismatchError(msg)
    variance = (
        pd.DataFrame(readings).rolling(window, min_periods=1).var(ddof=0).to_numpy()
        if t
        else np.zeros((0, n))
    )
    gradient = np.zeros_like(readings)
    gradient[1:] = np.diff(readings, axis=0)
    return PhysicsFeatures(
        degree=np.broadcast_to(a.sum(axis=1), (t, n)).copy(),
        variance=variance,
        influence=readings @ a.T,
        gradient=gradient,
    )


def node_features(readings: np.ndarray, a: np.ndarray) -> np.ndarray:
    """``(T, N, 5)`` model input: the readings followed by the physics features."""
    readings = np.asarray(readings, dtype=np.float64)
    return np.concatenate(
        [readings[..., None], physics_features(readings, a).stacked()], axis=-1
    )


@dataclass(frozen=True, eq=False)
class SeriesWindow:
    """One training sample.

    :param x: history ``(L, N, F)``.
    :param y: target ``(H, N)``.
    :param start: index of the first history step.
    :param context: trailing ``(<= context, N)`` readings ending at the last history step,
        used for profile extraction.
    :param profile: the window's raw chaos profile, once extracted.
    """

    x: np.ndarray
    y: np.ndarray
    start: int = 0
    context: np.ndarray | None = None
    profile: np.ndarray | None = None


def windows(  # noqa: PLR0913
    readings: np.ndarray,
    length: int = 12,
    horizon: int = 12,
    stride: int = 1,
    features: np.ndarray | None = None,
    context: int = 0,
) -> list[SeriesWindow]:
    """Sliding windows over ``(T, N)`` readings.

    :param features: ``(T, N, F)`` history inputs (default: the readings as one channel).
    :param context: length of the trailing profile context (0 uses the history alone).
    :returns: ``floor((T - length - horizon) / stride) + 1`` windows.
    """
    readings = np.asarray(readings, dtype=np.float64)
    if readings.ndim == 1:
        readings = readings[:, None]
    if min(length, horizon, stride) < 1:
        msg = f"length, horizon and stride must be positive, got {length}, {horizon}, {stride}."
        raise ValueError(msg)
    total = len(readings)
    if total < length + horizon:
        msg = f"Need at least {length + horizon} steps for windows, got {total}."
        raise SeriesTooShortError(msg)
    inputs = readings[..., None] if features is None else np.asarray(features, dtype=np.float64)
    if inputs.shape[:2] != readings.shape:
        msg = f"windows: features {inputs.shape} do not match readings {readings.shape}"
        raise ShapeMismatchError(msg)
    span = max(context, length)
    out = []
    for start in range(0, total - length - horizon + 1, stride):
        end = start + length
        out.append(
            SeriesWindow(
                x=inputs[start:end].copy(),
                y=readings[end : end + horizon].copy(),
                start=start,
                context=readings[max(0, end - span) : end].copy(),
            )
        )
    return out


@dataclass
class CityData:
    """A loaded city: raw table, static graph, scaled readings and model features."""

    name: str
    table: SensorTable
    adjacency: np.ndarray
    scaler: RobustScaler
    scaled: np.ndarray
    features: np.ndarray
    graph: StaticGraphSpec | None = None

    def windows(
        self, length: int = 12, horizon: int = 12, stride: int = 1, context: int = 0
    ) -> list[SeriesWindow]:
        return windows(self.scaled, length, horizon, stride, self.features, context)


def load_city(directory: str | Path, name: str | None = None) -> CityData:
    """Load ``readings.csv`` plus the optional ``distances.csv`` and ``coordinates.csv``.

    The static graph comes from the distances, else from the coordinates; a city with
    neither has an empty graph. The Gaussian adjacency is spectrally normalized before the
    physics features are computed on the robust-scaled readings.
    """
    directory = Path(directory)
    table = read_readings_csv(directory / READINGS_FILE)
    if (directory / COORDINATES_FILE).exists():
        table.coords = read_coordinates_csv(directory / COORDINATES_FILE, table.sensor_ids)
    graph = None
    if (directory / DISTANCES_FILE).exists():
        graph = StaticGraphSpec(read_distances_csv(directory / DISTANCES_FILE, table.sensor_ids))
    elif table.coords is not None:
        graph = StaticGraphSpec.from_coords(table.coords)
    n = table.n_sensors
    adjacency = np.zeros((n, n)) if graph is None else spectral_normalize(gaussian_adjacency(graph))
    scaled, scaler = robust_scale(table.readings)
    return CityData(
        name=directory.name if name is None else name,
        table=table,
        adjacency=adjacency,
        scaler=scaler,
        scaled=scaled,
        features=node_features(scaled, adjacency),
        graph=graph,
    )


def load_cities(directory: str | Path) -> dict[str, CityData]:
    """One city for a directory holding ``readings.csv``, else one per such subdirectory."""
    directory = Path(directory)
    if not directory.is_dir():
        msg = f"Data directory {directory} does not exist."
        raise FileNotFoundError(msg)
    if (directory / READINGS_FILE).exists():
        return {directory.name: load_city(directory)}
    cities = {
        sub.name: load_city(sub)
        for sub in sorted(directory.iterdir())
        if (sub / READINGS_FILE).exists()
    }
    if not cities:
        msg = f"No {READINGS_FILE} found in {directory} or its subdirectories."
        raise FileNotFoundError(msg)
    return cities
