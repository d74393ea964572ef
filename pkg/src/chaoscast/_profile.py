"""The 20-slot chaos profile, its regime label, scaling and distance."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Sequence, TypedDict, Union

import numpy as np
from typing_extensions import NotRequired, Unpack

from ._errors import (
    DegenerateSeriesError,
    InsufficientPointsError,
    ProfileFormatError,
    SeriesTooShortError,
)
from ._nlts import (
    MIN_STATISTICS_LENGTH,
    SeriesLike,
    as_series,
    box_counting_dimension,
    correlation_dimension,
    delay_embed,
    estimate_delay,
    hurst_exponent,
    largest_lyapunov,
    recurrence_metrics,
    sample_entropy,
    statistical_descriptors,
)

PROFILE_DIM = 20
FULL_PROFILE_LENGTH = 128
MAX_RECURRENCE_POINTS = 1000
PROFILE_DIMENSION_POINTS = 64

SLOT_NAMES = (
    "lyapunov",
    "hurst",
    "sample_entropy",
    "corr_dimension",
    "box_dimension",
    "recurrence_rate",
    "determinism",
    "spectral_energy",
    "mean",
    "variance",
    "coeff_variation",
    "autocorr_lag1",
    "skewness",
    "kurtosis",
    "trend_strength",
    "seasonal_strength",
    "reserved_0",
    "reserved_1",
    "reserved_2",
    "reserved_3",
)


class RegimeLabel(enum.Enum):
    """Predictability regime from the largest Lyapunov exponent.

    Thresholds 0.3 and 0.8 are applied to the exponent in bits per step, so the fully
    chaotic logistic map (one bit per step) is ``Chaotic``.
    """

    Regular = "Regular"
    WeakChaotic = "WeakChaotic"
    Chaotic = "Chaotic"

    @classmethod
    def from_lyapunov(cls, lyapunov: float) -> RegimeLabel:
        bits = lyapunov / np.log(2.0)
        if bits < 0.3:  # noqa: PLR2004
            return cls.Regular
        if bits <= 0.8:  # noqa: PLR2004
            return cls.WeakChaotic
        return cls.Chaotic


@dataclass(frozen=True)
class ChaosProfile:
    lyapunov: float = 0.0
    hurst: float = 0.5
    sample_entropy: float = 0.0
    corr_dimension: float = 0.0
    box_dimension: float = 0.0
    recurrence_rate: float = 0.0
    determinism: float = 0.0
    spectral_energy: float = 0.0
    mean: float = 0.0
    variance: float = 0.0
    coeff_variation: float = 0.0
    autocorr_lag1: float = 0.0
    skewness: float = 0.0
    kurtosis: float = 0.0
    trend_strength: float = 0.0
    seasonal_strength: float = 0.0
    reserved_0: float = 0.0
    reserved_1: float = 0.0
    reserved_2: float = 0.0
    reserved_3: float = 0.0
    degraded: bool = False

    @property
    def regime(self) -> RegimeLabel:
        return RegimeLabel.from_lyapunov(self.lyapunov)

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in SLOT_NAMES], dtype=np.float64)

    @classmethod
    def from_array(
        cls,
        values: np.ndarray | Sequence[float],
        degraded: bool = False,  # noqa: FBT001, FBT002
    ) -> ChaosProfile:
        array = np.asarray(values, dtype=np.float64).reshape(-1)
        if array.size != PROFILE_DIM:
            msg = f"A chaos profile has {PROFILE_DIM} slots, got {array.size}."
            raise ProfileFormatError(msg)
        return cls(**{name: float(v) for name, v in zip(SLOT_NAMES, array)}, degraded=degraded)

    def to_dict(self) -> dict[str, float | str | bool]:
        out: dict[str, float | str | bool] = {name: getattr(self, name) for name in SLOT_NAMES}
        out["regime"] = self.regime.value
        out["degraded"] = self.degraded
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> ChaosProfile:
        missing = [name for name in SLOT_NAMES if name not in data]
        if missing:
            msg = f"Profile is missing slot(s): {', '.join(missing)}"
            raise ProfileFormatError(msg)
        values = []
        for name in SLOT_NAMES:
            value = data[name]
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                msg = f"Profile slot '{name}' is not a number: {value!r}"
                raise ProfileFormatError(msg)
            if not np.isfinite(value):
                msg = f"Profile slot '{name}' is not finite."
                raise ProfileFormatError(msg)
            values.append(float(value))
        return cls.from_array(values, degraded=bool(data.get("degraded", False)))

    @classmethod
    def from_json(cls, text: str) -> ChaosProfile:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            msg = f"Profile is not valid JSON: {e}"
            raise ProfileFormatError(msg) from None
        if not isinstance(data, dict):
            msg = "Profile JSON must be an object."
            raise ProfileFormatError(msg)
        return cls.from_dict(data)


class ProfileOptions(TypedDict):
    m: NotRequired[int]
    tau_e: NotRequired[int | None]
    entropy_m: NotRequired[int]
    entropy_r: NotRequired[float | None]
    recurrence_eps: NotRequired[float | None]


def chaos_profile(series: SeriesLike, **kwargs: Unpack[ProfileOptions]) -> ChaosProfile:
    """Extract the full chaos profile of one series.

    :param series: the signal; non-finite values raise, everything else yields a profile.
    :param m: embedding dimension (default 5).
    :param tau_e: embedding delay; default is the first 1/e autocorrelation crossing.
    :param entropy_m: sample-entropy template length (default 2).
    :param entropy_r: absolute sample-entropy tolerance (default 0.2 standard deviations).
    :param recurrence_eps: recurrence threshold (default 10% of the embedding diameter).

    Series shorter than 128 samples skip the Lyapunov exponent and both fractal dimensions
    (left at 0); any estimator that cannot run falls back to its default. Both cases set
    ``degraded``.
    """
    values = as_series(series).values
    m = kwargs.get("m", 5)
    tau_e = kwargs.get("tau_e")
    tau = estimate_delay(values) if tau_e is None else tau_e
    degraded = values.size < FULL_PROFILE_LENGTH
    slots: dict[str, float] = {}

    if values.size >= MIN_STATISTICS_LENGTH:
        slots.update(vars(statistical_descriptors(values)))
    else:
        slots.update(mean=float(values.mean()), variance=float(values.var()))

    try:
        slots["sample_entropy"] = sample_entropy(
            values, kwargs.get("entropy_m", 2), kwargs.get("entropy_r")
        )
    except SeriesTooShortError:
        degraded = True
    try:
        slots["hurst"] = hurst_exponent(values)
    except (SeriesTooShortError, DegenerateSeriesError):
        degraded = True

    try:
        embedding = delay_embed(values, m, tau)
    except SeriesTooShortError:
        return ChaosProfile(**slots, degraded=True)

    if values.size >= FULL_PROFILE_LENGTH:
        try:
            slots["lyapunov"] = largest_lyapunov(values, m, tau)
        except (SeriesTooShortError, DegenerateSeriesError):
            degraded = True
        try:
            slots["corr_dimension"] = correlation_dimension(
                embedding, min_points=PROFILE_DIMENSION_POINTS
            )
        except InsufficientPointsError:
            degraded = True
        try:
            slots["box_dimension"] = box_counting_dimension(embedding)
        except InsufficientPointsError:
            degraded = True

    tail = embedding
    if len(embedding) > MAX_RECURRENCE_POINTS:
        tail = replace(embedding, points=embedding.points[-MAX_RECURRENCE_POINTS:])
    try:
        rate, determinism = recurrence_metrics(tail, kwargs.get("recurrence_eps"))
        slots.update(recurrence_rate=rate, determinism=determinism)
    except InsufficientPointsError:
        degraded = True
    return ChaosProfile(**slots, degraded=degraded)


ProfileLike = Union[ChaosProfile, np.ndarray, Sequence[float]]


def _profile_values(profile: ProfileLike) -> np.ndarray:
    if isinstance(profile, ChaosProfile):
        return profile.to_array()
    return np.asarray(profile, dtype=np.float64).reshape(-1)


@dataclass(frozen=True, eq=False)
class ProfileScaler:
    """Per-slot z-scoring statistics."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def identity(cls) -> ProfileScaler:
        return cls(np.zeros(PROFILE_DIM), np.ones(PROFILE_DIM))

    @classmethod
    def fit(cls, profiles: np.ndarray, floor: float = 1e-8) -> ProfileScaler:
        """Statistics of a ``(count, 20)`` profile matrix; flat slots keep scale 1."""
        matrix = np.atleast_2d(np.asarray(profiles, dtype=np.float64))
        spread = matrix.std(axis=0)
        return cls(matrix.mean(axis=0), np.where(spread < floor, 1.0, spread))

    def transform(self, profiles: np.ndarray) -> np.ndarray:
        return (np.asarray(profiles, dtype=np.float64) - self.mean) / self.scale

    def inverse_transform(self, profiles: np.ndarray) -> np.ndarray:
        return np.asarray(profiles, dtype=np.float64) * self.scale + self.mean


def profile_distance(
    a: ProfileLike,
    b: ProfileLike,
    weights: np.ndarray | Sequence[float] | None = None,
    scaler: ProfileScaler | None = None,
) -> float:
    """Weighted Euclidean distance between z-scored profiles.

    :param weights: non-negative per-slot weights (default all ones).
    :param scaler: z-scoring statistics; identity when omitted.
    """
    diff = _profile_values(a) - _profile_values(b)
    if scaler is not None:
        diff = diff / scaler.scale
    w = np.ones(PROFILE_DIM) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != diff.shape:
        msg = f"Expected {diff.size} weights, got {w.size}."
        raise ValueError(msg)
    if np.any(w < 0):
        msg = "Profile weights must be non-negative."
        raise ValueError(msg)
    return float(np.sqrt(np.sum(w * diff * diff)))


def profile_matrix(profiles: Sequence[ChaosProfile]) -> np.ndarray:
    """Stack profiles as rows of a ``(count, 20)`` matrix."""
    return np.stack([p.to_array() for p in profiles]) if profiles else np.zeros((0, PROFILE_DIM))
