"""Chaos-aware spatio-temporal forecasting of sensor networks."""

from .__about__ import __version__
from ._attention import AttentionWeights, chaos_attention, realize_target_pattern
from ._config import TrainConfig, load_config
from ._data import (
    CityData,
    PhysicsFeatures,
    RobustScaler,
    SensorTable,
    SeriesWindow,
    StaticGraphSpec,
    gaussian_adjacency,
    load_city,
    physics_features,
    robust_scale,
    spectral_normalize,
    windows,
)
from ._errors import (
    ChaosCastError,
    ConfigError,
    DegenerateSeriesError,
    InsufficientPointsError,
    IsolatedNodeWarning,
    ModelFormatError,
    NonFiniteLossError,
    NonFiniteSeriesError,
    NonPositiveVarianceError,
    NonScalarLossError,
    ProfileFormatError,
    RankDeficientError,
    SeriesTooShortError,
    ShapeMismatchError,
)
from ._forecast import ForecastWithUncertainty, coverage, evaluate, gaussian_nll, predict
from ._generators import generate, generate_city, regime_series
from ._graph import build_adjacency, gcn_layer, refine
from ._model import ChaosForecaster, ModelConfig
from ._modelfile import load_model, save_model
from ._nlts import (
    correlation_dimension,
    delay_embed,
    hurst_exponent,
    largest_lyapunov,
    recurrence_metrics,
    sample_entropy,
)
from ._profile import ChaosProfile, RegimeLabel, chaos_profile, profile_distance
from ._temporal import downsample, encode, spline_upsample
from ._tensor import ParamRegistry, Tensor, check_gradients
from ._train import (
    ChaosCache,
    cache_lookup_or_extract,
    chaos_adaptive_lr,
    clip_gradients,
    composite_loss,
    fit,
    fit_adjacency,
    inject_noise,
    meta_step,
    transfer,
)

__all__ = [
    "AttentionWeights",
    "ChaosCache",
    "ChaosCastError",
    "ChaosForecaster",
    "ChaosProfile",
    "CityData",
    "ConfigError",
    "DegenerateSeriesError",
    "ForecastWithUncertainty",
    "InsufficientPointsError",
    "IsolatedNodeWarning",
    "ModelConfig",
    "ModelFormatError",
    "NonFiniteLossError",
    "NonFiniteSeriesError",
    "NonPositiveVarianceError",
    "NonScalarLossError",
    "ParamRegistry",
    "PhysicsFeatures",
    "ProfileFormatError",
    "RankDeficientError",
    "RegimeLabel",
    "RobustScaler",
    "SensorTable",
    "SeriesTooShortError",
    "SeriesWindow",
    "ShapeMismatchError",
    "StaticGraphSpec",
    "Tensor",
    "TrainConfig",
    "__version__",
    "build_adjacency",
    "cache_lookup_or_extract",
    "chaos_adaptive_lr",
    "chaos_attention",
    "chaos_profile",
    "check_gradients",
    "clip_gradients",
    "composite_loss",
    "correlation_dimension",
    "coverage",
    "delay_embed",
    "downsample",
    "encode",
    "evaluate",
    "fit",
    "fit_adjacency",
    "gaussian_adjacency",
    "gaussian_nll",
    "gcn_layer",
    "generate",
    "generate_city",
    "hurst_exponent",
    "inject_noise",
    "largest_lyapunov",
    "load_city",
    "load_config",
    "load_model",
    "meta_step",
    "physics_features",
    "predict",
    "profile_distance",
    "realize_target_pattern",
    "recurrence_metrics",
    "refine",
    "regime_series",
    "robust_scale",
    "sample_entropy",
    "save_model",
    "spectral_normalize",
    "spline_upsample",
    "transfer",
    "windows",
]
