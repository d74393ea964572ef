"""The complete chaos-conditioned spatio-temporal forecaster."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import _tensor as tn
from ._errors import ModelFormatError, ShapeMismatchError
from ._forecast import ForecastWeights, ForecastWithUncertainty, predict
from ._graph import (
    GraphWeights,
    LearnedAdjacency,
    build_adjacency,
    default_k,
    default_radius,
    encode_nodes,
    gcn_layer,
    neighbourhood_mask,
    refine,
)
from ._profile import PROFILE_DIM, ProfileScaler
from ._temporal import EncoderWeights, MultiScaleConfig, encode
from ._tensor import ParamRegistry, Tensor

N_FEATURES = 5


@dataclass(frozen=True)
class ModelConfig:
    """Architecture settings. ``top_k`` and ``radius`` of ``None`` select the defaults."""

    n_features: int = N_FEATURES
    hidden: int = 16
    heads: int = 8
    layers: int = 2
    dropout: float = 0.1
    seq_len: int = 12
    horizon: int = 12
    top_k: int | None = None
    radius: float | None = None

    def encoder_config(self) -> MultiScaleConfig:
        return MultiScaleConfig(
            hidden=self.hidden, seq_len=self.seq_len, layers=self.layers, heads=self.heads
        )


@dataclass
class ModelOutput:
    forecast: ForecastWithUncertainty
    adjacency: LearnedAdjacency


class ChaosForecaster:
    """Multi-scale encoder, adaptive graph and multi-horizon heads sharing one parameter registry.

    :param config: architecture settings.
    :param seed: seed of the parameter initialization.
    :param coords: optional ``(N, 2)`` node positions for the local attention.
    :param scaler: z-scoring statistics applied to incoming profiles.
    """

    def __init__(
        self,
        config: ModelConfig | None = None,
        seed: int = 0,
        coords: np.ndarray | None = None,
        scaler: ProfileScaler | None = None,
    ) -> None:
        self.config = ModelConfig() if config is None else config
        self.coords = None if coords is None else np.asarray(coords, dtype=np.float64)
        self.scaler = ProfileScaler.identity() if scaler is None else scaler
        self.params = ParamRegistry()
        rng = np.random.default_rng(seed)
        d = self.config.hidden
        self.encoder = EncoderWeights.init(
            self.params, "encoder", self.config.n_features, self.config.encoder_config(), rng
        )
        self.graph = GraphWeights.init(self.params, "graph", d, d, d, rng)
        self.head = ForecastWeights.init(self.params, "forecast", d, self.config.horizon, rng)
        self._masks: dict[int, np.ndarray] = {}

    def local_mask(self, n: int) -> np.ndarray:
        if n not in self._masks:
            radius = self.config.radius
            if radius is None:
                radius = float("inf") if self.coords is None else default_radius(self.coords)
            self._masks[n] = neighbourhood_mask(self.coords, radius, n)
        return self._masks[n]

    def scaled_profiles(self, profiles: np.ndarray) -> np.ndarray:
        return self.scaler.transform(profiles)

    def forward(
        self,
        x: np.ndarray,
        profiles: np.ndarray,
        rng: np.random.Generator | None = None,
    ) -> ModelOutput:
        """Forecast from a batch of windows.

        :param x: history ``(B, T, N, F)`` (or one window ``(T, N, F)``).
        :param profiles: raw window profiles ``(B, 20)`` (or ``(20,)``).
        :param rng: enables dropout when given (training mode).
        :returns: ``(B, N, H)`` forecasts (batch axis dropped for a single window) and the
            learned adjacency.
        """
        x = np.asarray(x, dtype=np.float64)
        profiles = np.asarray(profiles, dtype=np.float64)
        single = x.ndim == 3  # noqa: PLR2004
        if single:
            x, profiles = x[None], profiles[None]
        batch, t, n, f = x.shape
        if (t, f) != (self.config.seq_len, self.config.n_features) or profiles.shape != (
            batch,
            PROFILE_DIM,
        ):
            msg = (
                f"forward: expected windows (B, {self.config.seq_len}, N, "
                f"{self.config.n_features}) and profiles (B, {PROFILE_DIM}), "
                f"got {x.shape} and {profiles.shape}"
            )
            raise ShapeMismatchError(msg)
        c = Tensor(self.scaled_profiles(profiles))
        dropout = self.config.dropout if rng is not None else 0.0

        h = encode(
            np.swapaxes(x, 1, 2), tn.reshape(c, (batch, 1, PROFILE_DIM)), self.encoder, dropout, rng
        )
        e_n, e_c = encode_nodes(h[:, :, -1, :], c, self.graph)
        e_r = refine(e_n, e_c, None, None, self.graph, mask=self.local_mask(n))
        k = default_k(n) if self.config.top_k is None else self.config.top_k
        adjacency = build_adjacency(e_r, c, k, self.graph)
        z = gcn_layer(adjacency, e_r, self.graph.w_z)
        forecast = predict(z, c, self.head)
        if single:
            forecast = ForecastWithUncertainty(
                mean=forecast.mean[0],
                variance=forecast.variance[0],
                weights=forecast.weights[0],
                head_means=[m[0] for m in forecast.head_means],
                head_variances=[v[0] for v in forecast.head_variances],
            )
        return ModelOutput(forecast=forecast, adjacency=adjacency)

    __call__ = forward

    def state(self) -> dict[str, np.ndarray]:
        """Every parameter, buffer and setting as named arrays."""
        records = {f"param.{name}": value for name, value in self.params.snapshot().items()}
        records["buffer.profile_mean"] = self.scaler.mean.copy()
        records["buffer.profile_scale"] = self.scaler.scale.copy()
        if self.coords is not None:
            records["buffer.coords"] = self.coords.copy()
        for key, value in asdict(self.config).items():
            records[f"meta.{key}"] = np.array(np.nan if value is None else float(value))
        return records

    @classmethod
    def from_state(cls, records: dict[str, np.ndarray]) -> ChaosForecaster:
        """Rebuild a model from :meth:`state` records."""
        settings = {}
        for item in fields(ModelConfig):
            key = f"meta.{item.name}"
            if key not in records:
                msg = f"Model file is missing '{key}'."
                raise ModelFormatError(msg)
            value = float(records[key])
            if np.isnan(value):
                settings[item.name] = None
            elif item.name in ("dropout", "radius"):
                settings[item.name] = value
            else:
                settings[item.name] = int(value)
        try:
            scaler = ProfileScaler(
                records["buffer.profile_mean"], records["buffer.profile_scale"]
            )
        except KeyError as e:
            msg = f"Model file is missing '{e.args[0]}'."
            raise ModelFormatError(msg) from None
        model = cls(ModelConfig(**settings), coords=records.get("buffer.coords"), scaler=scaler)
        params = {
            name.removeprefix("param."): value
            for name, value in records.items()
            if name.startswith("param.")
        }
        missing = set(model.params.names()) - set(params)
        if missing:
            msg = f"Model file is missing parameters: {', '.join(sorted(missing))}"
            raise ModelFormatError(msg)
        model.params.load(params)
        return model
