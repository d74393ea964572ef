"""Training configuration and its TOML loader."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from ._errors import ConfigError
from ._model import ModelConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# Fields that may be zero; every other number must be strictly positive.
_NON_NEGATIVE = frozenset(
    {
        "weight_decay",
        "noise_sigma",
        "lambda1",
        "lambda2",
        "lambda_sparse",
        "gamma",
        "lr_alpha",
        "min_delta",
        "dropout",
        "n_inner",
        "meta_epochs",
        "inner_lr",
        "layers",
        "target_epochs",
    }
)
_OPTIONAL = frozenset({"cache_threshold", "top_k", "radius", "target_city"})


@dataclass
class TrainConfig:
    """Every model-size, optimization and meta-learning setting of a training run."""

    hidden: int = 16
    heads: int = 8
    layers: int = 2
    dropout: float = 0.1
    seq_len: int = 12
    horizon: int = 12
    stride: int = 1
    source_lr: float = 5e-4
    target_lr: float = 2e-4
    inner_lr: float = 1e-3
    outer_lr: float = 2e-4
    n_inner: int = 3
    support_size: int = 8
    query_size: int = 12
    clip_tau: float = 1.0
    weight_decay: float = 1e-4
    noise_sigma: float = 0.005
    lambda1: float = 1e-4
    lambda2: float = 1e-4
    lambda_sparse: float = 1e-3
    gamma: float = 1.0
    lr_alpha: float = 0.1
    plateau_factor: float = 0.7
    plateau_patience: int = 8
    early_stop_patience: int = 15
    min_delta: float = 1e-5
    epochs: int = 200
    target_epochs: int = 300
    meta_epochs: int = 20
    batch_size: int = 8
    val_fraction: float = 0.2
    cache_capacity: int = 512
    cache_threshold: float | None = None
    profile_context: int = 640
    top_k: int | None = None
    radius: float | None = None
    workers: int = 1
    verbose: bool = False
    target_city: str | None = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        for item in fields(self):
            value = getattr(self, item.name)
            if value is None:
                if item.name not in _OPTIONAL:
                    raise ConfigError(item.name, "must be set")
                continue
            if isinstance(value, (bool, str)):
                continue
            if item.name in _NON_NEGATIVE:
                if value < 0:
                    raise ConfigError(item.name, f"must be non-negative, got {value}")
            elif value <= 0:
                raise ConfigError(item.name, f"must be positive, got {value}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction", f"must lie in (0, 1), got {self.val_fraction}")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError("plateau_factor", f"must lie in (0, 1), got {self.plateau_factor}")
        if self.dropout >= 1.0:
            raise ConfigError("dropout", f"must be below 1, got {self.dropout}")
        if self.hidden % self.heads:
            raise ConfigError("heads", f"{self.heads} does not divide hidden={self.hidden}")

    def model_config(self, n_features: int) -> ModelConfig:
        return ModelConfig(
            n_features=n_features,
            hidden=self.hidden,
            heads=self.heads,
            layers=self.layers,
            dropout=self.dropout,
            seq_len=self.seq_len,
            horizon=self.horizon,
            top_k=self.top_k,
            radius=self.radius,
        )

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> TrainConfig:
        """Build a config from flat key/value pairs, checking names and types."""
        known = {item.name: item for item in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(key, "unknown field")
            kwargs[key] = _coerce(key, known[key].type, value)
        return cls(**kwargs)


def _coerce(name: str, annotation: object, value: object) -> object:
    kind = str(annotation)
    if value is None and name in _OPTIONAL:
        return None
    if "bool" in kind:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return value
    if isinstance(value, bool):
        raise ConfigError(name, f"expected a number, got {value!r}")
    if kind.startswith("int"):
        if not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if kind.startswith("float"):
        if not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if kind.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    return value


def load_config(path: str | Path) -> TrainConfig:
    """Read a flat TOML table whose keys are :class:`TrainConfig` field names.

    :raises ConfigError: on unknown keys, wrong types or out-of-range values.
    """
    try:
        with Path(path).open("rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("<file>", f"invalid TOML: {e}") from None
    nested = [key for key, value in data.items() if isinstance(value, dict)]
    if nested:
        raise ConfigError(nested[0], "nested tables are not supported")
    return TrainConfig.from_mapping(data)
