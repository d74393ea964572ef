"""Helper functions for running the tests."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import numpy as np

from chaoscast import ChaosForecaster, ModelConfig, SeriesWindow, TrainConfig
from chaoscast._data import write_readings_csv

SEQ_LEN = 8
HORIZON = 3
N_FEATURES = 5


def tiny_model_config(**overrides: Any) -> ModelConfig:  # noqa: ANN401
    settings: dict[str, Any] = {
        "n_features": N_FEATURES,
        "hidden": 4,
        "heads": 2,
        "layers": 1,
        "dropout": 0.0,
        "seq_len": SEQ_LEN,
        "horizon": HORIZON,
    }
    settings.update(overrides)
    return ModelConfig(**settings)


def tiny_model(seed: int = 0, **overrides: Any) -> ChaosForecaster:  # noqa: ANN401
    return ChaosForecaster(tiny_model_config(**overrides), seed=seed)


def tiny_config(**overrides: Any) -> TrainConfig:  # noqa: ANN401
    """A training configuration small enough for unit tests."""
    settings: dict[str, Any] = {
        "hidden": 4,
        "heads": 2,
        "layers": 1,
        "dropout": 0.0,
        "seq_len": SEQ_LEN,
        "horizon": HORIZON,
        "epochs": 3,
        "batch_size": 4,
        "support_size": 2,
        "query_size": 3,
        "meta_epochs": 1,
        "n_inner": 1,
        "profile_context": 32,
    }
    settings.update(overrides)
    return TrainConfig(**settings)


def random_windows(
    count: int,
    n_nodes: int = 3,
    seed: int = 0,
    with_profiles: bool = True,  # noqa: FBT001, FBT002
) -> list[SeriesWindow]:
    """Windows of a smooth synthetic signal, optionally with random profiles attached."""
    rng = np.random.default_rng(seed)
    t = np.arange(count + SEQ_LEN + HORIZON, dtype=np.float64)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_nodes)
    flow = np.sin(2.0 * np.pi * t[:, None] / 12.0 + phases[None, :])
    features = np.repeat(flow[..., None], N_FEATURES, axis=-1)
    out = []
    for start in range(count):
        end = start + SEQ_LEN
        out.append(
            SeriesWindow(
                x=features[start:end].copy(),
                y=flow[end : end + HORIZON].copy(),
                start=start,
                context=flow[:end].copy(),
                profile=rng.normal(0.0, 1.0, 20) if with_profiles else None,
            )
        )
    return out


def write_city(
    directory: Path, readings: np.ndarray, coords: np.ndarray | None = None
) -> Path:
    """Write ``readings.csv`` (and ``coordinates.csv``) of a synthetic city."""
    directory.mkdir(parents=True, exist_ok=True)
    ids = [f"s{i}" for i in range(readings.shape[1])]
    write_readings_csv(directory / "readings.csv", readings, ids)
    if coords is not None:
        rows = [f"{s},{float(x)!r},{float(y)!r}" for s, (x, y) in zip(ids, coords)]
        lines = ["sensor_id,x,y", *rows]
        (directory / "coordinates.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return directory
