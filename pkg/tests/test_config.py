"""Test the training configuration and its TOML loader."""

from __future__ import annotations

from pathlib import Path
from typing import Any

import pytest

from chaoscast import ConfigError, ModelConfig, TrainConfig, load_config


def test_defaults() -> None:
    config = TrainConfig()
    assert config.epochs == 200
    assert config.batch_size == 8
    assert config.cache_threshold is None
    assert config.to_dict()["source_lr"] == 5e-4


def test_model_config() -> None:
    config = TrainConfig(hidden=8, heads=2, layers=1, top_k=3)
    assert config.model_config(5) == ModelConfig(
        n_features=5, hidden=8, heads=2, layers=1, dropout=0.1, top_k=3
    )


@pytest.mark.parametrize(
    ("values", "field"),
    [
        ({"bogus": 1}, "bogus"),
        ({"epochs": "ten"}, "epochs"),
        ({"epochs": 2.5}, "epochs"),
        ({"epochs": True}, "epochs"),
        ({"verbose": 1}, "verbose"),
        ({"target_city": 3}, "target_city"),
        ({"epochs": 0}, "epochs"),
        ({"noise_sigma": -0.1}, "noise_sigma"),
        ({"val_fraction": 1.0}, "val_fraction"),
        ({"plateau_factor": 1.5}, "plateau_factor"),
        ({"dropout": 1.0}, "dropout"),
        ({"hidden": 10, "heads": 4}, "heads"),
    ],
)
def test_invalid_values(values: dict[str, Any], field: str) -> None:
    with pytest.raises(ConfigError) as excinfo:
        TrainConfig.from_mapping(values)
    assert excinfo.value.field == field
    assert f"'{field}'" in str(excinfo.value)


def test_zero_allowed_where_non_negative() -> None:
    config = TrainConfig.from_mapping({"noise_sigma": 0, "gamma": 0.0, "meta_epochs": 0})
    assert config.noise_sigma == 0.0
    assert isinstance(config.noise_sigma, float)


def test_integer_promoted_to_float() -> None:
    config = TrainConfig.from_mapping({"source_lr": 1, "cache_threshold": 2})
    assert config.source_lr == 1.0
    assert isinstance(config.source_lr, float)
    assert config.cache_threshold == 2.0


class TestLoadConfig:
    """Reading TOML files."""

    def test_flat_table(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text(
            'epochs = 3\nnoise_sigma = 0.01\nverbose = true\ntarget_city = "b"\n',
            encoding="utf-8",
        )
        config = load_config(path)
        assert config.epochs == 3
        assert config.noise_sigma == 0.01
        assert config.verbose
        assert config.target_city == "b"

    def test_invalid_toml(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text("epochs = = 3\n", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid TOML"):
            load_config(path)

    def test_nested_table(self, tmp_path: Path) -> None:
        path = tmp_path / "run.toml"
        path.write_text("[model]\nhidden = 8\n", encoding="utf-8")
        with pytest.raises(ConfigError) as excinfo:
            load_config(path)
        assert excinfo.value.field == "model"

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_config(tmp_path / "absent.toml")
