"""``chaoscast`` command line: analyze, gen, train, predict, compare, calibrate.

Exit codes are 0 on success, 1 when training hits a non-finite loss and 2 for usage, input
or file errors. Results go to stdout or files; progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .__about__ import __version__
from ._config import TrainConfig, load_config
from ._data import (
    CityData,
    SeriesWindow,
    load_cities,
    read_readings_csv,
    write_readings_csv,
)
from ._errors import ChaosCastError, NonFiniteLossError
from ._forecast import coverage
from ._generators import SYSTEMS, generate, generate_city
from ._logging import LOGGER
from ._model import ChaosForecaster
from ._modelfile import load_model, save_model
from ._profile import SLOT_NAMES, ChaosProfile, chaos_profile, profile_distance
from ._train import ChaosCache, attach_profiles, forecast_windows, transfer, write_history

EXIT_OK = 0
EXIT_NUMERIC = 1
EXIT_USAGE = 2


def _write(text: str) -> None:
    sys.stdout.write(text + "\n")


def _parse_params(text: str | None) -> dict[str, float | int]:
    """``"r=3.9,x0=0.2"`` to keyword arguments; integer literals stay integers."""
    params: dict[str, float | int] = {}
    if not text:
        return params
    for item in text.split(","):
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            msg = f"Malformed parameter '{item}', expected key=value."
            raise ValueError(msg)
        try:
            params[key.strip()] = int(value)
        except ValueError:
            params[key.strip()] = float(value)
    return params


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        msg = f"Expected comma-separated numbers, got '{text}'."
        raise ValueError(msg) from None


def _analyze(args: argparse.Namespace) -> int:
    table = read_readings_csv(args.input)
    column = table.sensor_ids[0] if args.column is None else args.column
    if column not in table.sensor_ids:
        msg = f"Column '{column}' not in {args.input} (have {', '.join(table.sensor_ids)})."
        raise ValueError(msg)
    series = table.readings[:, table.sensor_ids.index(column)]
    options = {"m": args.m}
    if args.tau is not None:
        options["tau_e"] = args.tau
    profile = chaos_profile(series, **options)
    if args.out is not None:
        Path(args.out).write_text(profile.to_json(), encoding="utf-8")
        LOGGER.info("Wrote profile to %s", args.out)
    _write(f"regime={profile.regime.value}")
    _write(f"degraded={str(profile.degraded).lower()}")
    for name, value in zip(SLOT_NAMES, profile.to_array()):
        if not name.startswith("reserved"):
            _write(f"{name}={value:.10g}")
    return EXIT_OK


def _gen(args: argparse.Namespace) -> int:
    params = _parse_params(args.params)
    out = Path(args.out)
    if args.nodes == 1:
        readings = generate(args.system, args.n, args.seed, **params)[:, None]
        write_readings_csv(out, readings, ["s0"])
        LOGGER.info("Wrote %d samples to %s", args.n, out)
        return EXIT_OK
    readings, coords = generate_city(args.nodes, args.n, args.seed, args.system, **params)
    ids = [f"s{i}" for i in range(args.nodes)]
    if out.suffix == ".csv":
        write_readings_csv(out, readings, ids)
    else:
        out.mkdir(parents=True, exist_ok=True)
        write_readings_csv(out / "readings.csv", readings, ids)
        frame = pd.DataFrame({"sensor_id": ids, "x": coords[:, 0], "y": coords[:, 1]})
        frame.to_csv(
            out / "coordinates.csv", index=False, float_format="%.17g", lineterminator="\n"
        )
    LOGGER.info("Wrote %d samples of %d sensors to %s", args.n, args.nodes, out)
    return EXIT_OK


def _target_name(cities: dict[str, CityData], wanted: str | None) -> str:
    if wanted is None:
        return sorted(cities)[-1]
    if wanted not in cities:
        msg = f"City '{wanted}' not found (have {', '.join(sorted(cities))})."
        raise ValueError(msg)
    return wanted


def _train(args: argparse.Namespace) -> int:
    config = TrainConfig() if args.config is None else load_config(args.config)
    if args.verbose:
        config.verbose = True
    cities = load_cities(args.data)
    target = _target_name(cities, config.target_city)

    def city_windows(city: CityData) -> list[SeriesWindow]:
        return city.windows(config.seq_len, config.horizon, config.stride, config.profile_context)

    sources = {name: city_windows(city) for name, city in cities.items() if name != target}
    result = transfer(
        sources,
        city_windows(cities[target]),
        config,
        seed=args.seed,
        coords=cities[target].table.coords,
    )
    save_model(result.model, args.out)
    history = Path(args.history) if args.history else Path(args.out).with_suffix(".history.csv")
    write_history(result.history, history)
    LOGGER.info("Wrote training history to %s", history)
    return EXIT_OK


def _profiled_windows(
    args: argparse.Namespace,
) -> tuple[ChaosForecaster, CityData, list[SeriesWindow]]:
    model = load_model(args.model)
    cities = load_cities(args.data)
    chosen = cities[_target_name(cities, args.city)]
    windows = chosen.windows(model.config.seq_len, model.config.horizon, context=args.context)
    return model, chosen, attach_profiles(windows, ChaosCache(0.0))


def _predict(args: argparse.Namespace) -> int:
    model, city, windows = _profiled_windows(args)
    forecast = forecast_windows(model, windows)
    median, iqr = city.scaler.median[:, None], city.scaler.iqr[:, None]
    records = []
    for i, window in enumerate(windows):
        records.append(
            {
                "start": window.start,
                "regime": ChaosProfile.from_array(window.profile).regime.value,
                "fusion_weights": forecast.weights.data[i].tolist(),
                "mean": (forecast.mean.data[i] * iqr + median).tolist(),
                "variance": (forecast.variance.data[i] * iqr**2).tolist(),
            }
        )
    document = {
        "sensor_ids": city.table.sensor_ids,
        "horizon": model.config.horizon,
        "windows": records,
    }
    Path(args.out).write_text(json.dumps(document, indent=2) + "\n", encoding="utf-8")
    LOGGER.info("Wrote %d window forecasts to %s", len(records), args.out)
    return EXIT_OK


def _compare(args: argparse.Namespace) -> int:
    a = ChaosProfile.from_json(Path(args.a).read_text(encoding="utf-8"))
    b = ChaosProfile.from_json(Path(args.b).read_text(encoding="utf-8"))
    weights = None if args.weights is None else np.asarray(_parse_floats(args.weights))
    _write(f"distance={profile_distance(a, b, weights):.10g}")
    for name, delta in zip(SLOT_NAMES, a.to_array() - b.to_array()):
        _write(f"delta.{name}={delta:.10g}")
    return EXIT_OK


def _calibrate(args: argparse.Namespace) -> int:
    alphas = _parse_floats(args.alphas)
    model, _, windows = _profiled_windows(args)
    forecast = forecast_windows(model, windows)
    targets = np.stack([w.y.T for w in windows])
    rows = [[alpha, 1.0 - alpha, coverage(targets, forecast, alpha)] for alpha in alphas]
    frame = pd.DataFrame(rows, columns=["alpha", "nominal", "coverage"])
    text = frame.to_csv(index=False, float_format="%.6g", lineterminator="\n")
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
        LOGGER.info("Wrote coverage table to %s", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    seeded.add_argument("-v", "--verbose", action="store_true", help="log progress in detail")
    # every subcommand takes --seed; these ones draw no random numbers
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="accepted and unused")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress in detail")

    parser = argparse.ArgumentParser(
        prog="chaoscast",
        description="Chaos-aware spatio-temporal forecasting of sensor networks.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    analyze = commands.add_parser("analyze", parents=[common], help="chaos profile of a series")
    analyze.add_argument("--input", required=True, help="readings CSV")
    analyze.add_argument("--column", help="sensor column (default: the first)")
    analyze.add_argument("--out", help="profile JSON to write")
    analyze.add_argument("--m", type=int, default=5, help="embedding dimension (default: 5)")
    analyze.add_argument("--tau", type=int, help="embedding delay (default: estimated)")
    analyze.set_defaults(handler=_analyze)

    gen = commands.add_parser("gen", parents=[seeded], help="synthetic series")
    gen.add_argument("--system", required=True, choices=sorted(SYSTEMS))
    gen.add_argument("--params", help="system parameters, e.g. r=3.9,x0=0.2")
    gen.add_argument("-n", type=int, required=True, help="number of samples")
    gen.add_argument("--nodes", type=int, default=1, help="number of sensors (default: 1)")
    gen.add_argument("--out", required=True, help="CSV file, or a city directory for --nodes > 1")
    gen.set_defaults(handler=_gen)

    train = commands.add_parser("train", parents=[seeded], help="train a model")
    train.add_argument("--config", help="TOML file of training settings")
    train.add_argument("--data", required=True, help="city directory or directory of cities")
    train.add_argument("--out", required=True, help="model file to write")
    train.add_argument("--history", help="history CSV (default: next to the model)")
    train.set_defaults(handler=_train)

    predict = commands.add_parser("predict", parents=[common], help="forecast with uncertainty")
    predict.add_argument("--model", required=True)
    predict.add_argument("--data", required=True)
    predict.add_argument("--city", help="city to forecast (default: the last one)")
    predict.add_argument("--context", type=int, default=TrainConfig.profile_context)
    predict.add_argument("--out", required=True, help="forecast JSON to write")
    predict.set_defaults(handler=_predict)

    compare = commands.add_parser("compare", parents=[common], help="distance of two profiles")
    compare.add_argument("--a", required=True)
    compare.add_argument("--b", required=True)
    compare.add_argument("--weights", help="20 comma-separated slot weights")
    compare.set_defaults(handler=_compare)

    calibrate = commands.add_parser("calibrate", parents=[common], help="interval coverage")
    calibrate.add_argument("--model", required=True)
    calibrate.add_argument("--data", required=True)
    calibrate.add_argument("--city")
    calibrate.add_argument("--context", type=int, default=TrainConfig.profile_context)
    calibrate.add_argument("--alphas", default="0.05,0.1,0.32")
    calibrate.add_argument("--out", help="coverage CSV (default: stdout)")
    calibrate.set_defaults(handler=_calibrate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code."""
    args = build_parser().parse_args(argv)
    LOGGER.setLevel(logging.DEBUG if args.verbose else logging.INFO)
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except NonFiniteLossError as e:
        sys.stderr.write(f"chaoscast: {e}\n")
        return EXIT_NUMERIC
    except (ChaosCastError, OSError, ValueError) as e:
        sys.stderr.write(f"chaoscast: {e}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
