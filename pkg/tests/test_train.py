"""Test the chaos-aware training machinery."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from chaoscast import (
    ChaosCache,
    ChaosProfile,
    NonFiniteLossError,
    ParamRegistry,
    RegimeLabel,
    SeriesWindow,
    Tensor,
    TrainConfig,
    cache_lookup_or_extract,
    chaos_adaptive_lr,
    clip_gradients,
    composite_loss,
    fit,
    generate_city,
    inject_noise,
    meta_step,
    robust_scale,
    transfer,
)
from chaoscast._data import windows as make_windows
from chaoscast._forecast import ForecastWithUncertainty
from chaoscast._graph import LearnedAdjacency
from chaoscast._model import ModelOutput
from chaoscast._train import (
    AdamW,
    CacheEntry,
    EarlyStopping,
    EpochRecord,
    LossSettings,
    PlateauScheduler,
    RunningStats,
    adapt,
    attach_profiles,
    batch_loss,
    build_model,
    default_cache_threshold,
    evaluate_windows,
    forecast_windows,
    make_episodes,
    mean_loss,
    meta_train,
    node_profiles,
    prepare_windows,
    split_windows,
    write_history,
)

from .helpers import HORIZON, N_FEATURES, SEQ_LEN, random_windows, tiny_config, tiny_model


def _entry(snapshot: np.ndarray) -> CacheEntry:
    return CacheEntry(snapshot=snapshot, profile=ChaosProfile(), per_node=np.zeros((1, 20)))


def _output(mean: np.ndarray, variance: np.ndarray, adjacency: np.ndarray) -> ModelOutput:
    forecast = ForecastWithUncertainty(
        mean=Tensor(mean),
        variance=Tensor(variance),
        weights=Tensor(np.full(3, 1.0 / 3.0)),
        head_means=[Tensor(mean)] * 3,
        head_variances=[Tensor(variance)] * 3,
    )
    mask = adjacency > 0
    return ModelOutput(
        forecast=forecast,
        adjacency=LearnedAdjacency(Tensor(adjacency), Tensor(adjacency), mask, 1),
    )


class TestChaosCache:
    """Nearest-snapshot profile cache."""

    @pytest.mark.parametrize(
        ("delta", "hit"),
        [(0.0, True), (0.49, True), (0.5, True), (0.5 + 1e-9, False), (3.0, False)],
    )
    def test_threshold(self, delta: float, hit: bool) -> None:  # noqa: FBT001
        cache = ChaosCache(0.5)
        cache.insert(_entry(np.zeros((4, 3))))
        query = np.zeros((4, 3))
        query[2, 1] = delta
        assert (cache.lookup(query) is not None) is hit

    def test_exact_cache(self) -> None:
        cache = ChaosCache(0.0)
        snapshot = np.random.default_rng(0).normal(size=(5, 2))
        cache.insert(_entry(snapshot))
        assert cache.lookup(snapshot.copy()) is not None
        assert cache.lookup(snapshot + 1e-12) is None

    def test_closest_entry_wins(self) -> None:
        cache = ChaosCache(10.0)
        far, near = _entry(np.full((2, 2), 3.0)), _entry(np.full((2, 2), 1.0))
        cache.insert(far)
        cache.insert(near)
        assert cache.lookup(np.zeros((2, 2))) is near
        assert cache.lookup(np.zeros((3, 2))) is None

    def test_eviction(self) -> None:
        cache = ChaosCache(0.0, capacity=2)
        for value in range(3):
            cache.insert(_entry(np.full((2, 2), float(value))))
        assert len(cache) == 2
        assert cache.lookup(np.zeros((2, 2))) is None
        assert cache.lookup(np.full((2, 2), 2.0)) is not None

    def test_invalid(self) -> None:
        with pytest.raises(ValueError, match="threshold"):
            ChaosCache(-1.0)
        with pytest.raises(ValueError, match="capacity"):
            ChaosCache(1.0, capacity=0)

    def test_lookup_or_extract(self) -> None:
        cache = ChaosCache(0.0)
        window = np.random.default_rng(1).normal(size=(40, 3))
        first = cache_lookup_or_extract(cache, window)
        second = cache_lookup_or_extract(cache, window.copy())
        assert second is first
        assert (cache.hits, cache.misses) == (1, 1)
        assert cache.hit_rate == 0.5
        expected = node_profiles(window).mean(axis=0)
        np.testing.assert_allclose(first.to_array(), expected)

    def test_attach_profiles_threads(self) -> None:
        windows = random_windows(6, with_profiles=False)
        serial = attach_profiles(windows, ChaosCache(0.0))
        threaded = attach_profiles(windows, ChaosCache(0.0), workers=3)
        for a, b in zip(serial, threaded):
            assert a.profile is not None
            assert b.profile is not None
            np.testing.assert_array_equal(a.profile, b.profile)
        assert all(w.profile is None for w in windows)

    def test_attach_profiles_matches_one_by_one(self) -> None:
        walk = np.cumsum(np.random.default_rng(7).normal(size=(120, 2)), axis=0)
        windows = []
        for start in range(0, 100, 4):
            end = start + SEQ_LEN
            windows.append(
                SeriesWindow(
                    x=np.repeat(walk[start:end, :, None], N_FEATURES, axis=-1),
                    y=walk[end : end + HORIZON],
                    start=start,
                    context=walk[max(0, end - 64) : end],
                )
            )
        threshold = default_cache_threshold(windows)
        one_by_one = ChaosCache(threshold)
        expected = [cache_lookup_or_extract(one_by_one, w.x, w.context) for w in windows]
        assert one_by_one.hits > 0
        assert one_by_one.misses > 0
        for workers in (1, 8):
            cache = ChaosCache(threshold)
            attached = attach_profiles(windows, cache, workers=workers)
            for window, profile in zip(attached, expected):
                np.testing.assert_array_equal(window.profile, profile.to_array())
            assert (cache.hits, cache.misses) == (one_by_one.hits, one_by_one.misses)
            assert len(cache) == one_by_one.misses


class TestNoise:
    """Regime-adaptive profile noise."""

    def test_variance(self) -> None:
        rng = np.random.default_rng(2)
        noisy = inject_noise(np.zeros((10_000, 20)), 0.1, np.full(20, 2.0), rng)
        assert np.var(noisy) == pytest.approx(0.04, rel=0.02)

    def test_zero_sigma(self) -> None:
        c = np.random.default_rng(3).normal(size=(4, 20))
        np.testing.assert_array_equal(inject_noise(c, 0.0, None, np.random.default_rng(0)), c)

    def test_negative_sigma(self) -> None:
        with pytest.raises(ValueError, match="non-negative"):
            inject_noise(np.zeros(20), -0.1, None, np.random.default_rng(0))

    def test_running_stats(self) -> None:
        values = np.random.default_rng(4).normal(3.0, 2.0, (30, 20))
        stats = RunningStats()
        np.testing.assert_array_equal(stats.std, np.zeros(20))
        for chunk in np.array_split(values, 4):
            stats.update(chunk)
        np.testing.assert_allclose(stats.mean, values.mean(axis=0))
        np.testing.assert_allclose(stats.std, values.std(axis=0))


class TestCompositeLoss:
    """The composite training objective."""

    def test_perfect_prediction(self) -> None:
        y = np.random.default_rng(5).normal(size=(2, 3, 4))
        output = _output(y, np.ones_like(y), np.zeros((2, 3, 3)))
        terms = composite_loss(y, output, np.zeros((2, 20)))
        assert terms.total.item() == 0.0

    def test_hand_example(self) -> None:
        y = np.zeros((2, 2, 3))
        c = np.eye(20)[:2]
        output = _output(np.ones_like(y), np.ones_like(y), np.full((2, 2, 2), 0.5))
        terms = composite_loss(y, output, c, lambda1=0.1, lambda2=1.0, lambda_sparse=0.2)
        assert terms.prediction == pytest.approx(1.0)
        assert terms.magnitude == pytest.approx(2.0)
        assert terms.orthogonality == pytest.approx(0.0)
        assert terms.topology == pytest.approx(0.5)
        assert terms.total.item() == pytest.approx(1.0 + 0.1 * 2.0 + 0.2 * 0.5)

    def test_orthogonality(self) -> None:
        y = np.zeros((2, 1, 1))
        output = _output(y, np.ones_like(y), np.zeros((2, 1, 1)))
        terms = composite_loss(y, output, 2.0 * np.eye(20)[:2], lambda2=1.0)
        assert terms.orthogonality == pytest.approx(18.0)
        assert terms.total.item() == pytest.approx(18.0)

    def test_uncertainty_term(self) -> None:
        y = np.full((1, 2, 3), 1.0)
        output = _output(np.zeros_like(y), np.full_like(y, 2.0), np.zeros((1, 2, 2)))
        terms = composite_loss(y, output, np.zeros((1, 20)), gamma=0.5)
        nll = 0.5 * np.log(4.0 * np.pi) + 0.25
        assert terms.uncertainty == pytest.approx(2.0 * nll)
        assert terms.total.item() == pytest.approx(1.0 + 0.5 * 2.0 * nll)


class TestOptimization:
    """Learning rate, clipping, optimizers and schedules."""

    def test_adaptive_lr(self) -> None:
        assert chaos_adaptive_lr(1e-3, 0.5, np.zeros(20)) == pytest.approx(1e-3)
        unit = np.eye(20)[0]
        assert chaos_adaptive_lr(1e-3, np.log(2.0), unit) == pytest.approx(5e-4)
        assert chaos_adaptive_lr(1e-3, 0.0, unit * 9.0, scale=0.7) == pytest.approx(7e-4)
        assert chaos_adaptive_lr(1e-3, 0.1, unit * 5.0) < chaos_adaptive_lr(1e-3, 0.1, unit)
        with pytest.raises(ValueError, match="positive"):
            chaos_adaptive_lr(0.0, 0.1, unit)

    @pytest.mark.parametrize(("norm", "tau"), [(2.0, 1.0), (0.5, 1.0), (0.0, 1.0)])
    def test_clip_gradients(self, norm: float, tau: float) -> None:
        registry = ParamRegistry()
        a, b = registry.add("a", np.zeros(2)), registry.add("b", np.zeros(1))
        a.grad = np.array([0.6, 0.0]) * norm
        b.grad = np.array([0.8]) * norm
        assert clip_gradients(registry, tau) == pytest.approx(norm)
        assert registry.grad_norm() == pytest.approx(min(norm, tau))

    def test_adamw_decay_only(self) -> None:
        registry = ParamRegistry()
        w = registry.add("w", np.array([1.0, -2.0]))
        registry.zero_grad()
        AdamW(registry, lr=0.1, weight_decay=0.5).step()
        np.testing.assert_allclose(w.data, [0.95, -1.9], rtol=1e-12)

    def test_adamw_first_step(self) -> None:
        registry = ParamRegistry()
        w = registry.add("w", np.array([1.0]))
        w.grad = np.array([3.0])
        optimizer = AdamW(registry, lr=0.1)
        optimizer.step()
        assert w.data[0] == pytest.approx(0.9, abs=1e-9)
        assert optimizer.steps == 1

    def test_plateau_scheduler(self) -> None:
        scheduler = PlateauScheduler(factor=0.7, patience=8)
        scales = [scheduler.step(1.0)]
        scales += [scheduler.step(1.0) for _ in range(8)]
        assert scales[:-1] == [1.0] * 8
        assert scales[-1] == pytest.approx(0.7)
        assert scheduler.step(0.5) == pytest.approx(0.7)

    def test_early_stopping(self) -> None:
        stopper = EarlyStopping(patience=15)
        assert not stopper.step(1.0)
        assert stopper.improved
        assert [stopper.step(1.0) for _ in range(15)] == [False] * 14 + [True]
        assert stopper.best_epoch == 0
        assert not stopper.improved


class TestSplitting:
    """Validation splits and meta-learning episodes."""

    def test_chronological_split(self) -> None:
        windows = random_windows(10)
        train, val = split_windows(windows, 0.2)
        assert train == windows[:8]
        assert val == windows[8:]
        assert len(split_windows(windows[:3], 0.01)[1]) == 1
        with pytest.raises(ValueError, match="at least 2"):
            split_windows(windows[:1], 0.2)

    def test_episodes_are_disjoint(self) -> None:
        windows = random_windows(10)
        episodes = make_episodes(windows, 5, np.random.default_rng(0), 3, 4, city="a")
        assert len(episodes) == 5
        for episode in episodes:
            assert len(episode.support) == 3
            assert len(episode.query) == 4
            assert not {id(w) for w in episode.support} & {id(w) for w in episode.query}
            assert episode.city == "a"
        with pytest.raises(ValueError, match="needs 8 windows"):
            make_episodes(windows[:7], 1, np.random.default_rng(0), 4, 4)


def test_meta_step_without_inner_lr_is_a_query_step() -> None:
    config = tiny_config(n_inner=2, inner_lr=0.0)
    windows = random_windows(8)
    episode = make_episodes(windows, 1, np.random.default_rng(0), 3, 5)[0]
    meta_model, plain_model = tiny_model(seed=1), tiny_model(seed=1)

    meta_step(meta_model, episode, config, AdamW(meta_model.params, weight_decay=1e-4))

    optimizer = AdamW(plain_model.params, weight_decay=1e-4)
    plain_model.params.zero_grad()
    batch_loss(plain_model, episode.query, LossSettings.from_config(config)).total.backward()
    clip_gradients(plain_model.params, config.clip_tau)
    optimizer.step(config.outer_lr)

    for name in meta_model.params.names():
        np.testing.assert_array_equal(meta_model.params[name].data, plain_model.params[name].data)


class TestFit:
    """Single-city training loop."""

    def test_deterministic(self) -> None:
        windows = random_windows(20)
        config = tiny_config()
        first = fit(windows, config, seed=7)
        second = fit(windows, config, seed=7)
        assert first.history == second.history
        assert len(first.history) == config.epochs
        assert all(record.cache_hit_rate == 0.0 for record in first.history)

    def test_loss_decreases(self) -> None:
        config = tiny_config(epochs=30, source_lr=1e-2, noise_sigma=0.0)
        history = fit(random_windows(24), config, seed=0).history
        assert history[-1].train_loss < history[0].train_loss

    def test_restores_best_parameters(self) -> None:
        windows = random_windows(20)
        config = tiny_config(epochs=4, source_lr=5e-2)
        result = fit(windows, config, seed=3)
        _, val = split_windows(windows, config.val_fraction)
        settings = LossSettings.from_config(config)
        best = result.history[result.best_epoch].val_loss
        assert mean_loss(result.model, val, settings, config.batch_size) == pytest.approx(best)
        assert best - config.min_delta <= min(record.val_loss for record in result.history)

    def test_early_stopping(self) -> None:
        config = tiny_config(epochs=20, early_stop_patience=2, source_lr=1e-12)
        result = fit(random_windows(12), config, seed=0)
        assert result.stopped_early
        assert len(result.history) == 3
        assert result.best_epoch == 0

    def test_non_finite_loss(self) -> None:
        windows = [replace(w, y=np.full_like(w.y, np.inf)) for w in random_windows(10)]
        with pytest.raises(NonFiniteLossError) as excinfo:
            fit(windows, tiny_config(), seed=0)
        assert excinfo.value.state["epoch"] == 0
        assert "param_norms" in excinfo.value.state

    def test_extracts_missing_profiles(self) -> None:
        config = tiny_config(epochs=1, cache_threshold=0.0)
        result = fit(random_windows(8, with_profiles=False), config, seed=0)
        assert len(result.history) == 1
        assert 0.0 <= result.history[0].cache_hit_rate <= 1.0


class TestTransfer:
    """Meta-learning followed by fine-tuning."""

    def test_without_sources(self) -> None:
        config = tiny_config(epochs=2)
        result = transfer({}, random_windows(10), config, seed=0)
        assert len(result.history) == 2

    def test_with_sources(self) -> None:
        config = tiny_config(target_epochs=2, meta_epochs=1)
        sources = {"a": random_windows(8, seed=1), "b": random_windows(8, seed=2)}
        result = transfer(sources, random_windows(10, seed=3), config, seed=0)
        assert len(result.history) == 2
        assert np.isfinite(result.history[-1].val_loss)

    def test_scaler_ignores_target_validation(self) -> None:
        config = tiny_config(target_epochs=1, meta_epochs=1)
        sources = {"a": random_windows(8, seed=1)}
        target = random_windows(10, seed=3)
        result = transfer(sources, target, config, seed=0)
        train, val = split_windows(target, config.val_fraction)
        assert val
        seen = np.stack([w.profile for w in [*sources["a"], *train]])
        np.testing.assert_allclose(result.model.scaler.mean, seen.mean(axis=0))
        np.testing.assert_allclose(result.model.scaler.scale, seen.std(axis=0))


def _city(
    label: RegimeLabel, count: int, seed: int, stride: int = 1, *, normalized: bool = False
) -> list[SeriesWindow]:
    readings, _ = generate_city(4, (count - 1) * stride + SEQ_LEN + HORIZON, seed, label=label)
    if normalized:
        readings, _ = robust_scale(readings)
    return make_windows(readings, SEQ_LEN, HORIZON, stride)


def _long_config(**overrides: Any) -> TrainConfig:  # noqa: ANN401
    settings: dict[str, Any] = {
        "hidden": 8,
        "batch_size": 16,
        "source_lr": 1e-2,
        "noise_sigma": 0.0,
        "early_stop_patience": 1000,
    }
    settings.update(overrides)
    return tiny_config(**settings)


@pytest.mark.slow
class TestLongRuns:
    """Multi-hundred-epoch runs on synthetic cities."""

    def test_overfits_small_city(self) -> None:
        config = _long_config(epochs=500)
        city = _city(RegimeLabel.Regular, 64, seed=0, normalized=True)
        windows, _ = prepare_windows(city, config)
        result = fit(windows, config, seed=0)
        train, _ = split_windows(windows, config.val_fraction)
        assert evaluate_windows(result.model, train).mae <= 0.05

    def test_loss_decreases_every_epoch(self) -> None:
        config = _long_config(epochs=20)
        monotone = 0
        for seed in range(10):
            city = _city(RegimeLabel.Regular, 64, seed, normalized=True)
            history = fit(city, config, seed).history
            losses = [record.train_loss for record in history]
            monotone += all(later < earlier for earlier, later in zip(losses, losses[1:]))
        assert monotone >= 9

    def test_meta_init_beats_random_init(self) -> None:
        config = _long_config(
            meta_epochs=30, support_size=4, query_size=6, outer_lr=1e-2, inner_lr=1e-3
        )
        wins = 0
        for seed in range(10):
            cities = {
                f"source{i}": _city(RegimeLabel.Regular, 40, 100 * seed + i) for i in range(2)
            }
            target = _city(RegimeLabel.Regular, 20, 100 * seed + 99)
            every = [w for windows in cities.values() for w in windows] + target
            prepared, _ = prepare_windows(every, config)
            sources = {name: prepared[40 * i : 40 * (i + 1)] for i, name in enumerate(cities)}
            support, query = prepared[80:84], prepared[84:]

            meta = build_model(prepared, config, seed)
            untrained = build_model(prepared, config, seed)
            meta_train(sources, config, meta, seed)
            for model in (meta, untrained):
                adapt(model, support, config, steps=5)
            wins += evaluate_windows(meta, query).mae < evaluate_windows(untrained, query).mae
        assert wins >= 8

    def test_error_follows_regime(self) -> None:
        config = _long_config(epochs=150)
        mae, variance = {}, {}
        for label in RegimeLabel:
            windows, _ = prepare_windows(_city(label, 125, seed=5, stride=2), config)
            model = fit(windows, config, seed=0).model
            _, val = split_windows(windows, config.val_fraction)
            mae[label] = evaluate_windows(model, val).mae
            variance[label] = float(forecast_windows(model, val).variance.data.mean())
        assert mae[RegimeLabel.Regular] < mae[RegimeLabel.WeakChaotic]
        assert mae[RegimeLabel.WeakChaotic] < mae[RegimeLabel.Chaotic]
        assert variance[RegimeLabel.Chaotic] > variance[RegimeLabel.Regular]


def test_write_history(tmp_path: Path) -> None:
    path = tmp_path / "history.csv"
    write_history([EpochRecord(0, 0.5, 0.25, 1e-3, 0.0), EpochRecord(1, 0.4, 0.2, 1e-3, 0.5)], path)
    assert path.read_text(encoding="utf-8") == (
        "epoch,train_loss,val_loss,lr,cache_hit_rate\n0,0.5,0.25,0.001,0\n1,0.4,0.2,0.001,0.5\n"
    )
