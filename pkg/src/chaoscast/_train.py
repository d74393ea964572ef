"""Chaos-aware training: profile cache, noise, composite loss, optimizers and meta-learning."""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from . import _tensor as tn
from ._config import TrainConfig
from ._data import SeriesWindow
from ._errors import NonFiniteLossError
from ._forecast import ForecastMetrics, ForecastWithUncertainty, evaluate, uncertainty_loss
from ._graph import GraphWeights, LearnedAdjacency, build_adjacency
from ._logging import get_logger
from ._model import ChaosForecaster, ModelOutput
from ._profile import PROFILE_DIM, ChaosProfile, ProfileScaler, chaos_profile, profile_matrix
from ._tensor import ArrayLike, ParamRegistry, Tensor

LOGGER = get_logger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "lr", "cache_hit_rate")


@dataclass(frozen=True, eq=False)
class CacheEntry:
    snapshot: np.ndarray
    profile: ChaosProfile
    per_node: np.ndarray


@dataclass(frozen=True, eq=False)
class _PendingEntry:
    snapshot: np.ndarray
    slot: int


def _closest(
    entries: Sequence[CacheEntry | _PendingEntry], x: np.ndarray, threshold: float
) -> CacheEntry | _PendingEntry | None:
    best: CacheEntry | _PendingEntry | None = None
    best_distance = np.inf
    for entry in entries:
        if entry.snapshot.shape != x.shape:
            continue
        distance = float(np.linalg.norm(entry.snapshot - x))
        if distance <= threshold and distance < best_distance:
            best, best_distance = entry, distance
    return best


class ChaosCache:
    """Nearest-snapshot memo of extracted profiles.

    A lookup hits when a stored snapshot of the same shape lies within Euclidean distance
    ``threshold`` of the query; the closest one is returned. The oldest entry is evicted
    once ``capacity`` is reached. Readers see an immutable tuple of entries; writers replace
    it under a lock.
    """

    def __init__(self, threshold: float, capacity: int = 512) -> None:
        if threshold < 0 or capacity < 1:
            msg = f"Need threshold >= 0 and capacity >= 1, got {threshold} and {capacity}."
            raise ValueError(msg)
        self.threshold = threshold
        self.capacity = capacity
        self._entries: tuple[CacheEntry, ...] = ()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def entries(self) -> tuple[CacheEntry, ...]:
        return self._entries

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def lookup(self, x: np.ndarray) -> CacheEntry | None:
        best = _closest(self._entries, x, self.threshold)
        return best if isinstance(best, CacheEntry) else None

    def insert(self, entry: CacheEntry) -> None:
        with self._lock:
            entries = (*self._entries, entry)
            self._entries = entries[-self.capacity :]

    def count(self, hit: bool) -> None:  # noqa: FBT001
        with self._lock:
            if hit:
                self.hits += 1
            else:
                self.misses += 1


def node_profiles(readings: np.ndarray) -> np.ndarray:
    """Chaos profile of every column of a ``(T, N)`` block, as an ``(N, 20)`` matrix."""
    readings = np.asarray(readings, dtype=np.float64)
    return profile_matrix([chaos_profile(readings[:, node]) for node in range(readings.shape[1])])


def _extract(x: np.ndarray, source: np.ndarray | None) -> CacheEntry:
    if source is None:
        source = x[..., 0] if x.ndim == 3 else x  # noqa: PLR2004
    per_node = node_profiles(np.asarray(source, dtype=np.float64).reshape(len(source), -1))
    profile = ChaosProfile.from_array(per_node.mean(axis=0))
    return CacheEntry(snapshot=x.copy(), profile=profile, per_node=per_node)


def cache_lookup_or_extract(
    cache: ChaosCache, x: np.ndarray, source: np.ndarray | None = None
) -> ChaosProfile:
    """Profile of a window: cached when a stored window is close enough, extracted otherwise.

    :param x: the window used as cache key.
    :param source: ``(T, N)`` readings to profile on a miss (default: ``x``, or its first
        feature channel for a ``(T, N, F)`` window). Per-node profiles are mean-pooled.
    """
    x = np.asarray(x, dtype=np.float64)
    entry = cache.lookup(x)
    cache.count(entry is not None)
    if entry is not None:
        return entry.profile
    entry = _extract(x, source)
    cache.insert(entry)
    return entry.profile


def default_cache_threshold(windows: Sequence[SeriesWindow]) -> float:
    """Half the mean Euclidean norm of the window histories."""
    return 0.5 * float(np.mean([np.linalg.norm(w.x) for w in windows]))


def attach_profiles(
    windows: Sequence[SeriesWindow], cache: ChaosCache, workers: int = 1
) -> list[SeriesWindow]:
    """Copies of ``windows`` with their chaos profile filled in (through ``cache``).

    Hits and misses are decided in window order against the cache and the misses met so
    far, as :func:`cache_lookup_or_extract` would decide them one by one. Only the
    extraction of the misses runs on ``workers`` threads, so the profiles and the hit
    counts do not depend on thread scheduling.
    """
    sources: list[tuple[np.ndarray, np.ndarray | None]] = []
    pending: list[_PendingEntry] = []
    picks: list[CacheEntry | _PendingEntry | None] = []
    for window in windows:
        if window.profile is not None:
            picks.append(None)
            continue
        x = np.asarray(window.x, dtype=np.float64)
        visible = (*cache.entries, *pending)[-cache.capacity :]
        entry = _closest(visible, x, cache.threshold)
        cache.count(entry is not None)
        if entry is None:
            entry = _PendingEntry(snapshot=x, slot=len(sources))
            pending.append(entry)
            sources.append((x, window.context))
        picks.append(entry)

    if workers > 1 and len(sources) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            extracted = list(pool.map(lambda item: _extract(*item), sources))
    else:
        extracted = [_extract(x, source) for x, source in sources]
    for entry in extracted:
        cache.insert(entry)

    profiles = []
    for window, pick in zip(windows, picks):
        if pick is None:
            profiles.append(window.profile)
        elif isinstance(pick, _PendingEntry):
            profiles.append(extracted[pick.slot].profile.to_array())
        else:
            profiles.append(pick.profile.to_array())
    return [replace(w, profile=p) for w, p in zip(windows, profiles)]


class RunningStats:
    """Streaming per-slot mean and standard deviation (Welford)."""

    def __init__(self, dim: int = PROFILE_DIM) -> None:
        self.count = 0
        self.mean = np.zeros(dim)
        self._m2 = np.zeros(dim)

    def update(self, values: np.ndarray) -> None:
        for row in np.atleast_2d(np.asarray(values, dtype=np.float64)):
            self.count += 1
            delta = row - self.mean
            self.mean = self.mean + delta / self.count
            self._m2 = self._m2 + delta * (row - self.mean)

    @property
    def std(self) -> np.ndarray:
        if self.count == 0:
            return np.zeros_like(self.mean)
        return np.sqrt(self._m2 / self.count)


def inject_noise(
    c: np.ndarray, sigma: float, scale: np.ndarray | None, rng: np.random.Generator
) -> np.ndarray:
    """``C + eps`` with ``eps ~ N(0, sigma^2 diag(scale^2))``; ``scale`` defaults to ones."""
    if sigma < 0:
        msg = f"Noise level must be non-negative, got {sigma}."
        raise ValueError(msg)
    c = np.asarray(c, dtype=np.float64)
    s = np.ones(c.shape[-1]) if scale is None else np.asarray(scale, dtype=np.float64)
    return c + rng.standard_normal(c.shape) * (sigma * s)


@dataclass
class LossTerms:
    """The composite loss and the value of each of its parts."""

    total: Tensor
    prediction: float
    uncertainty: float
    magnitude: float
    orthogonality: float
    topology: float


def composite_loss(  # noqa: PLR0913
    y: ArrayLike,
    output: ModelOutput,
    c: np.ndarray,
    lambda1: float = 0.0,
    lambda2: float = 0.0,
    gamma: float = 0.0,
    lambda_sparse: float = 0.0,
) -> LossTerms:
    """``L_pred + gamma L_unc + lambda1 |C|^2 + lambda2 |C C^T - I|_F^2 + lambda_sparse mean(A)``.

    :param y: targets shaped like the forecast mean.
    :param c: the batch profile matrix, one row per sample. It is an input, so both profile
        terms shift the loss without contributing gradients.
    """
    forecast = output.forecast
    residual = tn.as_tensor(y) - forecast.mean
    prediction = tn.mean(residual * residual)
    total = prediction
    uncertainty = 0.0
    if gamma:
        unc = uncertainty_loss(y, forecast)
        uncertainty = unc.item()
        total = total + unc * gamma
    matrix = np.atleast_2d(np.asarray(c, dtype=np.float64))
    magnitude = float(np.sum(matrix * matrix))
    gram = matrix @ matrix.T - np.eye(len(matrix))
    orthogonality = float(np.sum(gram * gram))
    topology = tn.mean(output.adjacency.weights)
    total = total + topology * lambda_sparse + (lambda1 * magnitude + lambda2 * orthogonality)
    return LossTerms(
        total=total,
        prediction=prediction.item(),
        uncertainty=uncertainty,
        magnitude=magnitude,
        orthogonality=orthogonality,
        topology=topology.item(),
    )


def chaos_adaptive_lr(eta0: float, alpha: float, c: np.ndarray, scale: float = 1.0) -> float:
    """``eta0 * exp(-alpha * |C|_2) * scale`` where ``scale`` is the plateau scheduler state."""
    if eta0 <= 0:
        msg = f"Base learning rate must be positive, got {eta0}."
        raise ValueError(msg)
    return float(eta0 * np.exp(-alpha * np.linalg.norm(c)) * scale)


def clip_gradients(registry: ParamRegistry, tau: float) -> float:
    """Scale all gradients so their global norm is at most ``tau``; returns the norm before."""
    norm = registry.grad_norm()
    if norm > tau > 0:
        factor = tau / norm
        for tensor in registry.tensors():
            if tensor.grad is not None:
                tensor.grad = tensor.grad * factor
    return norm


class AdamW:
    """Adam with decoupled weight decay. One step mutates the registry under a lock."""

    def __init__(
        self,
        registry: ParamRegistry,
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ) -> None:
        self.registry = registry
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self._m = {name: np.zeros_like(t.data) for name, t in registry.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in registry.items()}
        self._lock = threading.Lock()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        beta1, beta2 = self.betas
        with self._lock:
            self.steps += 1
            correction1 = 1.0 - beta1**self.steps
            correction2 = 1.0 - beta2**self.steps
            for name, tensor in self.registry.items():
                grad = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad
                self._m[name] = beta1 * self._m[name] + (1.0 - beta1) * grad
                self._v[name] = beta2 * self._v[name] + (1.0 - beta2) * grad * grad
                update = (self._m[name] / correction1) / (
                    np.sqrt(self._v[name] / correction2) + self.eps
                )
                tensor.data = tensor.data * (1.0 - lr * self.weight_decay) - lr * update


def sgd_step(registry: ParamRegistry, lr: float) -> None:
    for tensor in registry.tensors():
        if tensor.grad is not None:
            tensor.data = tensor.data - lr * tensor.grad


@dataclass
class AdjacencyFit:
    adjacency: LearnedAdjacency
    losses: list[float]
    mean_abs_error: float


def fit_adjacency(  # noqa: PLR0913
    target: np.ndarray,
    steps: int = 2000,
    lr: float = 0.05,
    embed_dim: int = 8,
    seed: int = 0,
    tolerance: float = 0.0,
) -> AdjacencyFit:
    """Fit free node embeddings and the pair scorer so the learned adjacency matches ``target``.

    Every off-diagonal pair is kept (``k = N - 1``) and the profile is zero. Stops early once
    the mean absolute off-diagonal error falls to ``tolerance``.

    :param target: symmetric ``(N, N)`` edge weights in ``(0, 1)``; the diagonal is ignored.
    """
    target = np.asarray(target, dtype=np.float64)
    n = target.shape[0]
    if target.shape != (n, n) or n < 2:  # noqa: PLR2004
        msg = f"fit_adjacency: expected a square target with at least 2 nodes, got {target.shape}"
        raise ValueError(msg)
    rng = np.random.default_rng(seed)
    registry = ParamRegistry()
    embeddings = registry.add("nodes", rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (n, embed_dim)))
    scorer = GraphWeights.init(registry, "graph", embed_dim, embed_dim, embed_dim, rng)
    optimizer = AdamW(registry, lr=lr)
    profile = np.zeros(PROFILE_DIM)
    off_diagonal = ~np.eye(n, dtype=bool)
    pairs = off_diagonal.astype(np.float64)

    def error(adjacency: LearnedAdjacency) -> float:
        return float(np.abs(adjacency.weights.data - target)[off_diagonal].mean())

    losses: list[float] = []
    for _ in range(steps):
        adjacency = build_adjacency(embeddings, profile, n - 1, scorer)
        if error(adjacency) <= tolerance:
            break
        residual = (adjacency.dense - target) * pairs
        loss = tn.sum(residual * residual) * (1.0 / float(pairs.sum()))
        registry.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(loss.item())
    adjacency = build_adjacency(embeddings, profile, n - 1, scorer)
    return AdjacencyFit(adjacency=adjacency, losses=losses, mean_abs_error=error(adjacency))


class PlateauScheduler:
    """Multiply the learning-rate scale by ``factor`` once validation stalls ``patience`` epochs."""

    def __init__(self, factor: float = 0.7, patience: int = 8, min_delta: float = 0.0) -> None:
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.scale = 1.0
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> float:
        if metric < self.best - self.min_delta:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.scale *= self.factor
                self.bad_epochs = 0
        return self.scale


class EarlyStopping:
    """Signal a stop after ``patience`` consecutive epochs without a ``min_delta`` improvement."""

    def __init__(self, patience: int = 15, min_delta: float = 1e-5) -> None:
        self.patience = patience
        self.min_delta = min_delta
        self.best = np.inf
        self.best_epoch = -1
        self.bad_epochs = 0
        self._epoch = -1

    @property
    def improved(self) -> bool:
        return self.best_epoch == self._epoch

    def step(self, metric: float) -> bool:
        self._epoch += 1
        if metric < self.best - self.min_delta:
            self.best = metric
            self.best_epoch = self._epoch
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def stack_windows(
    windows: Sequence[SeriesWindow],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Histories ``(B, T, N, F)``, targets ``(B, N, H)`` and raw profiles ``(B, 20)``."""
    x = np.stack([w.x for w in windows])
    y = np.stack([w.y.T for w in windows])
    profiles = np.stack(
        [np.zeros(PROFILE_DIM) if w.profile is None else w.profile for w in windows]
    )
    return x, y, profiles


@dataclass
class LossSettings:
    lambda1: float = 0.0
    lambda2: float = 0.0
    gamma: float = 1.0
    lambda_sparse: float = 0.0

    @classmethod
    def from_config(cls, config: TrainConfig) -> LossSettings:
        return cls(config.lambda1, config.lambda2, config.gamma, config.lambda_sparse)


def batch_loss(
    model: ChaosForecaster,
    windows: Sequence[SeriesWindow],
    settings: LossSettings,
    profiles: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> LossTerms:
    """Composite loss of one batch; ``rng`` switches on dropout, ``profiles`` overrides them."""
    x, y, raw = stack_windows(windows)
    raw = raw if profiles is None else profiles
    output = model.forward(x, raw, rng)
    return composite_loss(
        y,
        output,
        model.scaled_profiles(raw),
        settings.lambda1,
        settings.lambda2,
        settings.gamma,
        settings.lambda_sparse,
    )


def _check_finite(terms: LossTerms, model: ChaosForecaster, where: Mapping[str, object]) -> None:
    value = terms.total.item()
    if np.isfinite(value):
        return
    state = {
        **where,
        "loss": value,
        "prediction": terms.prediction,
        "uncertainty": terms.uncertainty,
        "grad_norm": model.params.grad_norm(),
        "param_norms": {
            name: float(np.linalg.norm(t.data)) for name, t in model.params.items()
        },
    }
    LOGGER.error("Non-finite loss: %s", {k: v for k, v in state.items() if k != "param_norms"})
    msg = f"Loss became {value} at {dict(where)}."
    raise NonFiniteLossError(msg, state)


def mean_loss(
    model: ChaosForecaster, windows: Sequence[SeriesWindow], settings: LossSettings, batch: int
) -> float:
    """Window-weighted mean composite loss without noise or dropout."""
    total = 0.0
    for start in range(0, len(windows), batch):
        chunk = windows[start : start + batch]
        total += batch_loss(model, chunk, settings).total.item() * len(chunk)
    return total / len(windows)


def forecast_windows(
    model: ChaosForecaster, windows: Sequence[SeriesWindow], batch: int = 64
) -> ForecastWithUncertainty:
    """Batched inference; every returned tensor has a leading window axis."""
    parts = []
    for start in range(0, len(windows), batch):
        x, _, profiles = stack_windows(windows[start : start + batch])
        parts.append(model.forward(x, profiles).forecast)

    def join(pick: list[Tensor]) -> Tensor:
        return Tensor(np.concatenate([p.data for p in pick]))

    return ForecastWithUncertainty(
        mean=join([p.mean for p in parts]),
        variance=join([p.variance for p in parts]),
        weights=join([p.weights for p in parts]),
        head_means=[join([p.head_means[h] for p in parts]) for h in range(3)],
        head_variances=[join([p.head_variances[h] for p in parts]) for h in range(3)],
    )


def evaluate_windows(model: ChaosForecaster, windows: Sequence[SeriesWindow]) -> ForecastMetrics:
    forecast = forecast_windows(model, windows)
    return evaluate(np.stack([w.y.T for w in windows]), forecast.mean)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    cache_hit_rate: float


@dataclass
class FitResult:
    model: ChaosForecaster
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False


def split_windows(
    windows: Sequence[SeriesWindow], val_fraction: float
) -> tuple[list[SeriesWindow], list[SeriesWindow]]:
    """Chronological split; both parts hold at least one window."""
    if len(windows) < 2:  # noqa: PLR2004
        msg = f"Need at least 2 windows to train, got {len(windows)}."
        raise ValueError(msg)
    n_val = min(len(windows) - 1, max(1, round(len(windows) * val_fraction)))
    return list(windows[:-n_val]), list(windows[-n_val:])


def prepare_windows(
    windows: Sequence[SeriesWindow], config: TrainConfig, cache: ChaosCache | None = None
) -> tuple[list[SeriesWindow], ChaosCache]:
    """Attach profiles to every window, creating the cache when none is given."""
    if cache is None:
        threshold = config.cache_threshold
        if threshold is None:
            threshold = default_cache_threshold(windows)
        cache = ChaosCache(threshold, config.cache_capacity)
    return attach_profiles(windows, cache, config.workers), cache


def build_model(
    windows: Sequence[SeriesWindow],
    config: TrainConfig,
    seed: int,
    coords: np.ndarray | None = None,
) -> ChaosForecaster:
    """Fresh model whose profile scaler is fitted on the windows' profiles."""
    _, _, profiles = stack_windows(windows)
    return ChaosForecaster(
        config.model_config(windows[0].x.shape[-1]),
        seed=seed,
        coords=coords,
        scaler=ProfileScaler.fit(profiles),
    )


def fit(  # noqa: PLR0913
    windows: Sequence[SeriesWindow],
    config: TrainConfig,
    seed: int = 0,
    model: ChaosForecaster | None = None,
    coords: np.ndarray | None = None,
    lr: float | None = None,
    epochs: int | None = None,
    cache: ChaosCache | None = None,
) -> FitResult:
    """Train on one city's windows with the chaos-aware loop and early stopping.

    Windows without a profile get one through the chaos cache. The best validation
    parameters are restored at the end.

    :param lr: base learning rate (default ``config.source_lr``).
    :param epochs: number of epochs (default ``config.epochs``).
    :raises NonFiniteLossError: when a batch loss is NaN or infinite.
    """
    windows, cache = prepare_windows(windows, config, cache)
    train, val = split_windows(windows, config.val_fraction)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if model is None:
        model = build_model(train, config, seed, coords)
    settings = LossSettings.from_config(config)
    base_lr = config.source_lr if lr is None else lr
    epochs = config.epochs if epochs is None else epochs
    optimizer = AdamW(model.params, base_lr, weight_decay=config.weight_decay)
    scheduler = PlateauScheduler(config.plateau_factor, config.plateau_patience, config.min_delta)
    stopper = EarlyStopping(config.early_stop_patience, config.min_delta)
    stats = RunningStats()
    result = FitResult(model=model)
    best = model.params.snapshot()
    log = LOGGER.info if config.verbose else LOGGER.debug

    for epoch in range(epochs):
        order = rng.permutation(len(train))
        total, lr_used = 0.0, base_lr
        for batch_index, start in enumerate(range(0, len(train), config.batch_size)):
            batch = [train[i] for i in order[start : start + config.batch_size]]
            _, _, raw = stack_windows(batch)
            stats.update(raw)
            noisy = inject_noise(raw, config.noise_sigma, stats.std, rng)
            model.params.zero_grad()
            terms = batch_loss(model, batch, settings, noisy, rng)
            _check_finite(terms, model, {"epoch": epoch, "batch": batch_index})
            terms.total.backward()
            clip_gradients(model.params, config.clip_tau)
            lr_used = chaos_adaptive_lr(
                base_lr,
                config.lr_alpha,
                model.scaled_profiles(noisy).mean(axis=0),
                scheduler.scale,
            )
            optimizer.step(lr_used)
            total += terms.total.item() * len(batch)

        val_loss = mean_loss(model, val, settings, config.batch_size)
        record = EpochRecord(epoch, total / len(train), val_loss, lr_used, cache.hit_rate)
        result.history.append(record)
        log(
            "epoch %d: train %.6f, val %.6f, lr %.3g, cache hit rate %.2f",
            epoch,
            record.train_loss,
            val_loss,
            lr_used,
            cache.hit_rate,
        )
        scheduler.step(val_loss)
        stop = stopper.step(val_loss)
        if stopper.improved:
            best = model.params.snapshot()
            result.best_epoch = epoch
        if stop:
            result.stopped_early = True
            LOGGER.info("Early stopping after epoch %d (best epoch %d).", epoch, result.best_epoch)
            break
    model.params.load(best)
    return result


@dataclass
class Episode:
    """Disjoint support and query windows drawn from one city."""

    support: list[SeriesWindow]
    query: list[SeriesWindow]
    city: str = ""


def make_episodes(  # noqa: PLR0913
    windows: Sequence[SeriesWindow],
    n_episodes: int,
    rng: np.random.Generator,
    support_size: int = 8,
    query_size: int = 12,
    city: str = "",
) -> list[Episode]:
    need = support_size + query_size
    if len(windows) < need:
        msg = f"An episode needs {need} windows, city '{city}' has {len(windows)}."
        raise ValueError(msg)
    episodes = []
    for _ in range(n_episodes):
        picked = rng.choice(len(windows), size=need, replace=False)
        episodes.append(
            Episode(
                support=[windows[i] for i in picked[:support_size]],
                query=[windows[i] for i in picked[support_size:]],
                city=city,
            )
        )
    return episodes


def meta_step(
    model: ChaosForecaster,
    episode: Episode,
    config: TrainConfig,
    optimizer: AdamW,
) -> float:
    """First-order meta update: adapt on the support set, apply the query gradient to the start.

    :returns: the query loss at the adapted parameters.
    """
    settings = LossSettings.from_config(config)
    start = model.params.snapshot()
    for _ in range(config.n_inner):
        model.params.zero_grad()
        batch_loss(model, episode.support, settings).total.backward()
        clip_gradients(model.params, config.clip_tau)
        sgd_step(model.params, config.inner_lr)
    model.params.zero_grad()
    terms = batch_loss(model, episode.query, settings)
    _check_finite(terms, model, {"city": episode.city, "stage": "query"})
    terms.total.backward()
    model.params.load(start)
    clip_gradients(model.params, config.clip_tau)
    optimizer.step(config.outer_lr)
    return terms.total.item()


def meta_train(
    cities: Mapping[str, Sequence[SeriesWindow]],
    config: TrainConfig,
    model: ChaosForecaster,
    seed: int = 0,
    episodes_per_city: int = 4,
) -> list[float]:
    """Episodic source-city stage; returns the mean query loss of every meta-epoch."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    optimizer = AdamW(model.params, config.outer_lr, weight_decay=config.weight_decay)
    history = []
    for epoch in range(config.meta_epochs):
        episodes = [
            episode
            for name in sorted(cities)
            for episode in make_episodes(
                cities[name],
                episodes_per_city,
                rng,
                config.support_size,
                config.query_size,
                name,
            )
        ]
        order = rng.permutation(len(episodes))
        losses = [meta_step(model, episodes[i], config, optimizer) for i in order]
        history.append(float(np.mean(losses)))
        LOGGER.info("meta-epoch %d: query loss %.6f", epoch, history[-1])
    return history


def adapt(
    model: ChaosForecaster, support: Sequence[SeriesWindow], config: TrainConfig, steps: int
) -> None:
    """Plain gradient steps on a support set at the inner learning rate."""
    settings = LossSettings.from_config(config)
    for _ in range(steps):
        model.params.zero_grad()
        batch_loss(model, support, settings).total.backward()
        clip_gradients(model.params, config.clip_tau)
        sgd_step(model.params, config.inner_lr)


def transfer(  # noqa: PLR0913
    sources: Mapping[str, Sequence[SeriesWindow]],
    target: Sequence[SeriesWindow],
    config: TrainConfig,
    seed: int = 0,
    coords: np.ndarray | None = None,
    cache: ChaosCache | None = None,
) -> FitResult:
    """Two-stage training: meta-learning on the source cities, then fine-tuning on the target.

    Without sources this is a single :func:`fit` at the source learning rate. The profile
    scaler sees the source windows and the target training partition, never the target
    validation windows.
    """
    every = [w for windows in sources.values() for w in windows] + list(target)
    prepared, cache = prepare_windows(every, config, cache)
    offset = 0
    prepared_sources = {}
    for name, windows in sources.items():
        prepared_sources[name] = prepared[offset : offset + len(windows)]
        offset += len(windows)
    prepared_target = prepared[offset:]

    if not prepared_sources:
        return fit(prepared_target, config, seed, coords=coords, cache=cache)
    target_train, _ = split_windows(prepared_target, config.val_fraction)
    seen = [w for windows in prepared_sources.values() for w in windows] + target_train
    model = build_model(seen, config, seed, coords)
    meta_train(prepared_sources, config, model, seed)
    return fit(
        prepared_target,
        config,
        seed,
        model=model,
        lr=config.target_lr,
        epochs=config.target_epochs,
        cache=cache,
    )


def history_frame(history: Sequence[EpochRecord]) -> pd.DataFrame:
    return pd.DataFrame(
        [[getattr(r, c) for c in HISTORY_COLUMNS] for r in history], columns=list(HISTORY_COLUMNS)
    )


def write_history(history: Sequence[EpochRecord], path: str | Path) -> None:
    """Write the per-epoch history as CSV with a fixed number format."""
    history_frame(history).to_csv(path, index=False, float_format="%.12g", lineterminator="\n")
