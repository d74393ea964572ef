"""Multi-horizon heads, chaos-dependent fusion, Gaussian likelihood and calibration metrics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy import stats

from . import _tensor as tn
from ._errors import NonPositiveVarianceError, ShapeMismatchError
from ._tensor import ArrayLike, ParamRegistry, Tensor

PROFILE_DIM = 20
HEAD_TAGS = ("s", "m", "l")
LOGVAR_BOUND = 10.0
OWN_HORIZON_WEIGHT = 2.0


def horizon_segments(horizon: int) -> list[slice]:
    """Leading, middle and trailing thirds of ``horizon`` steps (the first is ``ceil(H/3)``)."""
    bounds = np.cumsum([0] + [len(part) for part in np.array_split(np.arange(horizon), 3)])
    return [slice(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:])]


def head_weighting(horizon: int, head: int) -> np.ndarray:
    """Per-step loss weights of one head: doubled on its own third of the horizon."""
    weights = np.ones(horizon)
    weights[horizon_segments(horizon)[head]] = OWN_HORIZON_WEIGHT
    return weights


@dataclass
class HorizonHead:
    tag: str
    w_mean: Tensor
    b_mean: Tensor
    w_logvar: Tensor
    b_logvar: Tensor


@dataclass
class ForecastWeights:
    heads: list[HorizonHead]
    w_omega: Tensor
    b_omega: Tensor

    @property
    def horizon(self) -> int:
        return self.heads[0].w_mean.shape[1]

    @classmethod
    def init(
        cls,
        registry: ParamRegistry,
        prefix: str,
        d_z: int,
        horizon: int,
        rng: np.random.Generator,
    ) -> ForecastWeights:
        fan_in = d_z + PROFILE_DIM
        scale = 1.0 / np.sqrt(fan_in)
        heads = [
            HorizonHead(
                tag=tag,
                w_mean=registry.add(
                    f"{prefix}.{tag}.w_mean", rng.normal(0.0, scale, (fan_in, horizon))
                ),
                b_mean=registry.add(f"{prefix}.{tag}.b_mean", np.zeros(horizon)),
                w_logvar=registry.add(
                    f"{prefix}.{tag}.w_logvar", rng.normal(0.0, 0.1 * scale, (fan_in, horizon))
                ),
                b_logvar=registry.add(f"{prefix}.{tag}.b_logvar", np.zeros(horizon)),
            )
            for tag in HEAD_TAGS
        ]
        return cls(
            heads=heads,
            w_omega=registry.add(f"{prefix}.w_omega", np.zeros((len(HEAD_TAGS), PROFILE_DIM))),
            b_omega=registry.add(f"{prefix}.b_omega", np.zeros(len(HEAD_TAGS))),
        )


@dataclass
class ForecastWithUncertainty:
    """Fused ``(..., N, H)`` means and variances, the fusion weights and every head's output."""

    mean: Tensor
    variance: Tensor
    weights: Tensor
    head_means: list[Tensor]
    head_variances: list[Tensor]


def fusion_weights(c: ArrayLike, w_omega: ArrayLike, b_omega: ArrayLike) -> Tensor:
    """``softmax(W_omega C + b_omega)`` over the three heads."""
    return tn.softmax(tn.matmul(c, tn.transpose(w_omega)) + b_omega, axis=-1)


def predict(z: ArrayLike, c: ArrayLike, w: ForecastWeights) -> ForecastWithUncertainty:
    """Run every horizon head on ``[Z || C]`` and fuse them with the chaos-dependent weights.

    :param z: node representations ``(..., N, d_z)``.
    :param c: profiles ``(..., 20)``.
    """
    z, c = tn.as_tensor(z), tn.as_tensor(c)
    fan_in = w.heads[0].w_mean.shape[0]
    if z.shape[-1] + c.shape[-1] != fan_in:
        msg = f"predict: features {z.shape} and profile {c.shape} do not match heads ({fan_in})"
        raise ShapeMismatchError(msg)
    lead = c.shape[:-1]
    tiled = tn.broadcast_to(tn.reshape(c, (*lead, 1, c.shape[-1])), (*z.shape[:-1], c.shape[-1]))
    features = tn.concat([z, tiled], axis=-1)

    omega = fusion_weights(c, w.w_omega, w.b_omega)
    means, variances, shares = [], [], []
    for index, head in enumerate(w.heads):
        logvar = tn.matmul(features, head.w_logvar) + head.b_logvar
        means.append(tn.matmul(features, head.w_mean) + head.b_mean)
        variances.append(tn.exp(tn.clip(logvar, -LOGVAR_BOUND, LOGVAR_BOUND)))
        shares.append(tn.reshape(omega[..., index], (*lead, 1, 1)))
    fused_mean = reduce(tn.add, [s * m for s, m in zip(shares, means)])
    fused_var = reduce(tn.add, [s * v for s, v in zip(shares, variances)])
    return ForecastWithUncertainty(fused_mean, fused_var, omega, means, variances)


def gaussian_nll(
    y: ArrayLike,
    y_hat: ArrayLike,
    variance: ArrayLike,
    weights: np.ndarray | None = None,
) -> Tensor:
    """Mean of ``0.5 log(2 pi var) + (y - y_hat)^2 / (2 var)``.

    :param weights: optional per-element weights broadcast against ``y``; the mean is then
        the weighted mean.
    """
    y, y_hat, variance = tn.as_tensor(y), tn.as_tensor(y_hat), tn.as_tensor(variance)
    if np.any(variance.data <= 0):
        msg = "Gaussian likelihood needs strictly positive variances."
        raise NonPositiveVarianceError(msg)
    residual = y - y_hat
    terms = 0.5 * tn.log(variance * (2.0 * np.pi)) + residual * residual / (variance * 2.0)
    if weights is None:
        return tn.mean(terms)
    full = np.broadcast_to(np.asarray(weights, dtype=np.float64), terms.shape)
    return tn.sum(terms * full) * (1.0 / float(full.sum()))


def uncertainty_loss(y: ArrayLike, forecast: ForecastWithUncertainty) -> Tensor:
    """Fused NLL plus the mean of the head NLLs, each weighted towards its own horizon third."""
    horizon = forecast.mean.shape[-1]
    loss = gaussian_nll(y, forecast.mean, forecast.variance)
    heads = len(forecast.head_means)
    for index, (mean, variance) in enumerate(zip(forecast.head_means, forecast.head_variances)):
        weighted = gaussian_nll(y, mean, variance, head_weighting(horizon, index))
        loss = loss + weighted * (1.0 / heads)
    return loss


def z_score(alpha: float) -> float:
    """Two-sided standard normal quantile ``z_{alpha/2}``."""
    if not 0.0 < alpha < 1.0:
        msg = f"alpha must lie in (0, 1), got {alpha}."
        raise ValueError(msg)
    return float(stats.norm.ppf(1.0 - alpha / 2.0))


def interval(
    forecast: ForecastWithUncertainty, alpha: float, scale: float = 1.0
) -> tuple[np.ndarray, np.ndarray]:
    """Central ``1 - alpha`` prediction interval, widened by ``scale``."""
    half = scale * z_score(alpha) * np.sqrt(forecast.variance.data)
    return forecast.mean.data - half, forecast.mean.data + half


def coverage(
    y: ArrayLike, forecast: ForecastWithUncertainty, alpha: float, scale: float = 1.0
) -> float:
    """Fraction of targets inside ``mean +/- scale * z_{alpha/2} * sigma``."""
    target = tn.as_tensor(y).data
    low, high = interval(forecast, alpha, scale)
    return float(np.mean((target >= low) & (target <= high)))


@dataclass(frozen=True)
class ForecastMetrics:
    """Point-forecast errors; ``mape`` is in percent over targets with ``|y| > eps``."""

    mae: float
    rmse: float
    mape: float


def evaluate(y: ArrayLike, y_hat: ArrayLike, eps: float = 1e-8) -> ForecastMetrics:
    target, prediction = tn.as_tensor(y).data, tn.as_tensor(y_hat).data
    if target.shape != prediction.shape:
        msg = f"evaluate: targets {target.shape} and predictions {prediction.shape} differ"
        raise ShapeMismatchError(msg)
    error = prediction - target
    valid = np.abs(target) > eps
    mape = float(np.mean(np.abs(error[valid] / target[valid])) * 100.0) if valid.any() else 0.0
    return ForecastMetrics(
        mae=float(np.mean(np.abs(error))),
        rmse=float(np.sqrt(np.mean(error * error))),
        mape=mape,
    )
