"""Parallel multi-scale temporal encoder.

Four LSTM branches read the series at pooling factors 1, 2, 4 and 8. Their hidden states are
brought back to the full length by cubic-spline upsampling, concatenated, projected and
finally passed through a stack of chaos-aware transformer blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from . import _tensor as tn
from ._attention import AttentionWeights, chaos_attention
from ._errors import ShapeMismatchError
from ._tensor import ArrayLike, ParamRegistry, Tensor

FACTORS = (1, 2, 4, 8)


@dataclass(frozen=True)
class MultiScaleConfig:
    factors: tuple[int, ...] = FACTORS
    hidden: int = 16
    seq_len: int = 12
    layers: int = 2
    heads: int = 8
    ff_multiplier: int = 4

    def __post_init__(self) -> None:
        if tuple(self.factors) != FACTORS:
            msg = f"Pooling factors are fixed to {FACTORS}, got {self.factors}."
            raise ValueError(msg)
        if self.hidden < 1 or self.seq_len < 1 or self.layers < 0:
            msg = "hidden and seq_len must be positive and layers non-negative."
            raise ValueError(msg)


def pooling_matrix(length: int, k: int) -> np.ndarray:
    """``(ceil(length/k), length)`` operator averaging non-overlapping windows of ``k`` steps."""
    rows = -(-length // k)
    matrix = np.zeros((rows, length))
    for row in range(rows):
        start, stop = row * k, min((row + 1) * k, length)
        matrix[row, start:stop] = 1.0 / (stop - start)
    return matrix


def pooling_centres(length: int, k: int) -> np.ndarray:
    """Time position of each pooled sample: the centre of its (possibly ragged) window."""
    starts = np.arange(0, length, k, dtype=np.float64)
    stops = np.minimum(starts + k, length)
    return 0.5 * (starts + stops - 1.0)


def downsample(x: ArrayLike, k: int) -> Tensor:
    """Mean-pool ``(..., T, d)`` over windows of ``k`` steps; a ragged tail is averaged as is."""
    if k not in FACTORS:
        msg = f"Pooling factor must be one of {FACTORS}, got {k}."
        raise ValueError(msg)
    x = tn.as_tensor(x)
    if k == 1:
        return x
    return tn.matmul(pooling_matrix(x.shape[-2], k), x)


def spline_matrix(
    length: int,
    target_len: int,
    knots: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> np.ndarray:
    """Linear operator ``(target_len, length)`` of not-a-knot cubic spline interpolation.

    :param knots: positions of the ``length`` input samples (default ``0..length-1``).
    :param targets: evaluation positions (default evenly spaced from first to last knot).
    """
    if length == 1:
        return np.ones((target_len, 1))
    knots = np.arange(length, dtype=np.float64) if knots is None else np.asarray(knots, float)
    if targets is None:
        targets = np.linspace(knots[0], knots[-1], target_len)
    return CubicSpline(knots, np.eye(length), axis=0)(targets)


def spline_upsample(
    y: ArrayLike,
    target_len: int,
    knots: np.ndarray | None = None,
    targets: np.ndarray | None = None,
) -> Tensor:
    """Interpolate ``(..., L, d)`` to ``(..., target_len, d)`` with a cubic spline.

    Polynomials up to degree three are reproduced exactly and the end samples are kept when
    the targets span the knots. A single sample is repeated.
    """
    y = tn.as_tensor(y)
    return tn.matmul(spline_matrix(y.shape[-2], target_len, knots, targets), y)


@dataclass
class RecurrentCellState:
    h: Tensor
    c: Tensor


@dataclass
class LSTMWeights:
    """Input ``(d_in, 4h)``, recurrent ``(h, 4h)`` and bias ``(4h,)`` weights.

    Gates are stacked in input, forget, cell, output order.
    """

    w_x: Tensor
    w_h: Tensor
    b: Tensor

    @property
    def hidden(self) -> int:
        return self.w_h.shape[0]

    @classmethod
    def init(
        cls,
        registry: ParamRegistry,
        prefix: str,
        d_in: int,
        hidden: int,
        rng: np.random.Generator,
    ) -> LSTMWeights:
        bound = 1.0 / np.sqrt(hidden)
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        return cls(
            w_x=registry.add(f"{prefix}.w_x", rng.uniform(-bound, bound, (d_in, 4 * hidden))),
            w_h=registry.add(f"{prefix}.w_h", rng.uniform(-bound, bound, (hidden, 4 * hidden))),
            b=registry.add(f"{prefix}.b", bias),
        )


def lstm_cell(x_t: ArrayLike, state: RecurrentCellState, w: LSTMWeights) -> RecurrentCellState:
    n = w.hidden
    z = tn.matmul(x_t, w.w_x) + tn.matmul(state.h, w.w_h) + w.b
    i = tn.sigmoid(z[..., :n])
    f = tn.sigmoid(z[..., n : 2 * n])
    g = tn.tanh(z[..., 2 * n : 3 * n])
    o = tn.sigmoid(z[..., 3 * n :])
    c = f * state.c + i * g
    return RecurrentCellState(h=o * tn.tanh(c), c=c)


def lstm_encode(
    x: ArrayLike, w: LSTMWeights, state: RecurrentCellState | None = None
) -> Tensor:
    """Run the LSTM over ``(..., T, d_in)`` and return the ``(..., T, h)`` hidden states."""
    x = tn.as_tensor(x)
    if x.shape[-1] != w.w_x.shape[0]:
        msg = f"lstm_encode: input {x.shape} does not match input weights {w.w_x.shape}"
        raise ShapeMismatchError(msg)
    if state is None:
        zeros = Tensor(np.zeros((*x.shape[:-2], w.hidden)))
        state = RecurrentCellState(zeros, zeros)
    hiddens = []
    for t in range(x.shape[-2]):
        state = lstm_cell(x[..., t, :], state, w)
        hiddens.append(state.h)
    return tn.stack(hiddens, axis=-2)


def fuse_scales(branches: Sequence[ArrayLike], w_p: ArrayLike) -> Tensor:
    """Concatenate the upsampled branches channel-wise and project ``(4h) -> h``."""
    parts = [tn.as_tensor(b) for b in branches]
    if len({p.shape for p in parts}) != 1:
        shapes = ", ".join(str(p.shape) for p in parts)
        msg = f"fuse_scales: branch shapes differ: {shapes}"
        raise ShapeMismatchError(msg)
    return tn.matmul(tn.concat(parts, axis=-1), w_p)


@dataclass
class TransformerBlockWeights:
    attention: AttentionWeights
    w_ff1: Tensor
    b_ff1: Tensor
    w_ff2: Tensor
    b_ff2: Tensor

    @classmethod
    def init(
        cls,
        registry: ParamRegistry,
        prefix: str,
        config: MultiScaleConfig,
        rng: np.random.Generator,
    ) -> TransformerBlockWeights:
        d, width = config.hidden, config.ff_multiplier * config.hidden
        return cls(
            attention=AttentionWeights.init(
                registry, f"{prefix}.attn", d, config.seq_len, config.heads, rng
            ),
            w_ff1=registry.add(f"{prefix}.w_ff1", rng.normal(0.0, 1.0 / np.sqrt(d), (d, width))),
            b_ff1=registry.add(f"{prefix}.b_ff1", np.zeros(width)),
            w_ff2=registry.add(
                f"{prefix}.w_ff2", rng.normal(0.0, 1.0 / np.sqrt(width), (width, d))
            ),
            b_ff2=registry.add(f"{prefix}.b_ff2", np.zeros(d)),
        )


def transformer_block(
    h: ArrayLike,
    c: ArrayLike,
    w: TransformerBlockWeights,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm block: chaos attention (residual inside), then a residual ReLU feed-forward."""
    attended = tn.layer_norm(chaos_attention(h, c, w.attention, dropout, rng).output)
    hidden = tn.relu(tn.matmul(attended, w.w_ff1) + w.b_ff1)
    return tn.layer_norm(attended + tn.matmul(hidden, w.w_ff2) + w.b_ff2)


@dataclass
class EncoderWeights:
    config: MultiScaleConfig
    branches: list[LSTMWeights]
    w_p: Tensor
    blocks: list[TransformerBlockWeights] = field(default_factory=list)

    @classmethod
    def init(
        cls,
        registry: ParamRegistry,
        prefix: str,
        d_in: int,
        config: MultiScaleConfig,
        rng: np.random.Generator,
    ) -> EncoderWeights:
        branches = [
            LSTMWeights.init(registry, f"{prefix}.lstm{k}", d_in, config.hidden, rng)
            for k in config.factors
        ]
        fan_in = len(config.factors) * config.hidden
        w_p = registry.add(
            f"{prefix}.w_p", rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, config.hidden))
        )
        blocks = [
            TransformerBlockWeights.init(registry, f"{prefix}.block{i}", config, rng)
            for i in range(config.layers)
        ]
        return cls(config, branches, w_p, blocks)


def encode_branches(x: ArrayLike, w: EncoderWeights) -> list[Tensor]:
    """Per-factor hidden states before upsampling, one ``(..., ceil(T/k), h)`` per factor."""
    x = tn.as_tensor(x)
    return [
        lstm_encode(downsample(x, k), branch) for k, branch in zip(w.config.factors, w.branches)
    ]


def upsample_branches(branches: Sequence[Tensor], length: int) -> list[Tensor]:
    """Bring each branch back to ``length`` steps, interpolating through window centres."""
    out = []
    targets = np.arange(length, dtype=np.float64)
    for k, branch in zip(FACTORS, branches):
        if k == 1:
            out.append(branch)
        else:
            out.append(spline_upsample(branch, length, pooling_centres(length, k), targets))
    return out


def encode(
    x: ArrayLike,
    c: ArrayLike,
    w: EncoderWeights,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Encode ``(..., T, d_in)`` into ``(..., T, h)`` conditioned on the profile ``c``.

    With no transformer blocks the fused multi-scale representation is returned.
    """
    x = tn.as_tensor(x)
    length = x.shape[-2]
    h = fuse_scales(upsample_branches(encode_branches(x, w), length), w.w_p)
    for block in w.blocks:
        h = transformer_block(h, c, block, dropout, rng)
    return h


def branch_energies(x: ArrayLike, w: EncoderWeights) -> dict[int, float]:
    """Mean squared activation of each branch before fusion, keyed by pooling factor."""
    return {
        k: float(np.mean(branch.data**2))
        for k, branch in zip(w.config.factors, encode_branches(x, w))
    }
