"""Chaos-aware multi-head attention and the constructive attention-pattern check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _tensor as tn
from ._errors import RankDeficientError, ShapeMismatchError
from ._tensor import ArrayLike, ParamRegistry, Tensor

PROFILE_DIM = 20
# sigmoid(GATE_SATURATION**2) is 1.0 in float64
GATE_SATURATION = 40.0


@dataclass
class AttentionWeights:
    """Parameters of one chaos-aware attention layer.

    ``w_base`` is the ``(d, 3d)`` QKV projection, ``w_cond`` the ``(3d, 20)`` FiLM
    conditioner, ``w_g`` and ``w_b`` the ``(T, 20)`` gate and bias maps, ``w_o`` the
    ``(d, d)`` output projection.
    """

    w_base: Tensor
    w_cond: Tensor
    w_g: Tensor
    w_b: Tensor
    w_o: Tensor
    heads: int = 8

    @property
    def dim(self) -> int:
        return self.w_base.shape[0]

    @property
    def seq_len(self) -> int:
        return self.w_g.shape[0]

    @classmethod
    def init(  # noqa: PLR0913
        cls,
        registry: ParamRegistry,
        prefix: str,
        dim: int,
        seq_len: int,
        heads: int,
        rng: np.random.Generator,
    ) -> AttentionWeights:
        """Register freshly initialized parameters under ``prefix``."""
        if dim % heads:
            msg = f"Model width {dim} is not divisible by {heads} heads."
            raise ShapeMismatchError(msg)
        scale = 1.0 / np.sqrt(dim)
        return cls(
            w_base=registry.add(f"{prefix}.w_base", rng.normal(0.0, scale, (dim, 3 * dim))),
            w_cond=registry.add(f"{prefix}.w_cond", rng.normal(0.0, 0.01, (3 * dim, PROFILE_DIM))),
            w_g=registry.add(f"{prefix}.w_g", rng.normal(0.0, 0.1, (seq_len, PROFILE_DIM))),
            w_b=registry.add(f"{prefix}.w_b", np.zeros((seq_len, PROFILE_DIM))),
            w_o=registry.add(f"{prefix}.w_o", rng.normal(0.0, scale, (dim, dim))),
            heads=heads,
        )


@dataclass
class AttentionOutput:
    output: Tensor
    weights: Tensor


def _lead(c: Tensor) -> tuple[int, ...]:
    return c.shape[:-1]


def project_qkv(h: ArrayLike, c: ArrayLike, w: AttentionWeights) -> tuple[Tensor, Tensor, Tensor]:
    """Chaos-conditioned projection ``H W_base diag(1 + W_cond C)``.

    :param h: hidden states ``(..., T, d)``.
    :param c: profiles ``(..., 20)`` whose leading dimensions broadcast against ``h``'s.
    """
    h, c = tn.as_tensor(h), tn.as_tensor(c)
    d = w.dim
    if h.shape[-1] != d:
        msg = f"project_qkv: hidden states {h.shape} do not match projection {w.w_base.shape}"
        raise ShapeMismatchError(msg)
    modulation = tn.reshape(1.0 + tn.matmul(c, tn.transpose(w.w_cond)), (*_lead(c), 1, 3 * d))
    qkv = tn.matmul(h, w.w_base) * modulation
    return qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]


def gate_and_bias(c: ArrayLike, w: AttentionWeights, seq_len: int) -> tuple[Tensor, Tensor]:
    """Gate ``sigmoid(g g^T)`` and bias ``u 1^T + 1 u^T``, ``g = W_g C`` and ``u = W_b C``.

    :returns: ``(G, B)``, each ``(..., T, T)``.
    """
    c = tn.as_tensor(c)
    if w.w_g.shape[0] != seq_len:
        msg = f"gate_and_bias: gate map {w.w_g.shape} does not produce {seq_len} steps"
        raise ShapeMismatchError(msg)
    lead = _lead(c)
    g = tn.matmul(c, tn.transpose(w.w_g))
    u = tn.matmul(c, tn.transpose(w.w_b))
    gate = tn.sigmoid(
        tn.reshape(g, (*lead, seq_len, 1)) * tn.reshape(g, (*lead, 1, seq_len))
    )
    bias = tn.reshape(u, (*lead, seq_len, 1)) + tn.reshape(u, (*lead, 1, seq_len))
    return gate, bias


def attention_weights(q: Tensor, k: Tensor, gate: ArrayLike, bias: ArrayLike) -> Tensor:
    """``softmax((Q K^T / sqrt(d_k)) * G + B)`` over the last axis."""
    scores = tn.matmul(q, tn.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(q.shape[-1]))
    return tn.softmax(scores * gate + bias, axis=-1)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, t, d = x.shape
    return tn.swapaxes(tn.reshape(x, (*lead, t, heads, d // heads)), -2, -3)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, heads, t, dk = x.shape
    return tn.reshape(tn.swapaxes(x, -2, -3), (*lead, t, heads * dk))


def chaos_attention(
    h: ArrayLike,
    c: ArrayLike,
    w: AttentionWeights,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> AttentionOutput:
    """Multi-head attention whose projections, gate and bias depend on the chaos profile.

    :param h: hidden states ``(..., T, d)``.
    :param c: profiles ``(..., 20)``.
    :param dropout: rate applied to the attention weights when ``rng`` is given.
    :returns: ``concat_h(A_h V_h) W_o + H`` and the ``(..., heads, T, T)`` weights.
    """
    h, c = tn.as_tensor(h), tn.as_tensor(c)
    if h.shape[-1] % w.heads:
        msg = f"chaos_attention: width of {h.shape} is not divisible by {w.heads} heads"
        raise ShapeMismatchError(msg)
    t = h.shape[-2]
    q, k, v = (_split_heads(x, w.heads) for x in project_qkv(h, c, w))
    gate, bias = gate_and_bias(c, w, t)
    lead = _lead(c)
    weights = attention_weights(
        q, k, tn.reshape(gate, (*lead, 1, t, t)), tn.reshape(bias, (*lead, 1, t, t))
    )
    context = _merge_heads(tn.matmul(tn.dropout(weights, dropout, rng), v))
    return AttentionOutput(output=tn.matmul(context, w.w_o) + h, weights=weights)


@dataclass
class RealizedPattern:
    """Single-head parameters reproducing a target attention matrix.

    ``profile`` is the conditioning vector the gate and bias maps were built for.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_g: np.ndarray
    w_b: np.ndarray
    profile: np.ndarray
    achieved: np.ndarray
    error: float


def realize_target_pattern(
    a_star: np.ndarray, h: np.ndarray, d_k: int | None = None
) -> RealizedPattern:
    """Construct query/key maps, bias and a saturated gate whose attention equals ``a_star``.

    The row-centred target logits split into a part carried by the bias (the least-squares
    fit of the skew component by ``a 1^T - 1 a^T``) and a remainder factored by SVD into
    ``Q K^T``. The gate is saturated so that it multiplies the scores by one.

    :param a_star: ``(T, T)`` row-stochastic matrix with positive entries.
    :param h: ``(T, d)`` hidden states of full row rank.
    :param d_k: key width, at least ``T`` (default ``T``).
    :returns: the parameters and the achieved Frobenius error.
    """
    a_star = np.asarray(a_star, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    t = a_star.shape[0]
    d_k = t if d_k is None else d_k
    if a_star.shape != (t, t) or h.shape[0] != t:
        msg = f"realize_target_pattern: target {a_star.shape} and states {h.shape} disagree"
        raise ShapeMismatchError(msg)
    if d_k < t:
        msg = f"Key width {d_k} is smaller than the sequence length {t}."
        raise ValueError(msg)
    if np.any(a_star <= 0):
        msg = "Target attention entries must be positive."
        raise ValueError(msg)
    if np.linalg.matrix_rank(h) < t:
        msg = f"Hidden states of shape {h.shape} do not have full row rank."
        raise RankDeficientError(msg)

    logits = np.log(a_star)
    logits -= logits.mean(axis=1, keepdims=True)
    a = (0.5 * (logits - logits.T)).mean(axis=1)
    skew_fit = a[:, None] - a[None, :]
    u, s, vt = np.linalg.svd(logits - skew_fit)
    root = np.sqrt(s) * d_k**0.25
    q0 = np.zeros((t, d_k))
    k0 = np.zeros((t, d_k))
    q0[:, :t] = u * root
    k0[:, :t] = vt.T * root
    pinv = np.linalg.pinv(h)

    # u 1^T + 1 u^T with u = -a equals the skew fit up to a per-row constant.
    profile = np.zeros(PROFILE_DIM)
    profile[0] = 1.0
    w_g = np.zeros((t, PROFILE_DIM))
    w_g[:, 0] = GATE_SATURATION
    w_b = np.zeros((t, PROFILE_DIM))
    w_b[:, 0] = -a
    realized = RealizedPattern(pinv @ q0, pinv @ k0, w_g, w_b, profile, np.empty(0), 0.0)
    achieved = pattern_attention(h, realized)
    realized.achieved = achieved
    realized.error = float(np.linalg.norm(achieved - a_star))
    return realized


def pattern_attention(h: np.ndarray, pattern: RealizedPattern) -> np.ndarray:
    """Forward pass of the single-head attention described by ``pattern``."""
    t = h.shape[0]
    w = AttentionWeights(
        w_base=Tensor(np.zeros((1, 3))),
        w_cond=Tensor(np.zeros((3, PROFILE_DIM))),
        w_g=Tensor(pattern.w_g),
        w_b=Tensor(pattern.w_b),
        w_o=Tensor(np.zeros((1, 1))),
        heads=1,
    )
    gate, bias = gate_and_bias(pattern.profile, w, t)
    q = tn.matmul(h, pattern.w_q)
    k = tn.matmul(h, pattern.w_k)
    return attention_weights(q, k, gate, bias).numpy()
