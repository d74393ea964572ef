"""Adaptive graph topology: node embeddings, local/global refinement, learned adjacency, GCN."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import _tensor as tn
from ._errors import IsolatedNodeWarning, ShapeMismatchError
from ._tensor import ArrayLike, ParamRegistry, Tensor

PROFILE_DIM = 20
DEFAULT_MAX_NEIGHBOURS = 8
RADIUS_PERCENTILE = 30.0
_MASKED_LOGIT = -1e9


@dataclass
class GraphWeights:
    """Parameters of the graph module.

    ``w_n`` embeds the node states, ``w_c`` the profile; ``w_q``, ``w_k``, ``w_v`` form the
    single-head attention shared by the local and global passes; ``w_1a``, ``w_1b``,
    ``w_1c``, ``b_1``, ``w_2``, ``b_2`` are the pair scorer and ``w_z`` the convolution.
    """

    w_n: Tensor
    b_n: Tensor
    w_c: Tensor
    b_c: Tensor
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_1a: Tensor
    w_1b: Tensor
    w_1c: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    w_z: Tensor

    @property
    def embed_dim(self) -> int:
        return self.w_n.shape[1]

    @classmethod
    def init(  # noqa: PLR0913
        cls,
        registry: ParamRegistry,
        prefix: str,
        d_s: int,
        d_e: int,
        d_z: int,
        rng: np.random.Generator,
    ) -> GraphWeights:
        def normal(name: str, shape: tuple[int, ...]) -> Tensor:
            return registry.add(f"{prefix}.{name}", rng.normal(0.0, 1.0 / np.sqrt(shape[0]), shape))

        def zeros(name: str, shape: tuple[int, ...]) -> Tensor:
            return registry.add(f"{prefix}.{name}", np.zeros(shape))

        return cls(
            w_n=normal("w_n", (d_s, d_e)),
            b_n=zeros("b_n", (d_e,)),
            w_c=normal("w_c", (PROFILE_DIM, d_e)),
            b_c=zeros("b_c", (d_e,)),
            w_q=normal("w_q", (d_e, d_e)),
            w_k=normal("w_k", (d_e, d_e)),
            w_v=normal("w_v", (d_e, d_e)),
            w_1a=normal("w_1a", (d_e, d_e)),
            w_1b=normal("w_1b", (d_e, d_e)),
            w_1c=normal("w_1c", (PROFILE_DIM, d_e)),
            b_1=zeros("b_1", (d_e,)),
            w_2=normal("w_2", (d_e, 1)),
            b_2=zeros("b_2", (1,)),
            w_z=normal("w_z", (d_e, d_z)),
        )


def encode_nodes(x_s: ArrayLike, c: ArrayLike, w: GraphWeights) -> tuple[Tensor, Tensor]:
    """``E_n = relu(X_s W_n + b_n)`` and the profile context ``tanh(C W_c + b_c)`` tiled over nodes.

    :param x_s: node states ``(..., N, d_s)``.
    :param c: profiles ``(..., 20)``.
    """
    x_s, c = tn.as_tensor(x_s), tn.as_tensor(c)
    if x_s.shape[-1] != w.w_n.shape[0]:
        msg = f"encode_nodes: node states {x_s.shape} do not match weights {w.w_n.shape}"
        raise ShapeMismatchError(msg)
    e_n = tn.relu(tn.matmul(x_s, w.w_n) + w.b_n)
    context = tn.tanh(tn.matmul(c, w.w_c) + w.b_c)
    e_c = tn.broadcast_to(tn.reshape(context, (*c.shape[:-1], 1, w.embed_dim)), e_n.shape)
    return e_n, e_c


def default_radius(coords: np.ndarray) -> float:
    """30th percentile of the pairwise coordinate distances (infinite for a single node)."""
    distances = pdist(np.asarray(coords, dtype=np.float64))
    if distances.size == 0:
        return float("inf")
    return float(np.percentile(distances, RADIUS_PERCENTILE))


def neighbourhood_mask(coords: np.ndarray | None, radius: float, n: int) -> np.ndarray:
    """Pairs within ``radius`` of each other; every node is its own neighbour.

    Nodes left with no other neighbour fall back to self-attention and raise an
    :class:`IsolatedNodeWarning`.
    """
    if not radius > 0:
        msg = f"Neighbourhood radius must be positive, got {radius}."
        raise ValueError(msg)
    if coords is None or np.isinf(radius):
        return np.ones((n, n), dtype=bool)
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (n, 2):
        msg = f"Expected coordinates of shape {(n, 2)}, got {coords.shape}"
        raise ShapeMismatchError(msg)
    mask = cdist(coords, coords) <= radius
    np.fill_diagonal(mask, val=True)
    isolated = np.flatnonzero(mask.sum(axis=1) == 1)
    if n > 1 and isolated.size:
        warnings.warn(
            f"Nodes {isolated.tolist()} have no neighbour within radius {radius:g}; "
            "using self-attention only.",
            IsolatedNodeWarning,
            stacklevel=3,
        )
    return mask


def masked_attention(e: ArrayLike, mask: np.ndarray, w: GraphWeights) -> Tensor:
    """Single-head attention over nodes restricted to ``mask``."""
    e = tn.as_tensor(e)
    q, k, v = tn.matmul(e, w.w_q), tn.matmul(e, w.w_k), tn.matmul(e, w.w_v)
    scores = tn.matmul(q, tn.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(w.embed_dim))
    logits = scores + np.where(mask, 0.0, _MASKED_LOGIT)
    return tn.matmul(tn.softmax(logits, axis=-1), v)


def refine(  # noqa: PLR0913
    e_n: ArrayLike,
    e_c: ArrayLike,
    coords: np.ndarray | None,
    radius: float | None,
    w: GraphWeights,
    mask: np.ndarray | None = None,
) -> Tensor:
    """``E_r = LayerNorm(E_l + E_g + E_c)`` from local and global attention over the nodes.

    :param coords: ``(N, 2)`` positions or ``None`` (every node is local).
    :param radius: locality radius; ``None`` selects :func:`default_radius`.
    :param mask: precomputed local mask, overriding ``coords`` and ``radius``.
    """
    e_n = tn.as_tensor(e_n)
    n = e_n.shape[-2]
    if mask is None:
        if radius is None:
            radius = float("inf") if coords is None else default_radius(coords)
        mask = neighbourhood_mask(coords, radius, n)
    e_l = masked_attention(e_n, mask, w)
    e_g = masked_attention(e_n, np.ones((n, n), dtype=bool), w)
    return tn.layer_norm(e_l + e_g + e_c)


@dataclass
class LearnedAdjacency:
    """Sparsified symmetric adjacency.

    ``dense`` holds the pre-mask sigmoid scores, ``weights`` the kept, symmetrized ones.
    """

    weights: Tensor
    dense: Tensor
    mask: np.ndarray
    k: int


def default_k(n: int) -> int:
    return max(1, min(DEFAULT_MAX_NEIGHBOURS, n - 1))


def pair_scores(e_r: ArrayLike, c: ArrayLike, w: GraphWeights) -> Tensor:
    """``f([e_i || e_j || C])``: a one-hidden-layer ReLU scorer, ``(..., N, N)``."""
    e_r, c = tn.as_tensor(e_r), tn.as_tensor(c)
    *lead, n, d = e_r.shape
    left = tn.reshape(tn.matmul(e_r, w.w_1a), (*lead, n, 1, d))
    right = tn.reshape(tn.matmul(e_r, w.w_1b), (*lead, 1, n, d))
    context = tn.reshape(tn.matmul(c, w.w_1c), (*c.shape[:-1], 1, 1, d))
    hidden = tn.relu(left + right + context + w.b_1)
    return tn.reshape(tn.matmul(hidden, w.w_2), (*hidden.shape[:-1],)) + w.b_2


def sparsify(dense: ArrayLike, k: int) -> tuple[Tensor, np.ndarray]:
    """Keep mutual top-``k`` off-diagonal pairs, then symmetrize by elementwise max.

    Rows of the result have at most ``k`` nonzeros. The mask is a constant.
    """
    dense = tn.as_tensor(dense)
    n = dense.shape[-1]
    scores = np.where(np.eye(n, dtype=bool), -np.inf, dense.data)
    top = tn.top_k_indicator(scores, k, axis=-1)
    mask = top & np.swapaxes(top, -1, -2) & ~np.eye(n, dtype=bool)
    kept = dense * mask.astype(np.float64)
    return tn.maximum(kept, tn.swapaxes(kept, -1, -2)), mask


def build_adjacency(e_r: ArrayLike, c: ArrayLike, k: int, w: GraphWeights) -> LearnedAdjacency:
    """``A_ij = sigmoid(e_i . e_j + f([e_i || e_j || C]))``, sparsified per node."""
    if k < 1:
        msg = f"k must be at least 1, got {k}."
        raise ValueError(msg)
    e_r = tn.as_tensor(e_r)
    similarity = tn.matmul(e_r, tn.swapaxes(e_r, -1, -2))
    dense = tn.sigmoid(similarity + pair_scores(e_r, c, w))
    weights, mask = sparsify(dense, k)
    return LearnedAdjacency(weights=weights, dense=dense, mask=mask, k=k)


def normalized_adjacency(a: ArrayLike) -> Tensor:
    """``D^{-1/2} (A + I) D^{-1/2}`` with ``D`` the row sums of ``A + I``."""
    a = tn.as_tensor(a)
    n = a.shape[-1]
    a_tilde = a + np.eye(n)
    inv_sqrt = tn.power(tn.sum(a_tilde, axis=-1), -0.5)
    return a_tilde * tn.reshape(inv_sqrt, (*inv_sqrt.shape, 1)) * tn.reshape(
        inv_sqrt, (*inv_sqrt.shape[:-1], 1, n)
    )


def gcn_layer(a: LearnedAdjacency | ArrayLike, e_r: ArrayLike, w_z: ArrayLike) -> Tensor:
    """``Z = relu(D^{-1/2} (A + I) D^{-1/2} E_r W_z)``."""
    weights = a.weights if isinstance(a, LearnedAdjacency) else a
    return tn.relu(tn.matmul(tn.matmul(normalized_adjacency(weights), e_r), w_z))
