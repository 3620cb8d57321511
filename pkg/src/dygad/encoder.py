"""Ego-graph encoder: stacked GNN layers, residual mean-centering, single-head
attention pooling at the center edge, and projection into prototype space.

Layer rule:      H_l = sigma(A @ H_{l-1} @ W1_l + H_{l-1} @ W2_l)
Centering:       h_i <- h_i - mean_j h_j            (over all ego rows)
Pooling:         z = sum_j softmax_j(<W_q h_c, W_k h_j> / sqrt(d_out)) W_v h_j
Projection:      z_p = W_p^T z

Everything runs in float64 so finite-difference gradient checks are exact to
tolerance and runs are bit-reproducible on CPU.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .egograph import TemporalEgoGraph, build_initial_features

_ACTIVATIONS: dict[str, Callable] = {
    "relu": torch.relu,
    "identity": lambda x: x,
    "tanh": torch.tanh,
}


@dataclass
class EdgeEmbedding:
    """Prototype-space embedding of one edge."""

    values: np.ndarray
    edge_ref: int | None = None


def _fan_in_uniform(rows: int, cols: int, gen: torch.Generator) -> nn.Parameter:
    bound = 1.0 / math.sqrt(rows)
    w = (torch.rand(rows, cols, generator=gen, dtype=torch.float64) * 2 - 1) * bound
    return nn.Parameter(w)


class EncoderParams(nn.Module):
    """Learnable weights of the ego-graph encoder.

    Dimensions chain in_dim -> hidden_dims[...] -> attn_dim -> proto_dim where
    in_dim = edge_feat_dim + time_dim. Initialization is uniform scaled by the
    inverse square root of fan-in, drawn from a generator seeded with ``seed``.
    """

    def __init__(self, edge_feat_dim: int, *, time_dim: int = 8,
                 hidden_dims: Sequence[int] = (64, 64), attn_dim: int = 64,
                 proto_dim: int = 32, activation: str = "relu", seed: int = 0):
        super().__init__()
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}; "
                             f"choose from {sorted(_ACTIVATIONS)}")
        self.edge_feat_dim = edge_feat_dim
        self.time_dim = time_dim
        self.hidden_dims = tuple(hidden_dims)
        self.attn_dim = attn_dim
        self.proto_dim = proto_dim
        self.activation_name = activation

        gen = torch.Generator().manual_seed(seed)
        dims = [edge_feat_dim + time_dim, *self.hidden_dims]
        self.w1 = nn.ParameterList(
            _fan_in_uniform(dims[l], dims[l + 1], gen) for l in range(len(dims) - 1))
        self.w2 = nn.ParameterList(
            _fan_in_uniform(dims[l], dims[l + 1], gen) for l in range(len(dims) - 1))
        d = dims[-1]
        self.w_q = _fan_in_uniform(d, attn_dim, gen)
        self.w_k = _fan_in_uniform(d, attn_dim, gen)
        self.w_v = _fan_in_uniform(d, attn_dim, gen)
        self.w_p = _fan_in_uniform(attn_dim, proto_dim, gen)

    @property
    def in_dim(self) -> int:
        return self.edge_feat_dim + self.time_dim

    @property
    def num_layers(self) -> int:
        return len(self.w1)

    @property
    def activation(self) -> Callable:
        return _ACTIVATIONS[self.activation_name]

    def arch(self) -> dict:
        return {"edge_feat_dim": self.edge_feat_dim, "time_dim": self.time_dim,
                "hidden_dims": list(self.hidden_dims), "attn_dim": self.attn_dim,
                "proto_dim": self.proto_dim, "activation": self.activation_name}


def _as_tensor(x) -> torch.Tensor:
    if torch.is_tensor(x):
        return x.to(torch.float64)
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def gnn_forward(h_prev, a_ego, layer: int, params: EncoderParams) -> torch.Tensor:
    """One GNN layer: sigma(A @ H @ W1_l + H @ W2_l)."""
    h = _as_tensor(h_prev)
    a = _as_tensor(a_ego)
    w1, w2 = params.w1[layer], params.w2[layer]
    if h.shape[-1] != w1.shape[0]:
        raise ValueError(f"layer {layer} expects input dim {w1.shape[0]}, "
                         f"got {h.shape[-1]}")
    if a.shape[-1] != h.shape[-2]:
        raise ValueError(f"adjacency {tuple(a.shape)} does not match "
                         f"{h.shape[-2]} rows")
    return params.activation(a @ h @ w1 + h @ w2)


def residual_center(h) -> torch.Tensor:
    """Subtract the mean row; output rows sum to zero. Idempotent."""
    h = _as_tensor(h)
    if h.shape[-2] < 1:
        raise ValueError("need at least one row")
    return h - h.mean(dim=-2, keepdim=True)


def attention_pool(h, center: int, params: EncoderParams) -> torch.Tensor:
    """Single-head attention with the center row as query, softmax over all rows."""
    h = _as_tensor(h)
    q = h[center] @ params.w_q
    keys = h @ params.w_k
    values = h @ params.w_v
    scores = keys @ q / math.sqrt(params.attn_dim)
    attn = torch.softmax(scores, dim=0)
    return attn @ values


def encode(ego: TemporalEgoGraph, params: EncoderParams,
           keep_grad: bool = False) -> EdgeEmbedding | torch.Tensor:
    """Full forward pass for one ego-graph; returns the projected embedding.

    With ``keep_grad`` the raw tensor comes back attached to the autograd
    graph; otherwise an EdgeEmbedding with a detached numpy vector.
    """
    h0 = ego.h0 if ego.h0 is not None else \
        build_initial_features(ego, d_time=params.time_dim)
    h = _as_tensor(h0)
    a = _as_tensor(ego.adjacency)
    for l in range(params.num_layers):
        h = gnn_forward(h, a, l, params)
    h = residual_center(h)
    z = attention_pool(h, ego.center_index, params)
    z = z @ params.w_p
    if keep_grad:
        return z
    ref = int(ego.parent_indices[ego.center_index]) if \
        ego.parent_indices is not None else None
    return EdgeEmbedding(values=z.detach().numpy().copy(), edge_ref=ref)


def pad_egos(egos: Sequence[TemporalEgoGraph], time_dim: int
             ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Stack ego-graphs into padded (h0, adjacency, mask) tensors.

    Centers sit at row 0 of every slot; padded rows are all-zero and masked.
    """
    if not egos:
        raise ValueError("need at least one ego-graph")
    h0s = [ego.h0 if ego.h0 is not None else
           build_initial_features(ego, d_time=time_dim) for ego in egos]
    s = max(len(e) for e in egos)
    d0 = h0s[0].shape[1]
    b = len(egos)
    h0 = torch.zeros(b, s, d0, dtype=torch.float64)
    adj = torch.zeros(b, s, s, dtype=torch.float64)
    mask = torch.zeros(b, s, dtype=torch.float64)
    for i, (ego, m) in enumerate(zip(egos, h0s)):
        n = len(ego)
        if ego.center_index != 0:
            raise ValueError("pad_egos expects center-first ordering")
        h0[i, :n] = torch.as_tensor(m, dtype=torch.float64)
        adj[i, :n, :n] = torch.as_tensor(ego.adjacency, dtype=torch.float64)
        mask[i, :n] = 1.0
    return h0, adj, mask


def encode_batch(h0: torch.Tensor, adj: torch.Tensor, mask: torch.Tensor,
                 params: EncoderParams) -> torch.Tensor:
    """Vectorized forward pass over padded ego-graphs; returns [B, proto_dim].

    Matches ``encode`` exactly on each slot: padded rows stay zero through the
    GNN (zero features, zero adjacency), the mean is taken over valid rows
    only, and padded attention scores are masked out.
    """
    h = h0
    for l in range(params.num_layers):
        h = params.activation(adj @ h @ params.w1[l] + h @ params.w2[l])
    counts = mask.sum(dim=1, keepdim=True).clamp(min=1.0)
    mean = (h * mask.unsqueeze(-1)).sum(dim=1, keepdim=True) / counts.unsqueeze(-1)
    h = h - mean
    q = h[:, 0] @ params.w_q
    keys = h @ params.w_k
    values = h @ params.w_v
    scores = (keys @ q.unsqueeze(-1)).squeeze(-1) / math.sqrt(params.attn_dim)
    scores = scores.masked_fill(mask == 0, float("-inf"))
    attn = torch.softmax(scores, dim=1)
    z = (attn.unsqueeze(-1) * values).sum(dim=1)
    return z @ params.w_p


def parameter_gradients(module: nn.Module, loss_fn: Callable[[], torch.Tensor]
                        ) -> dict[str, np.ndarray]:
    """Gradient of a scalar loss for every named parameter of ``module``.

    Parameters the loss never touches get zero gradients. Non-finite losses
    raise immediately with a diagnostic.
    """
    named = [(n, p) for n, p in module.named_parameters()]
    loss = loss_fn()
    if not torch.is_tensor(loss):
        loss = torch.as_tensor(float(loss), dtype=torch.float64)
    if not torch.isfinite(loss):
        raise FloatingPointError(f"loss is non-finite: {loss.item()!r}")
    if loss.requires_grad:
        grads = torch.autograd.grad(loss, [p for _, p in named],
                                    allow_unused=True)
    else:
        grads = [None] * len(named)
    out = {}
    for (name, p), g in zip(named, grads):
        out[name] = np.zeros(p.shape) if g is None else g.detach().numpy().copy()
    return out
