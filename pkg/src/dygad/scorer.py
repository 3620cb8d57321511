"""Momentum-tracked class distribution statistics and similarity-gap scoring.

Means and covariances of the normal/abnormal prototype populations are updated
with momentum alpha from the buffer contents:

    mu_c    <- alpha * mu_c    + (1 - alpha) * agg_i p_{c,i}
    Sigma_c <- alpha * Sigma_c + (1 - alpha) * C_c^T C_c / max(1, M - 1)

where C_c stacks the centered prototypes. ``agg`` is the buffer mean by
default so statistics stay capacity-invariant; the raw sum is available as
``mode="sum"``. An edge embedding z is scored by the gap between its affinity
to the abnormal and the normal distribution:

    s_c = z^T mu_c - lambda_c * z^T Sigma_c z,   s = s_a - s_n,   p = logistic(s)
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoder import EdgeEmbedding, EncoderParams
from .prototypes import PrototypeBuffer, PrototypePair

_EPS = 1e-7


@dataclass
class AnomalyScore:
    """Raw similarity-gap score and its probability for one edge."""

    s: float
    p: float
    s_n: float
    s_a: float
    edge_ref: int | None = None


class DistributionStats(nn.Module):
    """Running class means/covariances plus the learnable quadratic weights.

    mu/Sigma are buffers mutated only by the momentum updates; lambda_n and
    lambda_a are ordinary parameters trained with the rest of the model.
    """

    def __init__(self, dim: int, *, alpha: float = 0.9,
                 lambda_init: float = 0.1, mode: str = "mean"):
        super().__init__()
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"momentum alpha must lie in [0, 1], got {alpha}")
        if mode not in ("mean", "sum"):
            raise ValueError(f"mode must be 'mean' or 'sum', got {mode!r}")
        self.dim = dim
        self.alpha = alpha
        self.mode = mode
        self.register_buffer("mu_n", torch.zeros(dim, dtype=torch.float64))
        self.register_buffer("mu_a", torch.zeros(dim, dtype=torch.float64))
        self.register_buffer("sigma_n", torch.zeros(dim, dim, dtype=torch.float64))
        self.register_buffer("sigma_a", torch.zeros(dim, dim, dtype=torch.float64))
        self.lambda_n = nn.Parameter(torch.tensor(lambda_init, dtype=torch.float64))
        self.lambda_a = nn.Parameter(torch.tensor(lambda_init, dtype=torch.float64))


def _stack(buffer) -> tuple[np.ndarray, np.ndarray]:
    entries = buffer.entries if isinstance(buffer, PrototypeBuffer) else list(buffer)
    return (np.stack([e.p_n for e in entries]),
            np.stack([e.p_a for e in entries]))


def _buffer_size(buffer) -> int:
    return len(buffer.entries) if isinstance(buffer, PrototypeBuffer) else len(buffer)


def update_means(stats: DistributionStats, buffer) -> DistributionStats:
    """Momentum update of class means from the buffered prototypes."""
    if _buffer_size(buffer) == 0:
        warnings.warn("update_means skipped: buffer is empty", stacklevel=2)
        return stats
    p_n, p_a = _stack(buffer)
    agg = np.mean if stats.mode == "mean" else np.sum
    a = stats.alpha
    with torch.no_grad():
        stats.mu_n.mul_(a).add_((1 - a) * torch.as_tensor(agg(p_n, axis=0)))
        stats.mu_a.mul_(a).add_((1 - a) * torch.as_tensor(agg(p_a, axis=0)))
    return stats


def update_covariances(stats: DistributionStats, buffer) -> DistributionStats:
    """Momentum update of class covariances around the current means."""
    m = _buffer_size(buffer)
    if m == 0:
        warnings.warn("update_covariances skipped: buffer is empty", stacklevel=2)
        return stats
    p_n, p_a = _stack(buffer)
    a = stats.alpha
    with torch.no_grad():
        for mu, sigma, p in ((stats.mu_n, stats.sigma_n, p_n),
                             (stats.mu_a, stats.sigma_a, p_a)):
            c = torch.as_tensor(p) - mu
            s = (c.T @ c) / max(1, m - 1)
            sigma.mul_(a).add_((1 - a) * s)
            sigma.copy_((sigma + sigma.T) / 2)  # kill fp asymmetry drift
    return stats


def similarity_gap(z: torch.Tensor, stats: DistributionStats
                   ) -> tuple[torch.Tensor, torch.Tensor]:
    """Batched scores for embeddings [B, d]; returns (s, p), grads intact."""
    quad_n = ((z @ stats.sigma_n) * z).sum(dim=-1)
    quad_a = ((z @ stats.sigma_a) * z).sum(dim=-1)
    s_n = z @ stats.mu_n - stats.lambda_n * quad_n
    s_a = z @ stats.mu_a - stats.lambda_a * quad_a
    s = s_a - s_n
    return s, torch.sigmoid(s)


def score_edge(z, stats: DistributionStats) -> AnomalyScore:
    """Score one embedding against the class distributions."""
    ref = None
    if isinstance(z, EdgeEmbedding):
        ref = z.edge_ref
        z = z.values
    vec = torch.as_tensor(np.asarray(z, dtype=np.float64))
    if vec.shape != (stats.dim,):
        raise ValueError(f"embedding must have shape ({stats.dim},), "
                         f"got {tuple(vec.shape)}")
    with torch.no_grad():
        s, p = similarity_gap(vec.unsqueeze(0), stats)
        quad_n = (vec @ stats.sigma_n @ vec).item()
        quad_a = (vec @ stats.sigma_a @ vec).item()
        s_n = (vec @ stats.mu_n).item() - stats.lambda_n.item() * quad_n
        s_a = (vec @ stats.mu_a).item() - stats.lambda_a.item() * quad_a
    result = AnomalyScore(s=s.item(), p=p.item(), s_n=s_n, s_a=s_a, edge_ref=ref)
    if not np.isfinite(result.s):
        for name, t in (("embedding", vec), ("mu_n", stats.mu_n),
                        ("mu_a", stats.mu_a), ("sigma_n", stats.sigma_n),
                        ("sigma_a", stats.sigma_a), ("lambda_n", stats.lambda_n),
                        ("lambda_a", stats.lambda_a)):
            if not torch.isfinite(t).all():
                raise FloatingPointError(f"non-finite anomaly score: {name} "
                                         f"contains non-finite values")
        raise FloatingPointError("non-finite anomaly score from finite inputs "
                                 "(overflow in the quadratic form)")
    return result


def bce_loss(probabilities, labels):
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    if torch.is_tensor(probabilities):
        if probabilities.numel() == 0:
            raise ValueError("empty batch")
        y = probabilities.new_tensor(np.asarray(labels, dtype=np.float64)) \
            if not torch.is_tensor(labels) else labels.to(torch.float64)
        p = probabilities.clamp(_EPS, 1 - _EPS)
        return -(y * torch.log(p) + (1 - y) * torch.log(1 - p)).mean()
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0:
        raise ValueError("empty batch")
    y = np.asarray(labels, dtype=np.float64)
    p = np.clip(p, _EPS, 1 - _EPS)
    return float(-(y * np.log(p) + (1 - y) * np.log(1 - p)).mean())


def total_loss(l_bce, l_align, lambda_bce: float, lambda_align: float):
    """Weighted combination of the classification and alignment objectives."""
    if lambda_bce < 0 or lambda_align < 0:
        raise ValueError("loss weights must be non-negative")
    return lambda_bce * l_bce + lambda_align * l_align


class DetectorModel(nn.Module):
    """Everything trained jointly: encoder, live prototype pair, statistics.

    Statistics start from small random values by default (``stats_init=
    "random"``): with all-zero means and covariances the score is identically
    zero and the classification loss has no gradient to bootstrap from. The
    momentum updates wash the random start out geometrically. ``stats_init=
    "zero"`` is available for comparison runs.
    """

    def __init__(self, encoder: EncoderParams, *, alpha: float = 0.9,
                 lambda_init: float = 0.1, stats_mode: str = "mean",
                 stats_init: str = "random", seed: int = 0):
        super().__init__()
        if stats_init not in ("random", "zero"):
            raise ValueError(f"stats_init must be 'random' or 'zero', "
                             f"got {stats_init!r}")
        self.encoder = encoder
        d = encoder.proto_dim
        gen = torch.Generator().manual_seed(seed)
        self.p_n = nn.Parameter(self._random_proto(d, gen))
        self.p_a = nn.Parameter(self._random_proto(d, gen))
        self.stats = DistributionStats(d, alpha=alpha, lambda_init=lambda_init,
                                       mode=stats_mode)
        if stats_init == "random":
            with torch.no_grad():
                self.stats.mu_n.copy_(self._random_proto(d, gen))
                self.stats.mu_a.copy_(self._random_proto(d, gen))
                for sigma in (self.stats.sigma_n, self.stats.sigma_a):
                    a = torch.rand(d, d, generator=gen, dtype=torch.float64) - 0.5
                    sigma.copy_((a @ a.T) / d ** 1.5)  # small random PSD start

    @staticmethod
    def _random_proto(d: int, gen: torch.Generator) -> torch.Tensor:
        bound = 1.0 / np.sqrt(d)
        return (torch.rand(d, generator=gen, dtype=torch.float64) * 2 - 1) * bound

    @property
    def proto_dim(self) -> int:
        return self.encoder.proto_dim

    def set_pair(self, p_n, p_a) -> None:
        with torch.no_grad():
            self.p_n.copy_(torch.as_tensor(np.asarray(p_n, dtype=np.float64)))
            self.p_a.copy_(torch.as_tensor(np.asarray(p_a, dtype=np.float64)))

    def randomize_pair(self, gen: torch.Generator) -> None:
        d = self.proto_dim
        self.set_pair(self._random_proto(d, gen), self._random_proto(d, gen))

    def snapshot_pair(self, origin: str = "",
                      sd_mode: str = "per_dim") -> PrototypePair:
        return PrototypePair.create(self.p_n.detach().numpy(),
                                    self.p_a.detach().numpy(),
                                    origin=origin, mode=sd_mode)
