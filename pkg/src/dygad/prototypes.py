"""Dynamic prototype pairs and the bounded memory buffer.

A pair holds one normal and one abnormal prototype vector together with its
cached difference score s_d (how far apart the two prototypes sit) and, once a
newer domain has been seen, its retention score s_r = lambda_d * s_d -
lambda_e * s_e, where the similarity score s_e measures the mean distance from
new-domain embeddings to the pair. High s_r marks pairs that are internally
discriminative yet close to the incoming domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .dyngraph import UNKNOWN

DIFFERENCE = "difference"
RETENTION = "retention"
_SCORE_KINDS = (DIFFERENCE, RETENTION)


@dataclass
class PrototypePair:
    """A (normal, abnormal) prototype snapshot with cached ranking scores."""

    p_n: np.ndarray
    p_a: np.ndarray
    s_d: float
    s_r: float | None = None
    origin: str = ""

    @classmethod
    def create(cls, p_n, p_a, origin: str = "",
               mode: str = "per_dim") -> "PrototypePair":
        p_n = np.asarray(p_n, dtype=np.float64).copy()
        p_a = np.asarray(p_a, dtype=np.float64).copy()
        if p_n.shape != p_a.shape or p_n.ndim != 1:
            raise ValueError(f"prototypes must be equal-length vectors, got "
                             f"{p_n.shape} and {p_a.shape}")
        if not (np.isfinite(p_n).all() and np.isfinite(p_a).all()):
            raise ValueError("prototypes must be finite")
        pair = cls(p_n=p_n, p_a=p_a, s_d=0.0, origin=origin)
        pair.s_d = difference_score(pair, mode=mode)
        return pair

    @property
    def dim(self) -> int:
        return self.p_n.shape[0]

    def score(self, kind: str) -> float:
        if kind == DIFFERENCE:
            return self.s_d
        if kind == RETENTION:
            if self.s_r is None:
                raise ValueError("pair has no retention score yet; rescore the "
                                 "buffer against a new-domain sample first")
            return self.s_r
        raise ValueError(f"score kind must be one of {_SCORE_KINDS}, got {kind!r}")


def _pair_vectors(pair):
    if isinstance(pair, PrototypePair):
        return pair.p_n, pair.p_a
    p_n, p_a = pair
    return p_n, p_a


def alignment_loss(embeddings, labels, pair):
    """Sum of squared distances from each embedding to its class prototype.

    Accepts numpy arrays or torch tensors; torch inputs stay on the autograd
    graph. Labels must be resolved to 0/1 (pseudo-labels included) upstream.
    """
    p_n, p_a = _pair_vectors(pair)
    if torch.is_tensor(embeddings):
        y = embeddings.new_tensor(np.asarray(labels, dtype=np.float64)) \
            if not torch.is_tensor(labels) else labels.to(torch.float64)
        if ((y != 0) & (y != 1)).any():
            raise ValueError("labels must be 0 or 1; resolve unknowns upstream")
        d_n = ((embeddings - p_n) ** 2).sum(dim=1)
        d_a = ((embeddings - p_a) ** 2).sum(dim=1)
        return ((1 - y) * d_n + y * d_a).sum()
    z = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if np.isin(y, UNKNOWN).any() or not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1; resolve unknowns upstream")
    d_n = ((z - np.asarray(p_n)) ** 2).sum(axis=1)
    d_a = ((z - np.asarray(p_a)) ** 2).sum(axis=1)
    return float(((1 - y) * d_n + y * d_a).sum())


def difference_score(pair, mode: str = "per_dim") -> float:
    """How far apart the two prototypes of a pair sit.

    "per_dim" averages the absolute per-dimension gaps; "euclidean" divides
    the full Euclidean distance by the dimension instead.
    """
    p_n, p_a = _pair_vectors(pair)
    p_n = np.asarray(p_n, dtype=np.float64)
    p_a = np.asarray(p_a, dtype=np.float64)
    if mode == "per_dim":
        return float(np.abs(p_a - p_n).mean())
    if mode == "euclidean":
        return float(np.linalg.norm(p_a - p_n) / p_n.shape[0])
    raise ValueError(f"unknown difference-score mode {mode!r}")


def similarity_score(pair, embeddings) -> float:
    """Mean distance from embeddings to the pair; lower = closer to the domain."""
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] == 0:
        raise ValueError("need a non-empty (n, d) embedding matrix")
    p_n, p_a = _pair_vectors(pair)
    d_n = np.linalg.norm(z - np.asarray(p_n), axis=1)
    d_a = np.linalg.norm(z - np.asarray(p_a), axis=1)
    return float((d_n + d_a).mean())


def retention_score(s_d: float, s_e: float, lambda_d: float,
                    lambda_e: float) -> float:
    """Weighted trade-off between pair distinctness and domain similarity."""
    if lambda_d < 0 or lambda_e < 0:
        raise ValueError("retention weights must be non-negative")
    return lambda_d * s_d - lambda_e * s_e


class PrototypeBuffer:
    """Bounded store of prototype pairs ranked by difference or retention score.

    Inserting into a full buffer evicts the minimum-score entry only when the
    newcomer scores strictly higher; ties keep the incumbent. ``best`` breaks
    ties towards the oldest entry.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.entries: list[PrototypePair] = []

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    @property
    def origins(self) -> set[str]:
        return {e.origin for e in self.entries}

    def insert(self, pair: PrototypePair, score_kind: str) -> PrototypePair | None:
        """Insert by the given score kind; returns the evicted pair, if any."""
        new_score = pair.score(score_kind)
        if len(self.entries) < self.capacity:
            self.entries.append(pair)
            return None
        scores = [e.score(score_kind) for e in self.entries]
        victim = min(range(len(scores)), key=lambda i: (scores[i], i))
        if new_score <= scores[victim]:
            return None
        evicted = self.entries[victim]
        self.entries[victim] = pair
        return evicted

    def best(self, score_kind: str) -> PrototypePair:
        """Entry with the maximum score of the requested kind; oldest wins ties."""
        if not self.entries:
            raise LookupError("buffer is empty; caller should fall back to "
                              "random initialization")
        scores = [e.score(score_kind) for e in self.entries]
        top = max(range(len(scores)), key=lambda i: (scores[i], -i))
        return self.entries[top]

    def has_retention_scores(self) -> bool:
        return bool(self.entries) and all(e.s_r is not None for e in self.entries)

    def rescore(self, embeddings, lambda_d: float, lambda_e: float) -> None:
        """Refresh every entry's s_e against a new-domain sample and update s_r.

        Deterministic in the sample: rescoring twice with the same embeddings
        is a no-op the second time.
        """
        z = np.asarray(embeddings, dtype=np.float64)
        if z.ndim != 2 or z.shape[0] == 0:
            raise ValueError("need a non-empty (n, d) embedding matrix")
        for e in self.entries:
            s_e = similarity_score(e, z)
            e.s_r = retention_score(e.s_d, s_e, lambda_d, lambda_e)
