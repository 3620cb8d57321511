"""Temporal ego-graphs on the edge line graph.

Two edges are adjacent when they share at least one endpoint. The ego-graph of
a center edge collects its k-hop line-graph neighbours restricted to edges that
occurred at or before the center's timestamp, capped at the most recent ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dyngraph import DynamicGraph, Edge


@dataclass
class TemporalEgoGraph:
    """Past-restricted line-graph neighbourhood of one center edge.

    Edges are ordered center-first, then by descending recency (ties by
    position in the parent graph). ``h0`` holds the assembled initial feature
    matrix once built.
    """

    center_index: int
    edges: list[Edge]
    adjacency: np.ndarray
    parent_indices: np.ndarray
    h0: np.ndarray | None = None

    @property
    def center(self) -> Edge:
        return self.edges[self.center_index]

    def __len__(self) -> int:
        return len(self.edges)


def _adjacency_from_endpoints(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    shared = ((src[:, None] == src[None, :]) | (src[:, None] == dst[None, :])
              | (dst[:, None] == src[None, :]) | (dst[:, None] == dst[None, :]))
    np.fill_diagonal(shared, False)
    return shared.astype(np.float64)


def edge_adjacency(edges) -> np.ndarray:
    """Symmetric 0/1 matrix: (i, j) = 1 iff i != j and the edges share an endpoint."""
    edges = list(edges)
    if not edges:
        raise ValueError("edge list must be non-empty")
    src = np.asarray([e.src for e in edges], dtype=np.int64)
    dst = np.asarray([e.dst for e in edges], dtype=np.int64)
    return _adjacency_from_endpoints(src, dst)


def _resolve_center(g: DynamicGraph, center) -> int:
    if isinstance(center, (int, np.integer)):
        i = int(center)
        if not 0 <= i < len(g):
            raise LookupError(f"center index {i} outside graph of {len(g)} edges")
        return i
    if isinstance(center, Edge):
        hits = np.flatnonzero((g.src == center.src) & (g.dst == center.dst)
                              & (g.time == center.time))
        if hits.size == 0:
            raise LookupError(f"center edge ({center.src}, {center.dst}, "
                              f"t={center.time}) not in graph")
        return int(hits[0])
    raise TypeError(f"center must be an index or Edge, got {type(center)!r}")


def extract_ego(g: DynamicGraph, center, k: int, cap: int) -> TemporalEgoGraph:
    """BFS on the edge line graph from ``center``, k hops, past edges only.

    Edges whose time exceeds the center's are never entered. When more than
    ``cap`` edges qualify, the cap most recent survive; the center is always
    kept. Result order: center first, then descending recency.
    """
    if k < 0:
        raise ValueError(f"hop count must be >= 0, got {k}")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    c = _resolve_center(g, center)
    t_c = float(g.time[c])
    inc = g.incidence()

    visited = {c}
    frontier = [c]
    for _ in range(k):
        nxt = []
        for e in frontier:
            for node in (int(g.src[e]), int(g.dst[e])):
                idx = inc[node]
                # incidence lists are time-ascending: bisect off the future
                stop = np.searchsorted(g.time[idx], t_c, side="right")
                for j in idx[:stop]:
                    j = int(j)
                    if j not in visited:
                        visited.add(j)
                        nxt.append(j)
        if not nxt:
            break
        frontier = nxt

    others = [i for i in visited if i != c]
    others.sort(key=lambda i: (-g.time[i], i))
    if len(others) > cap - 1:
        others = others[:cap - 1]
    order = [c] + others

    parent = np.asarray(order, dtype=np.int64)
    edges = [g.edge(i) for i in order]
    adjacency = _adjacency_from_endpoints(g.src[parent], g.dst[parent])
    return TemporalEgoGraph(center_index=0, edges=edges, adjacency=adjacency,
                            parent_indices=parent)


def time_encoding(dt, dim: int) -> np.ndarray:
    """Fixed sinusoidal encoding of time lags; dim must be even."""
    if dim % 2 != 0 or dim < 2:
        raise ValueError(f"time encoding dimension must be even and >= 2, got {dim}")
    dt = np.atleast_1d(np.asarray(dt, dtype=np.float64))
    i = np.arange(dim // 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, 2.0 * i / dim)
    angles = dt[:, None] * freq[None, :]
    out = np.empty((dt.shape[0], dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def build_initial_features(ego: TemporalEgoGraph, center_time: float | None = None,
                           d_time: int = 8) -> np.ndarray:
    """Initial feature matrix: row i = concat(edge features, encoding of lag).

    The lag of edge i is center_time - time_i and must be non-negative.
    """
    if center_time is None:
        center_time = ego.center.time
    times = np.asarray([e.time for e in ego.edges], dtype=np.float64)
    lags = center_time - times
    if (lags < 0).any():
        raise ValueError("temporal invariant violated: ego edge newer than center")
    enc = time_encoding(lags, d_time)
    feats = np.stack([e.features for e in ego.edges]) if ego.edges else \
        np.zeros((0, 0))
    return np.concatenate([feats, enc], axis=1)
