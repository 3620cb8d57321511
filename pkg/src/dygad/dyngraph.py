"""Dynamic graph data model: timestamped edge streams, interval partitioning,
temporal splits, and ground-truth anomaly injection.

A graph is stored columnar (numpy arrays) and is immutable after construction;
all operations return new graphs or index views.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

UNKNOWN = -1  # label value for edges without ground truth


class EdgeListError(ValueError):
    """Base class for edge-list ingestion failures."""


class EdgeListParseError(EdgeListError):
    """A row is structurally malformed (field count, non-numeric value)."""


class EdgeListSchemaError(EdgeListError):
    """The column mapping does not fit the file."""


class CapacityError(ValueError):
    """Not enough disconnected node pairs to satisfy an injection request."""


@dataclass
class Edge:
    """One timestamped interaction between two nodes."""

    src: int
    dst: int
    time: float
    features: np.ndarray
    label: int = UNKNOWN

    def __post_init__(self):
        if self.time < 0:
            raise ValueError(f"edge time must be non-negative, got {self.time}")
        if self.label not in (0, 1, UNKNOWN):
            raise ValueError(f"label must be 0, 1 or UNKNOWN, got {self.label}")

    def endpoints(self) -> frozenset[int]:
        return frozenset((self.src, self.dst))


class DynamicGraph:
    """Immutable, time-sorted edge stream.

    Columns: ``src``, ``dst`` (int node ids), ``time`` (non-negative floats),
    ``features`` (m x d_e, possibly d_e = 0), ``labels`` (0 normal, 1 abnormal,
    UNKNOWN). Construction stable-sorts by time, so ties keep input order.
    """

    def __init__(self, src, dst, time, features=None, labels=None,
                 node_features: np.ndarray | None = None):
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        time = np.asarray(time, dtype=np.float64)
        m = src.shape[0]
        if dst.shape[0] != m or time.shape[0] != m:
            raise ValueError("src, dst and time must have equal length")
        if m and time.min() < 0:
            raise ValueError("edge times must be non-negative")
        if features is None:
            features = np.zeros((m, 0))
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != m:
            raise ValueError(f"features must be (m, d_e), got {features.shape}")
        if labels is None:
            labels = np.full(m, UNKNOWN, dtype=np.int8)
        labels = np.asarray(labels, dtype=np.int8)
        if labels.shape[0] != m:
            raise ValueError("labels length mismatch")
        bad = ~np.isin(labels, (0, 1, UNKNOWN))
        if bad.any():
            raise ValueError(f"labels must be 0, 1 or UNKNOWN; offending value "
                             f"{labels[bad][0]}")

        order = np.argsort(time, kind="stable")
        self.src = src[order]
        self.dst = dst[order]
        self.time = time[order]
        self.features = features[order]
        self.labels = labels[order]
        self.node_features = node_features
        for arr in (self.src, self.dst, self.time, self.features, self.labels):
            arr.setflags(write=False)
        self._incidence: dict[int, np.ndarray] | None = None

    # -- basic views ---------------------------------------------------------

    def __len__(self) -> int:
        return self.src.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self)

    @property
    def nodes(self) -> set[int]:
        return set(np.union1d(self.src, self.dst).tolist())

    @property
    def num_nodes(self) -> int:
        return np.union1d(self.src, self.dst).shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edge(self, i: int) -> Edge:
        i = int(i)
        return Edge(int(self.src[i]), int(self.dst[i]), float(self.time[i]),
                    self.features[i].copy(), int(self.labels[i]))

    def edges(self) -> Iterator[Edge]:
        return (self.edge(i) for i in range(len(self)))

    def subset(self, indices) -> "DynamicGraph":
        idx = np.asarray(indices, dtype=np.int64)
        return DynamicGraph(self.src[idx], self.dst[idx], self.time[idx],
                            self.features[idx], self.labels[idx],
                            node_features=self.node_features)

    def with_labels(self, labels) -> "DynamicGraph":
        return DynamicGraph(self.src, self.dst, self.time, self.features,
                            labels, node_features=self.node_features)

    def strip_labels(self) -> "DynamicGraph":
        return self.with_labels(np.full(len(self), UNKNOWN, dtype=np.int8))

    def incidence(self) -> dict[int, np.ndarray]:
        """Node id -> edge indices touching it, ascending by time.

        Built lazily; the graph is immutable so the cache is safe to share.
        """
        if self._incidence is None:
            inc: dict[int, list[int]] = {}
            for i in range(len(self)):
                inc.setdefault(int(self.src[i]), []).append(i)
                if self.dst[i] != self.src[i]:
                    inc.setdefault(int(self.dst[i]), []).append(i)
            self._incidence = {v: np.asarray(ix, dtype=np.int64)
                               for v, ix in inc.items()}
        return self._incidence

    def undirected_pairs(self) -> set[tuple[int, int]]:
        """Set of (min, max) endpoint pairs that carry at least one edge."""
        lo = np.minimum(self.src, self.dst)
        hi = np.maximum(self.src, self.dst)
        return set(zip(lo.tolist(), hi.tolist()))

    @classmethod
    def from_edges(cls, edges: Sequence[Edge],
                   feature_dim: int | None = None) -> "DynamicGraph":
        if not edges:
            d = feature_dim or 0
            return cls(np.empty(0, np.int64), np.empty(0, np.int64),
                       np.empty(0, np.float64), np.zeros((0, d)))
        dims = {e.features.shape[0] for e in edges}
        if len(dims) > 1:
            raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
        return cls([e.src for e in edges], [e.dst for e in edges],
                   [e.time for e in edges],
                   np.stack([e.features for e in edges]),
                   [e.label for e in edges])


@dataclass(frozen=True)
class SplitSpec:
    """Temporal prefix split: the earliest ``train_fraction`` of edges train."""

    train_fraction: float

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must lie in (0, 1), "
                             f"got {self.train_fraction}")


@dataclass(frozen=True)
class Interval:
    """One time window of a partitioned stream; indices are row positions."""

    t_start: float
    t_end: float
    indices: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return self.indices.shape[0]


@dataclass(frozen=True)
class EdgeListSchema:
    """Column mapping for delimiter-separated edge lists.

    ``feature_cols=None`` treats every unmapped column as a feature, in file
    order. ``label_col`` is used only when the column exists.
    """

    src_col: str = "src"
    dst_col: str = "dst"
    time_col: str = "time"
    label_col: str = "label"
    feature_cols: tuple[str, ...] | None = None


def load_edge_list(path, schema: EdgeListSchema | None = None,
                   delimiter: str = ",") -> DynamicGraph:
    """Read a delimiter-separated edge list (header row required).

    Missing labels become UNKNOWN; absent feature columns yield empty feature
    vectors. Node ids must be integers. Edges come back sorted by time.
    """
    schema = schema or EdgeListSchema()
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            return DynamicGraph.from_edges([])
        header = [h.strip() for h in header]
        col = {name: i for i, name in enumerate(header)}
        for required in (schema.src_col, schema.dst_col, schema.time_col):
            if required not in col:
                raise EdgeListSchemaError(
                    f"{path}: required column {required!r} not in header {header}")
        label_idx = col.get(schema.label_col)
        if schema.feature_cols is not None:
            missing = [c for c in schema.feature_cols if c not in col]
            if missing:
                raise EdgeListSchemaError(f"{path}: feature columns {missing} "
                                          f"not in header")
            feat_idx = [col[c] for c in schema.feature_cols]
        else:
            mapped = {col[schema.src_col], col[schema.dst_col],
                      col[schema.time_col]}
            if label_idx is not None:
                mapped.add(label_idx)
            feat_idx = [i for i in range(len(header)) if i not in mapped]

        src, dst, time, labels = [], [], [], []
        feats: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise EdgeListParseError(
                    f"{path}: line {lineno}: expected {len(header)} fields, "
                    f"got {len(row)}")
            try:
                src.append(int(row[col[schema.src_col]]))
                dst.append(int(row[col[schema.dst_col]]))
            except ValueError as exc:
                raise EdgeListParseError(
                    f"{path}: line {lineno}: non-integer node id ({exc})") from exc
            try:
                t = float(row[col[schema.time_col]])
            except ValueError as exc:
                raise EdgeListSchemaError(
                    f"{path}: line {lineno}: non-numeric time "
                    f"{row[col[schema.time_col]]!r}") from exc
            if t < 0 or not math.isfinite(t):
                raise EdgeListSchemaError(
                    f"{path}: line {lineno}: time must be finite and >= 0, got {t}")
            time.append(t)
            if label_idx is not None:
                raw = row[label_idx].strip().lower()
                if raw in ("", "unknown", str(UNKNOWN)):
                    labels.append(UNKNOWN)
                elif raw in ("0", "1"):
                    labels.append(int(raw))
                else:
                    raise EdgeListParseError(
                        f"{path}: line {lineno}: label must be 0, 1, -1 or "
                        f"empty, got {row[label_idx]!r}")
            else:
                labels.append(UNKNOWN)
            try:
                feats.append([float(row[i]) for i in feat_idx])
            except ValueError as exc:
                raise EdgeListParseError(
                    f"{path}: line {lineno}: non-numeric feature ({exc})") from exc

    features = np.asarray(feats, dtype=np.float64) if feats else \
        np.zeros((0, len(feat_idx)))
    return DynamicGraph(src, dst, time, features, labels)


def save_edge_list(g: DynamicGraph, path, delimiter: str = ",") -> None:
    """Write ``g`` in the same format ``load_edge_list`` reads."""
    path = Path(path)
    d = g.feature_dim
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        writer.writerow(["src", "dst", "time", "label"]
                        + [f"f{i}" for i in range(d)])
        for i in range(len(g)):
            writer.writerow([int(g.src[i]), int(g.dst[i]),
                             repr(float(g.time[i])), int(g.labels[i])]
                            + [repr(float(x)) for x in g.features[i]])


def inject_anomalies(g: DynamicGraph, p: float, seed: int) -> DynamicGraph:
    """Add ``floor(p * m)`` anomalous edges between disconnected node pairs.

    Injected edges get label 1, a timestamp drawn uniformly from the existing
    timestamps, and features copied from a uniformly chosen existing edge.
    Original edges with UNKNOWN labels are resolved to 0. At equal timestamps
    the original edges sort before the injected ones. Deterministic per seed.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"anomaly ratio must lie in (0, 1], got {p}")
    m = len(g)
    if m < 1:
        raise ValueError("cannot inject into an empty graph")

    labels = np.where(g.labels == UNKNOWN, 0, g.labels).astype(np.int8)
    n_inject = int(p * m)
    if n_inject == 0:
        return g.with_labels(labels)

    nodes = np.union1d(g.src, g.dst)
    n = nodes.shape[0]
    taken = g.undirected_pairs()
    blocked = sum(1 for a, b in taken if a != b)
    available = n * (n - 1) // 2 - blocked
    if available < n_inject:
        raise CapacityError(
            f"need {n_inject} disconnected pairs but only {available} exist")

    rng = np.random.default_rng(seed)
    chosen: list[tuple[int, int]] = []
    if available < 4 * n_inject:
        # dense graph: enumerate the free pairs instead of rejection sampling
        free = [(int(nodes[i]), int(nodes[j]))
                for i in range(n) for j in range(i + 1, n)
                if (int(nodes[i]), int(nodes[j])) not in taken]
        picks = rng.choice(len(free), size=n_inject, replace=False)
        chosen = [free[k] for k in picks]
    else:
        while len(chosen) < n_inject:
            u = int(nodes[rng.integers(n)])
            v = int(nodes[rng.integers(n)])
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            if key in taken:
                continue
            taken.add(key)
            chosen.append((u, v))

    inj_src = np.asarray([c[0] for c in chosen], dtype=np.int64)
    inj_dst = np.asarray([c[1] for c in chosen], dtype=np.int64)
    inj_time = rng.choice(g.time, size=n_inject, replace=True)
    feat_rows = rng.integers(0, m, size=n_inject)
    inj_feat = g.features[feat_rows].copy()

    return DynamicGraph(
        np.concatenate([g.src, inj_src]),
        np.concatenate([g.dst, inj_dst]),
        np.concatenate([g.time, inj_time]),
        np.concatenate([g.features, inj_feat]),
        np.concatenate([labels, np.ones(n_inject, dtype=np.int8)]),
        node_features=g.node_features)


def split_intervals(g: DynamicGraph, t: int) -> list[Interval]:
    """Partition the stream into ``t`` equal-width time windows.

    The last window absorbs the remainder of the range. Windows may be empty;
    together they cover every edge exactly once.
    """
    if t < 1:
        raise ValueError(f"interval count must be >= 1, got {t}")
    if len(g) == 0:
        raise ValueError("cannot partition an empty graph")
    distinct = np.unique(g.time).shape[0]
    if t > distinct:
        raise ValueError(f"degenerate intervals: t={t} exceeds the "
                         f"{distinct} distinct timestamps")
    t_min, t_max = float(g.time[0]), float(g.time[-1])
    width = (t_max - t_min) / t
    if width == 0.0:
        bins = np.zeros(len(g), dtype=np.int64)
    else:
        bins = np.minimum(((g.time - t_min) / width).astype(np.int64), t - 1)
    out = []
    for i in range(t):
        start = t_min + i * width
        end = t_max if i == t - 1 else t_min + (i + 1) * width
        out.append(Interval(start, end, np.flatnonzero(bins == i)))
    return out


def temporal_split(g: DynamicGraph,
                   spec: SplitSpec) -> tuple[DynamicGraph, DynamicGraph]:
    """Prefix-by-time split; ties between equal timestamps keep input order."""
    m = len(g)
    n_train = int(spec.train_fraction * m)
    train = g.subset(np.arange(n_train))
    test = g.subset(np.arange(n_train, m))
    return train, test
