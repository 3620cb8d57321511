"""Entropy-gated pseudo-labeling and alignment-only adaptation on unlabeled
target streams.

The pretrained scorer produces per-edge probabilities; edges whose binary
detection entropy is lowest within their predicted class become pseudo-labeled
training data. Adaptation then minimizes only the alignment objective (no
cross-entropy, since no ground truth exists) while the buffer and statistics
keep tracking the drifting prototypes.
"""

from __future__ import annotations

import copy
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from .dyngraph import UNKNOWN, DynamicGraph
from .egograph import extract_ego
from .encoder import encode_batch, pad_egos
from .prototypes import (DIFFERENCE, RETENTION, PrototypeBuffer,
                         alignment_loss, similarity_score, retention_score)
from .scorer import AnomalyScore, DetectorModel, similarity_gap, update_covariances, update_means

STRATEGIES = ("entropy", "random", "threshold", "max_distance", "min_distance")


@dataclass
class ConfidentDetection:
    """A scored edge promoted to pseudo-labeled training data."""

    edge_ref: int
    p: float
    entropy: float
    pseudo_label: int


@dataclass
class AdaptResult:
    """Adapted artifacts plus diagnostics of the adaptation run."""

    model: DetectorModel
    buffer: PrototypeBuffer
    selected: list[ConfidentDetection]
    align_losses: list[float]


def detection_entropy(p, eps: float = 1e-7):
    """Binary detection entropy H(p) = -p log(p+eps) - (1-p) log(1-p+eps).

    Low entropy marks confident detections; symmetric about p = 0.5. Scalar in,
    scalar out; arrays map elementwise.
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    arr = np.asarray(p, dtype=np.float64)
    if ((arr < 0) | (arr > 1)).any():
        raise ValueError("probabilities must lie in [0, 1]")
    h = -arr * np.log(arr + eps) - (1 - arr) * np.log(1 - arr + eps)
    return float(h) if np.isscalar(p) or np.ndim(p) == 0 else h


def _class_pools(ps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    abnormal = np.flatnonzero(ps > 0.5)
    normal = np.flatnonzero(ps <= 0.5)
    return normal, abnormal


def select_confident(detections: Sequence[AnomalyScore], n_con: int, *,
                     strategy: str = "entropy", embeddings=None, pair=None,
                     rng: np.random.Generator | None = None,
                     thresholds: tuple[float, float] = (0.7, 0.3),
                     eps: float = 1e-7) -> list[ConfidentDetection]:
    """Pick up to ``n_con`` detections per predicted class as pseudo-labels.

    The default strategy takes the lowest-entropy detections of each class;
    alternatives: "random", fixed-probability "threshold" (ignores n_con),
    "max_distance"/"min_distance" by embedding distance to the predicted
    class prototype (these require ``embeddings`` and ``pair``).
    """
    if not detections:
        raise ValueError("no detections to select from")
    if strategy not in STRATEGIES:
        raise ValueError(f"strategy must be one of {STRATEGIES}, got {strategy!r}")
    ps = np.asarray([d.p for d in detections], dtype=np.float64)
    ent = detection_entropy(ps, eps)
    ent = np.atleast_1d(ent)
    normal, abnormal = _class_pools(ps)

    def order(pool: np.ndarray, label: int) -> np.ndarray:
        if strategy == "entropy":
            return pool[np.argsort(ent[pool], kind="stable")]
        if strategy == "random":
            if rng is None:
                raise ValueError("random strategy needs an rng")
            return rng.permutation(pool)
        if strategy in ("max_distance", "min_distance"):
            if embeddings is None or pair is None:
                raise ValueError(f"{strategy} strategy needs embeddings and a "
                                 "prototype pair")
            z = np.asarray(embeddings, dtype=np.float64)
            proto = pair.p_a if label == 1 else pair.p_n
            dist = np.linalg.norm(z[pool] - proto, axis=1)
            key = -dist if strategy == "max_distance" else dist
            return pool[np.argsort(key, kind="stable")]
        raise AssertionError(strategy)

    selected: list[ConfidentDetection] = []
    for pool, label in ((normal, 0), (abnormal, 1)):
        if strategy == "threshold":
            hi, lo = thresholds
            take = pool[ps[pool] > hi] if label == 1 else pool[ps[pool] < lo]
        else:
            if pool.size < n_con:
                warnings.warn(f"only {pool.size} detections in class {label}, "
                              f"wanted {n_con}", stacklevel=2)
            take = order(pool, label)[:n_con]
        for i in take:
            selected.append(ConfidentDetection(
                edge_ref=detections[i].edge_ref if detections[i].edge_ref
                is not None else int(i),
                p=float(ps[i]), entropy=float(ent[i]), pseudo_label=label))
    return selected


def _check_entropy_optimality(selected: Sequence[ConfidentDetection],
                              detections: Sequence[AnomalyScore],
                              eps: float) -> None:
    chosen = {(d.edge_ref, d.pseudo_label) for d in selected}
    ps = np.asarray([d.p for d in detections])
    ent = np.atleast_1d(detection_entropy(ps, eps))
    for label in (0, 1):
        sel, rest = [], []
        for i, d in enumerate(detections):
            lab = 1 if d.p > 0.5 else 0
            if lab != label:
                continue
            ref = d.edge_ref if d.edge_ref is not None else int(i)
            (sel if (ref, label) in chosen else rest).append(ent[i])
        if sel and rest and max(sel) > min(rest) + 1e-12:
            raise RuntimeError("entropy selection violated its optimality "
                               f"invariant in class {label}")


def embed_graph(model: DetectorModel, g: DynamicGraph, k: int, cap: int,
                batch_size: int = 256) -> np.ndarray:
    """Embed every edge of ``g`` (no gradients); returns an (m, d_p) matrix."""
    egos = [extract_ego(g, i, k, cap) for i in range(len(g))]
    out = []
    with torch.no_grad():
        for lo in range(0, len(egos), batch_size):
            h0, adj, mask = pad_egos(egos[lo:lo + batch_size],
                                     model.encoder.time_dim)
            out.append(encode_batch(h0, adj, mask, model.encoder).numpy())
    return np.concatenate(out, axis=0)


def score_graph(model: DetectorModel, g: DynamicGraph, k: int, cap: int,
                batch_size: int = 256
                ) -> tuple[list[AnomalyScore], np.ndarray]:
    """Score every edge of ``g``; returns (detections, embeddings)."""
    z = embed_graph(model, g, k, cap, batch_size)
    with torch.no_grad():
        s, p = similarity_gap(torch.as_tensor(z), model.stats)
    s, p = s.numpy(), p.numpy()
    detections = [AnomalyScore(s=float(s[i]), p=float(p[i]), s_n=0.0, s_a=0.0,
                               edge_ref=i) for i in range(len(g))]
    return detections, z


def adapt_target(model: DetectorModel, buffer: PrototypeBuffer,
                 target: DynamicGraph, n_con: int, epochs: int, *,
                 k: int = 2, cap: int = 32, batch_size: int = 128,
                 lr: float = 1e-3, proto_lr: float = 5e-2,
                 lambda_d: float = 0.3, lambda_e: float = 0.7,
                 strategy: str = "entropy", update_scope: str = "model",
                 rescore_sample: int = 1024, sd_mode: str = "per_dim",
                 align_norm: str = "mean", seed: int = 0) -> AdaptResult:
    """Self-adapt on an unlabeled target stream via confident pseudo-labels.

    Scores all target edges, selects confident detections, then for ``epochs``
    rounds re-encodes them and minimizes the alignment loss alone, refreshing
    statistics and the buffer each round. ``update_scope="model"`` trains the
    encoder together with the prototypes; ``"prototypes"`` freezes the encoder.
    With ``n_con <= 0`` the inputs come back untouched.
    """
    if n_con <= 0 or epochs <= 0:
        return AdaptResult(model=model, buffer=buffer, selected=[],
                           align_losses=[])
    if (target.labels != UNKNOWN).any():
        raise ValueError("target labels must be unknown; strip ground truth "
                         "before adaptation")
    if update_scope not in ("model", "prototypes"):
        raise ValueError(f"update_scope must be 'model' or 'prototypes', "
                         f"got {update_scope!r}")

    model = copy.deepcopy(model)
    buffer = copy.deepcopy(buffer)
    rng = np.random.default_rng(seed)

    detections, z0 = score_graph(model, target, k, cap)
    selected = select_confident(detections, n_con, strategy=strategy,
                                embeddings=z0, pair=model.snapshot_pair(),
                                rng=rng)
    if strategy == "entropy":
        _check_entropy_optimality(selected, detections, eps=1e-7)
    if not selected:
        warnings.warn("no confident detections; adaptation skipped", stacklevel=2)
        return AdaptResult(model=model, buffer=buffer, selected=[],
                           align_losses=[])
    labels_present = {d.pseudo_label for d in selected}
    if len(labels_present) < 2:
        warnings.warn(f"confident detections cover only class "
                      f"{labels_present.pop()}; proceeding single-class",
                      stacklevel=2)

    conf_idx = np.asarray([d.edge_ref for d in selected], dtype=np.int64)
    pseudo = np.asarray([d.pseudo_label for d in selected], dtype=np.float64)
    egos = [extract_ego(target, int(i), k, cap) for i in conf_idx]
    h0, adj, mask = pad_egos(egos, model.encoder.time_dim)
    pseudo_t = torch.as_tensor(pseudo)

    if buffer:
        kind = RETENTION if buffer.has_retention_scores() else DIFFERENCE
        best = buffer.best(kind)
        model.set_pair(best.p_n, best.p_a)

    if update_scope == "model":
        opt = torch.optim.Adam([
            {"params": model.encoder.parameters(), "lr": lr},
            {"params": [model.p_n, model.p_a], "lr": proto_lr},
        ])
    else:
        opt = torch.optim.Adam([model.p_n, model.p_a], lr=proto_lr)

    n = conf_idx.shape[0]
    losses: list[float] = []
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            sel = torch.as_tensor(order[lo:lo + batch_size])
            z = encode_batch(h0[sel], adj[sel], mask[sel], model.encoder)
            loss = alignment_loss(z, pseudo_t[sel], (model.p_n, model.p_a))
            if align_norm == "mean":
                loss = loss / sel.shape[0]
            opt.zero_grad()
            loss.backward()
            opt.step()

        with torch.no_grad():
            z_all = encode_batch(h0, adj, mask, model.encoder)
            losses.append(float(alignment_loss(z_all, pseudo_t,
                                               (model.p_n, model.p_a))))
        update_means(model.stats, buffer)
        update_covariances(model.stats, buffer)
        z_np = z_all.numpy()
        sample = z_np if z_np.shape[0] <= rescore_sample else \
            z_np[rng.choice(z_np.shape[0], size=rescore_sample, replace=False)]
        if buffer:
            buffer.rescore(sample, lambda_d, lambda_e)
        pair = model.snapshot_pair(origin="target", sd_mode=sd_mode)
        pair.s_r = retention_score(pair.s_d, similarity_score(pair, sample),
                                   lambda_d, lambda_e)
        buffer.insert(pair, RETENTION)

    return AdaptResult(model=model, buffer=buffer, selected=selected,
                       align_losses=losses)
