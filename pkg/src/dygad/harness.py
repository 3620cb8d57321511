"""Experiment orchestration: sequential multi-source pretraining, target
adaptation and evaluation, configuration, and the synthetic two-domain
benchmark used for desk-scale validation.

Pretraining walks the source datasets in order. Each epoch re-seeds the live
prototype pair from the buffer (best difference score while on the first
dataset, best retention score afterwards), trains encoder + prototypes +
quadratic weights on the combined BCE/alignment objective over time-ordered
interval minibatches, momentum-updates the class statistics from the buffer,
and snapshots one prototype pair into the buffer.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import adapt as adapt_mod
from .adapt import adapt_target
from .dyngraph import (UNKNOWN, DynamicGraph, SplitSpec, inject_anomalies,
                       load_edge_list, split_intervals, temporal_split)
from .egograph import extract_ego
from .encoder import EncoderParams, encode_batch, pad_egos
from .metrics import auprc, auroc
from .prototypes import (DIFFERENCE, RETENTION, PrototypeBuffer,
                         alignment_loss, retention_score, similarity_score)
from .scorer import (DetectorModel, bce_loss, similarity_gap, total_loss,
                     update_covariances, update_means)
from .synth import SynthSpec, generate_synthetic

logger = logging.getLogger("dygad")

# seed-derivation tags
_TAG_ENCODER, _TAG_PROTO, _TAG_SHUFFLE, _TAG_ADAPT = 0, 1, 2, 3
_TAG_INJECT, _TAG_DOMAIN, _TAG_SAMPLE = 4, 5, 6


def derive_seed(base: int, *key: int) -> int:
    """Stable sub-seed for a (base seed, purpose) pair."""
    ss = np.random.SeedSequence(base, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


@dataclass
class ExperimentConfig:
    """All knobs of a run; (config, seed) fixes the outcome bit-for-bit."""

    sources: tuple[str, ...] = ()
    targets: tuple[str, ...] = ()
    k: int = 2                      # ego-graph hops
    ego_cap: int = 32               # max edges kept per ego-graph
    time_dim: int = 8               # sinusoidal lag-encoding width
    hidden_dims: tuple[int, ...] = (64, 64)
    attn_dim: int = 64
    proto_dim: int = 32
    m_frac: float = 0.10            # buffer capacity as fraction of train edges
    buffer_capacity: int | None = None  # explicit override of m_frac sizing
    n_con_frac: float = 0.10        # confident detections per class, fraction
    alpha: float = 0.9              # statistics momentum
    lambda_align: float = 0.1
    lambda_bce: float = 0.9
    lambda_diff: float = 0.3
    lambda_sim: float = 0.7
    anomaly_ratios: tuple[float, ...] = (0.10,)
    epochs: int = 12
    adapt_epochs: int = 4
    lr: float = 1e-3
    proto_lr: float = 5e-2
    batch_size: int = 128
    intervals: int = 10
    train_frac: float = 0.5         # target adapt/test temporal split
    rescore_sample: int = 1024
    strategy: str = "entropy"
    adapt_update: str = "model"     # "model" or "prototypes"
    sd_mode: str = "per_dim"
    stats_mode: str = "mean"
    stats_init: str = "random"      # "zero" reproduces stats-from-nothing runs
    align_norm: str = "mean"        # training-time alignment scaling per batch
    seed: int = 0

    def __post_init__(self):
        for name in ("m_frac", "n_con_frac", "train_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("lambda_align", "lambda_bce", "lambda_diff", "lambda_sim"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        for r in self.anomaly_ratios:
            if not 0.0 < r <= 1.0:
                raise ValueError(f"anomaly ratio must lie in (0, 1], got {r}")

    def to_file(self, path) -> None:
        lines = ["# dygad experiment configuration"]
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8")
                                      .splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        kwargs = {}
        for name, text in raw.items():
            kwargs[name] = _parse_field(known[name], text)
        return cls(**kwargs)


def _parse_field(f: dataclasses.Field, text: str):
    if f.name in ("sources", "targets"):
        return tuple(s.strip() for s in text.split(",") if s.strip())
    if f.name in ("hidden_dims",):
        return tuple(int(s) for s in text.split(",") if s.strip())
    if f.name in ("anomaly_ratios",):
        return tuple(float(s) for s in text.split(",") if s.strip())
    if f.name == "buffer_capacity":
        return None if text.lower() in ("none", "") else int(text)
    if f.type in ("int", int):
        return int(text)
    if f.type in ("float", float):
        return float(text)
    return text


@dataclass(frozen=True)
class MetricRecord:
    dataset: str
    ratio: float
    auroc: float
    auprc: float
    n_edges: int
    n_anomalies: int


@dataclass
class MetricReport:
    """Per-dataset, per-ratio evaluation results."""

    records: list[MetricRecord] = field(default_factory=list)

    def key_values(self) -> list[str]:
        return [f"dataset={r.dataset} ratio={r.ratio:g} auroc={r.auroc:.4f} "
                f"auprc={r.auprc:.4f} edges={r.n_edges} anomalies={r.n_anomalies}"
                for r in self.records]

    def table(self) -> str:
        head = f"{'dataset':<20} {'ratio':>6} {'auroc':>8} {'auprc':>8}"
        rows = [head, "-" * len(head)]
        rows += [f"{r.dataset:<20} {r.ratio:>6g} {r.auroc:>8.4f} {r.auprc:>8.4f}"
                 for r in self.records]
        return "\n".join(rows)

    def mean_auroc(self) -> float:
        return float(np.mean([r.auroc for r in self.records]))

    def mean_auprc(self) -> float:
        return float(np.mean([r.auprc for r in self.records]))


@dataclass
class PretrainResult:
    model: DetectorModel
    buffer: PrototypeBuffer
    loss_log: list[dict]


def _load_sources(config: ExperimentConfig,
                  sources) -> list[tuple[str, DynamicGraph]]:
    if sources is not None:
        return [(getattr(g, "name", f"source{i}"), g)
                for i, g in enumerate(sources)]
    if not config.sources:
        raise ValueError("no source datasets configured")
    return [(Path(p).stem, load_edge_list(p)) for p in config.sources]


def _prepared_batch(g: DynamicGraph, config: ExperimentConfig):
    egos = [extract_ego(g, i, config.k, config.ego_cap) for i in range(len(g))]
    h0, adj, mask = pad_egos(egos, config.time_dim)
    return h0, adj, mask


def _embed_rows(model: DetectorModel, h0, adj, mask, rows,
                batch_size: int) -> torch.Tensor:
    out = []
    with torch.no_grad():
        for lo in range(0, len(rows), batch_size):
            sel = torch.as_tensor(rows[lo:lo + batch_size])
            out.append(encode_batch(h0[sel], adj[sel], mask[sel], model.encoder))
    return torch.cat(out, dim=0)


def buffer_capacity_for(config: ExperimentConfig, train_edges: int) -> int:
    if config.buffer_capacity is not None:
        return config.buffer_capacity
    return max(4, min(4096, int(config.m_frac * train_edges)))


def pretrain(config: ExperimentConfig,
             sources: Sequence[DynamicGraph] | None = None) -> PretrainResult:
    """Sequential multi-source pretraining; returns model + buffer + loss log."""
    named = _load_sources(config, sources)
    for name, g in named:
        if len(g) == 0:
            raise ValueError(f"source {name!r} is empty")
        if (g.labels == UNKNOWN).any():
            raise ValueError(f"source {name!r} has unlabeled edges; "
                             "pretraining needs ground truth (inject first)")
    dims = {g.feature_dim for _, g in named}
    if len(dims) > 1:
        raise ValueError(f"source feature dimensions differ: {sorted(dims)}; "
                         "all datasets of a run must share one edge schema")
    feat_dim = dims.pop()
    total_edges = sum(len(g) for _, g in named)

    encoder = EncoderParams(feat_dim, time_dim=config.time_dim,
                            hidden_dims=config.hidden_dims,
                            attn_dim=config.attn_dim,
                            proto_dim=config.proto_dim,
                            seed=derive_seed(config.seed, _TAG_ENCODER))
    model = DetectorModel(encoder, alpha=config.alpha,
                          stats_mode=config.stats_mode,
                          stats_init=config.stats_init,
                          seed=derive_seed(config.seed, _TAG_PROTO))
    buffer = PrototypeBuffer(buffer_capacity_for(config, total_edges))
    proto_gen = torch.Generator().manual_seed(derive_seed(config.seed,
                                                          _TAG_PROTO, 1))
    opt_model = torch.optim.Adam(
        list(model.encoder.parameters())
        + [model.stats.lambda_n, model.stats.lambda_a], lr=config.lr)

    loss_log: list[dict] = []
    for s_idx, (name, g) in enumerate(named):
        first = s_idx == 0
        rng = np.random.default_rng(derive_seed(config.seed, _TAG_SHUFFLE, s_idx))
        h0, adj, mask = _prepared_batch(g, config)
        y = torch.as_tensor(g.labels.astype(np.float64))
        t_eff = min(config.intervals, np.unique(g.time).shape[0])
        intervals = split_intervals(g, t_eff)
        sample_rows = np.sort(rng.choice(
            len(g), size=min(config.rescore_sample, len(g)), replace=False))

        if not first and buffer:
            z0 = _embed_rows(model, h0, adj, mask, sample_rows, 256).numpy()
            buffer.rescore(z0, config.lambda_diff, config.lambda_sim)

        for epoch in range(config.epochs):
            if buffer:
                kind = DIFFERENCE if first else RETENTION
                best = buffer.best(kind)
                model.set_pair(best.p_n, best.p_a)
            else:
                model.randomize_pair(proto_gen)
            opt_proto = torch.optim.Adam([model.p_n, model.p_a],
                                         lr=config.proto_lr)

            epoch_loss = epoch_bce = epoch_align = 0.0
            for interval in intervals:
                perm = rng.permutation(interval.indices)
                for lo in range(0, perm.shape[0], config.batch_size):
                    sel = torch.as_tensor(perm[lo:lo + config.batch_size])
                    z = encode_batch(h0[sel], adj[sel], mask[sel], model.encoder)
                    _, p = similarity_gap(z, model.stats)
                    l_bce = bce_loss(p, y[sel])
                    l_align = alignment_loss(z, y[sel], (model.p_n, model.p_a))
                    if config.align_norm == "mean":
                        l_align = l_align / sel.shape[0]
                    loss = total_loss(l_bce, l_align,
                                      config.lambda_bce, config.lambda_align)
                    opt_model.zero_grad()
                    opt_proto.zero_grad()
                    loss.backward()
                    opt_model.step()
                    opt_proto.step()
                    epoch_loss += loss.item()
                    epoch_bce += l_bce.item()
                    epoch_align += l_align.item()

            if buffer:
                update_means(model.stats, buffer)
                update_covariances(model.stats, buffer)

            z_sample = _embed_rows(model, h0, adj, mask, sample_rows, 256).numpy()
            pair = model.snapshot_pair(origin=name, sd_mode=config.sd_mode)
            if first:
                buffer.insert(pair, DIFFERENCE)
            else:
                buffer.rescore(z_sample, config.lambda_diff, config.lambda_sim)
                s_e = similarity_score(pair, z_sample)
                pair.s_r = retention_score(pair.s_d, s_e, config.lambda_diff,
                                           config.lambda_sim)
                buffer.insert(pair, RETENTION)

            entry = {"dataset": name, "epoch": epoch, "loss": epoch_loss,
                     "bce": epoch_bce, "align": epoch_align}
            loss_log.append(entry)
            logger.info("pretrain dataset=%s epoch=%d loss=%.6f bce=%.6f "
                        "align=%.6f", name, epoch, epoch_loss, epoch_bce,
                        epoch_align)

    return PretrainResult(model=model, buffer=buffer, loss_log=loss_log)


def score_rows(model: DetectorModel, g: DynamicGraph, rows: np.ndarray,
               config: ExperimentConfig) -> np.ndarray:
    """Anomaly scores for the given edge rows of ``g`` (ego context from ``g``)."""
    egos = [extract_ego(g, int(i), config.k, config.ego_cap) for i in rows]
    out = []
    with torch.no_grad():
        for lo in range(0, len(egos), 256):
            h0, adj, mask = pad_egos(egos[lo:lo + 256], config.time_dim)
            z = encode_batch(h0, adj, mask, model.encoder)
            s, _ = similarity_gap(z, model.stats)
            out.append(s.numpy())
    return np.concatenate(out, axis=0)


def _merge(a: DynamicGraph, b: DynamicGraph) -> DynamicGraph:
    return DynamicGraph(np.concatenate([a.src, b.src]),
                        np.concatenate([a.dst, b.dst]),
                        np.concatenate([a.time, b.time]),
                        np.concatenate([a.features, b.features]),
                        np.concatenate([a.labels, b.labels]))


def run_target(pretrained: PretrainResult, config: ExperimentConfig,
               targets: Sequence[DynamicGraph] | None = None) -> MetricReport:
    """Adapt to each target's unlabeled prefix, then score its injected suffix.

    The adaptation stream is the temporal prefix (labels stripped); anomalies
    are injected only into the test suffix. One adaptation serves all ratios.
    """
    if targets is not None:
        named = [(getattr(g, "name", f"target{i}"), g)
                 for i, g in enumerate(targets)]
    else:
        if not config.targets:
            raise ValueError("no target datasets configured")
        named = [(Path(p).stem, load_edge_list(p)) for p in config.targets]

    report = MetricReport()
    for t_idx, (name, g) in enumerate(named):
        adapt_g, test_g = temporal_split(g, SplitSpec(config.train_frac))
        adapt_g = adapt_g.strip_labels()
        n_con = int(config.n_con_frac * len(adapt_g))
        result = adapt_target(
            pretrained.model, pretrained.buffer, adapt_g,
            n_con, config.adapt_epochs, k=config.k, cap=config.ego_cap,
            batch_size=config.batch_size, lr=config.lr,
            proto_lr=config.proto_lr, lambda_d=config.lambda_diff,
            lambda_e=config.lambda_sim, strategy=config.strategy,
            update_scope=config.adapt_update,
            rescore_sample=config.rescore_sample, sd_mode=config.sd_mode,
            align_norm=config.align_norm,
            seed=derive_seed(config.seed, _TAG_ADAPT, t_idx))

        for r_idx, ratio in enumerate(config.anomaly_ratios):
            test_injected = inject_anomalies(
                test_g, ratio, seed=derive_seed(config.seed, _TAG_INJECT,
                                                t_idx, r_idx))
            if (test_injected.labels == UNKNOWN).any():
                raise ValueError(f"target {name!r} test stream lacks labels")
            combined = _merge(adapt_g, test_injected)
            test_rows = np.flatnonzero(combined.labels != UNKNOWN)
            scores = score_rows(result.model, combined, test_rows, config)
            labels = combined.labels[test_rows]
            rec = MetricRecord(dataset=name, ratio=ratio,
                               auroc=auroc(scores, labels),
                               auprc=auprc(scores, labels),
                               n_edges=test_rows.shape[0],
                               n_anomalies=int((labels == 1).sum()))
            report.records.append(rec)
            logger.info("evaluate dataset=%s ratio=%g auroc=%.4f auprc=%.4f",
                        name, ratio, rec.auroc, rec.auprc)
    return report


# --------------------------------------------------------------------------
# synthetic two-domain benchmark
# --------------------------------------------------------------------------

BENCH_SOURCE_A = SynthSpec(communities=2, nodes=110, edges=1300,
                           time_span=120.0, feature_dim=8, feature_shift=0.0,
                           feature_scale=2.0, noise=0.15, pair_density=1.2,
                           rate_gamma=1.0, inter_rate=0.04)
BENCH_SOURCE_B = SynthSpec(communities=3, nodes=135, edges=1300,
                           time_span=120.0, feature_dim=8, feature_shift=1.0,
                           feature_scale=2.0, noise=0.15, pair_density=1.2,
                           rate_gamma=1.5, inter_rate=0.04)
BENCH_TARGET = SynthSpec(communities=3, nodes=135, edges=1600,
                         time_span=120.0, feature_dim=8, feature_shift=0.5,
                         feature_scale=2.0, noise=0.15, pair_density=1.2,
                         rate_gamma=0.8, inter_rate=0.04)

BENCH_VARIANTS = ("full", "no_adapt", "no_dpad", "source_a_only",
                  "source_b_only", "random", "threshold", "max_distance",
                  "min_distance")

# variants that reuse the "full" pretraining (they only change adaptation)
ADAPT_ONLY_VARIANTS = ("full", "no_adapt", "random", "threshold",
                       "max_distance", "min_distance")


def benchmark_config(seed: int, **overrides) -> ExperimentConfig:
    base = dict(seed=seed, epochs=12, adapt_epochs=4, buffer_capacity=8,
                anomaly_ratios=(0.10,))
    base.update(overrides)
    return ExperimentConfig(**base)


def benchmark_domains(seed: int) -> tuple[list[DynamicGraph], DynamicGraph]:
    """Two labeled source domains plus one shifted, unlabeled-protocol target."""
    a = generate_synthetic(BENCH_SOURCE_A, derive_seed(seed, _TAG_DOMAIN, 0))
    b = generate_synthetic(BENCH_SOURCE_B, derive_seed(seed, _TAG_DOMAIN, 1))
    t = generate_synthetic(BENCH_TARGET, derive_seed(seed, _TAG_DOMAIN, 2))
    ratio = 0.10
    a = inject_anomalies(a, ratio, derive_seed(seed, _TAG_INJECT, 100))
    b = inject_anomalies(b, ratio, derive_seed(seed, _TAG_INJECT, 101))
    a.name, b.name, t.name = "synth_a", "synth_b", "synth_target"
    return [a, b], t


def run_benchmark(seed: int, variant: str = "full", *,
                  pretrained: PretrainResult | None = None,
                  alpha: float | None = None,
                  ) -> tuple[MetricRecord, PretrainResult]:
    """One benchmark run; returns its metric record and the pretrain result.

    ``pretrained`` may be passed to reuse a "full" pretraining for variants
    that only change the adaptation stage.
    """
    if variant not in BENCH_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; one of {BENCH_VARIANTS}")
    overrides: dict = {}
    if variant == "no_dpad":
        overrides.update(lambda_diff=1.0, lambda_sim=0.0)
    if variant in ("random", "threshold", "max_distance", "min_distance"):
        overrides.update(strategy=variant)
    if variant == "no_adapt":
        overrides.update(n_con_frac=0.0)
    if alpha is not None:
        overrides.update(alpha=alpha)
    config = benchmark_config(seed, **overrides)

    sources, target = benchmark_domains(seed)
    if variant == "source_a_only":
        sources = sources[:1]
    elif variant == "source_b_only":
        sources = sources[1:]

    if pretrained is None:
        pretrained = pretrain(config, sources)
    elif variant not in ADAPT_ONLY_VARIANTS:
        raise ValueError(f"variant {variant!r} needs its own pretraining")
    report = run_target(pretrained, config, [target])
    return report.records[0], pretrained
