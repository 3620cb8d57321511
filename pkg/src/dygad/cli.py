"""Command-line interface.

Subcommands: synth, inject, pretrain, adapt, score, evaluate. Metrics print as
key=value records followed by a table. All commands are deterministic given
their seed arguments.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .adapt import adapt_target
from .checkpoint import load_checkpoint, save_checkpoint
from .dyngraph import UNKNOWN, load_edge_list, inject_anomalies, save_edge_list
from .harness import ExperimentConfig, PretrainResult, pretrain, score_rows
from .metrics import auprc, auroc
from .synth import SynthSpec, generate_synthetic


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dygad",
        description="dynamic-graph edge anomaly detection with prototype memory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic temporal graph")
    p.add_argument("--out", required=True)
    p.add_argument("--communities", type=int, default=2)
    p.add_argument("--nodes", type=int, default=120)
    p.add_argument("--edges", type=int, default=1500)
    p.add_argument("--time-span", type=float, default=100.0)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--feature-shift", type=float, default=0.0)
    p.add_argument("--rate-gamma", type=float, default=1.0)
    p.add_argument("--inter-rate", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inject", help="inject disconnected-pair anomalies")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("pretrain", help="pretrain on the configured sources")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("adapt", help="self-adapt a checkpoint to a target stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--strategy", default=None)
    p.add_argument("--n-con", type=int, default=None,
                   help="confident detections per class (overrides fraction)")
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("score", help="score edges with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)

    p = sub.add_parser("evaluate", help="compute AUROC/AUPRC from a score file")
    p.add_argument("scores", help="CSV with 'score' and 'label' columns")
    return parser


def _config_from(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config) if args.config \
        else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config = ExperimentConfig(**{**vars_of(config), "seed": args.seed})
    if getattr(args, "strategy", None):
        config = ExperimentConfig(**{**vars_of(config),
                                     "strategy": args.strategy})
    return config


def vars_of(config: ExperimentConfig) -> dict:
    import dataclasses
    return {f.name: getattr(config, f.name)
            for f in dataclasses.fields(config)}


def _cmd_synth(args) -> int:
    spec = SynthSpec(communities=args.communities, nodes=args.nodes,
                     edges=args.edges, time_span=args.time_span,
                     feature_dim=args.feature_dim,
                     feature_shift=args.feature_shift,
                     rate_gamma=args.rate_gamma, inter_rate=args.inter_rate)
    g = generate_synthetic(spec, args.seed)
    save_edge_list(g, args.out)
    print(f"wrote {len(g)} edges, {g.num_nodes} nodes -> {args.out}")
    return 0


def _cmd_inject(args) -> int:
    g = load_edge_list(args.input)
    out = inject_anomalies(g, args.ratio, args.seed)
    save_edge_list(out, args.output)
    print(f"injected {len(out) - len(g)} anomalies "
          f"({len(g)} -> {len(out)} edges) -> {args.output}")
    return 0


def _cmd_pretrain(args) -> int:
    config = _config_from(args)
    result = pretrain(config)
    save_checkpoint(args.out, result.model, result.buffer,
                    extra_meta={"config": {"seed": config.seed}})
    print(f"pretrained on {len(config.sources)} sources; "
          f"buffer holds {len(result.buffer)} pairs -> {args.out}")
    return 0


def _cmd_adapt(args) -> int:
    config = _config_from(args)
    model, buffer, _ = load_checkpoint(args.checkpoint)
    g = load_edge_list(args.target)
    if (g.labels != UNKNOWN).any():
        warnings.warn("target stream carries labels; stripping them for "
                      "adaptation")
        g = g.strip_labels()
    n_con = args.n_con if args.n_con is not None \
        else int(config.n_con_frac * len(g))
    result = adapt_target(model, buffer, g, n_con, config.adapt_epochs,
                          k=config.k, cap=config.ego_cap,
                          batch_size=config.batch_size, lr=config.lr,
                          proto_lr=config.proto_lr,
                          lambda_d=config.lambda_diff,
                          lambda_e=config.lambda_sim,
                          strategy=config.strategy,
                          update_scope=config.adapt_update,
                          rescore_sample=config.rescore_sample,
                          sd_mode=config.sd_mode, seed=config.seed)
    save_checkpoint(args.out, result.model, result.buffer,
                    extra_meta={"adapted": True})
    print(f"adapted with {len(result.selected)} pseudo-labels -> {args.out}")
    return 0


def _cmd_score(args) -> int:
    config = _config_from(args)
    model, _, _ = load_checkpoint(args.checkpoint)
    g = load_edge_list(args.input)
    scores = score_rows(model, g, np.arange(len(g)), config)
    probs = 1.0 / (1.0 + np.exp(-scores))
    with Path(args.out).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "time", "label", "score", "p"])
        for i in range(len(g)):
            writer.writerow([int(g.src[i]), int(g.dst[i]),
                             repr(float(g.time[i])), int(g.labels[i]),
                             repr(float(scores[i])), repr(float(probs[i]))])
    print(f"scored {len(g)} edges -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    scores, labels = [], []
    with Path(args.scores).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "score" not in reader.fieldnames \
                or "label" not in reader.fieldnames:
            print("error: score file needs 'score' and 'label' columns",
                  file=sys.stderr)
            return 1
        for row in reader:
            label = int(row["label"])
            if label == UNKNOWN:
                continue
            scores.append(float(row["score"]))
            labels.append(label)
    try:
        a_roc = auroc(scores, labels)
        a_prc = auprc(scores, labels)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"auroc={a_roc:.4f}")
    print(f"auprc={a_prc:.4f}")
    print()
    head = f"{'metric':<8} {'value':>8}"
    print(head)
    print("-" * len(head))
    print(f"{'auroc':<8} {a_roc:>8.4f}")
    print(f"{'auprc':<8} {a_prc:>8.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "inject": _cmd_inject,
    "pretrain": _cmd_pretrain,
    "adapt": _cmd_adapt,
    "score": _cmd_score,
    "evaluate": _cmd_evaluate,
}


def cli(argv=None) -> int:
    """Run the CLI on ``argv``; returns the exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, LookupError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    sys.exit(cli())
