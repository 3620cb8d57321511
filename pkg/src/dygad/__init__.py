"""Generalist dynamic-graph edge anomaly detection with prototype memory and
entropy-gated self-adaptation to unlabeled target streams."""

from .dyngraph import (UNKNOWN, DynamicGraph, Edge, EdgeListSchema, Interval,
                       SplitSpec, inject_anomalies, load_edge_list,
                       save_edge_list, split_intervals, temporal_split)
from .egograph import (TemporalEgoGraph, build_initial_features,
                       edge_adjacency, extract_ego)
from .encoder import (EdgeEmbedding, EncoderParams, attention_pool, encode,
                      encode_batch, gnn_forward, parameter_gradients,
                      residual_center)
from .prototypes import (DIFFERENCE, RETENTION, PrototypeBuffer, PrototypePair,
                         alignment_loss, difference_score, retention_score,
                         similarity_score)
from .scorer import (AnomalyScore, DetectorModel, DistributionStats, bce_loss,
                     score_edge, total_loss, update_covariances, update_means)
from .adapt import (ConfidentDetection, adapt_target, detection_entropy,
                    select_confident)
from .metrics import auprc, auroc
from .synth import SynthSpec, generate_synthetic
from .checkpoint import CheckpointFormatError, load_checkpoint, save_checkpoint
from .harness import (ExperimentConfig, MetricRecord, MetricReport,
                      PretrainResult, pretrain, run_benchmark, run_target)

__version__ = "0.1.0"
