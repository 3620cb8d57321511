"""Versioned checkpoint persistence: model weights, statistics, and the
prototype buffer in one ``.npz`` container.

Layout: key ``meta`` holds a JSON document (format version, encoder
architecture, statistics settings, buffer entry metadata, optional user
metadata); ``model/<name>`` holds each state-dict tensor; ``buffer/<i>/p_n``
and ``buffer/<i>/p_a`` hold the stored prototype vectors.
"""

from __future__ import annotations

import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .encoder import EncoderParams
from .prototypes import PrototypeBuffer, PrototypePair
from .scorer import DetectorModel

FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    """The file is not a readable checkpoint of a supported version."""


def save_checkpoint(path, model: DetectorModel, buffer: PrototypeBuffer,
                    extra_meta: dict | None = None) -> None:
    """Write model + buffer to ``path``; the round trip is lossless."""
    meta = {
        "format_version": FORMAT_VERSION,
        "arch": model.encoder.arch(),
        "stats": {"alpha": model.stats.alpha, "mode": model.stats.mode},
        "buffer": {
            "capacity": buffer.capacity,
            "entries": [{"s_d": e.s_d, "s_r": e.s_r, "origin": e.origin}
                        for e in buffer.entries],
        },
        "extra": extra_meta or {},
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"),
                                    dtype=np.uint8)}
    for name, tensor in model.state_dict().items():
        arrays[f"model/{name}"] = tensor.detach().numpy()
    for i, e in enumerate(buffer.entries):
        arrays[f"buffer/{i}/p_n"] = e.p_n
        arrays[f"buffer/{i}/p_a"] = e.p_a
    np.savez(Path(path), **arrays)


def load_checkpoint(path) -> tuple[DetectorModel, PrototypeBuffer, dict]:
    """Rebuild (model, buffer, extra_meta) from ``path``.

    Raises CheckpointFormatError on truncated files, unknown versions, or
    missing arrays; nothing is partially loaded.
    """
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            contents = {k: data[k] for k in data.files}
    except (zipfile.BadZipFile, OSError, ValueError, KeyError) as exc:
        raise CheckpointFormatError(f"{path}: not a readable checkpoint "
                                    f"({exc})") from exc
    if "meta" not in contents:
        raise CheckpointFormatError(f"{path}: missing metadata record")
    try:
        meta = json.loads(bytes(contents["meta"]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: corrupt metadata") from exc
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: format version {version!r} "
                                    f"unsupported (expected {FORMAT_VERSION})")

    arch = meta["arch"]
    encoder = EncoderParams(arch["edge_feat_dim"], time_dim=arch["time_dim"],
                            hidden_dims=tuple(arch["hidden_dims"]),
                            attn_dim=arch["attn_dim"],
                            proto_dim=arch["proto_dim"],
                            activation=arch["activation"])
    model = DetectorModel(encoder, alpha=meta["stats"]["alpha"],
                          stats_mode=meta["stats"]["mode"])
    state = {}
    for key, arr in contents.items():
        if key.startswith("model/"):
            state[key[len("model/"):]] = torch.as_tensor(arr)
    try:
        model.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointFormatError(f"{path}: state mismatch ({exc})") from exc

    buf_meta = meta["buffer"]
    buffer = PrototypeBuffer(buf_meta["capacity"])
    for i, entry in enumerate(buf_meta["entries"]):
        key_n, key_a = f"buffer/{i}/p_n", f"buffer/{i}/p_a"
        if key_n not in contents or key_a not in contents:
            raise CheckpointFormatError(f"{path}: buffer entry {i} arrays missing")
        pair = PrototypePair(p_n=contents[key_n].astype(np.float64),
                             p_a=contents[key_a].astype(np.float64),
                             s_d=float(entry["s_d"]),
                             s_r=None if entry["s_r"] is None
                             else float(entry["s_r"]),
                             origin=entry["origin"])
        buffer.entries.append(pair)
    return model, buffer, meta.get("extra", {})
