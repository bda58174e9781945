"""Portable checkpoints: a numpy ``.npz`` archive keyed by canonical names.

Layout (format version 1)::

    __meta__            uint8 JSON blob: format, version, config, vocab,
                        parameter manifest [[name, shape], ...], extra
    emb.matrix          N x d_e frozen embedding rows (row i = vocab id i)
    enc.fw.mha.WQ ...   one float64 array per trainable parameter

Every array is stored C-ordered (row-major). ``parameter_manifest`` lists
the trainable names and shapes for a given config; the archive must
contain exactly those.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import EmbeddingTable, Vocabulary
from .encoder import ModelConfig
from .nli import NLIModel

FORMAT = "dsan-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def parameter_manifest(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical parameter names and shapes for ``config``, in storage order."""
    shell = NLIModel(config, EmbeddingTable(np.zeros((2, config.d_e))), seed=0)
    return [(name, p.shape) for name, p in shell.named_parameters().items()]


def save_checkpoint(path, model: NLIModel, extra: dict | None = None) -> Path:
    path = Path(path)
    params = model.named_parameters()
    meta = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "vocab": model.vocab.itos if model.vocab is not None else None,
        "parameters": [[name, list(p.shape)] for name, p in params.items()],
        "extra": extra or {},
    }
    arrays = {name: np.ascontiguousarray(p.data) for name, p in params.items()}
    arrays["emb.matrix"] = np.ascontiguousarray(model.embeddings.matrix)
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def read_meta(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as z:
        if "__meta__" not in z.files:
            raise CheckpointError(f"{path}: not a {FORMAT} archive (no __meta__)")
        return json.loads(z["__meta__"].tobytes().decode("utf-8"))


def load_checkpoint(path) -> NLIModel:
    path = Path(path)
    try:
        z = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    with z:
        if "__meta__" not in z.files:
            raise CheckpointError(f"{path}: not a {FORMAT} archive (no __meta__)")
        meta = json.loads(z["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format") != FORMAT or meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format {meta.get('format')} v{meta.get('version')}")
        config = ModelConfig(**meta["config"])
        vocab = None
        if meta.get("vocab") is not None:
            vocab = Vocabulary(meta["vocab"][2:])
        model = NLIModel(config, EmbeddingTable(z["emb.matrix"]), vocab, seed=0)
        params = model.named_parameters()
        stored = set(z.files) - {"__meta__", "emb.matrix"}
        if stored != set(params):
            missing, unknown = sorted(set(params) - stored), sorted(stored - set(params))
            raise CheckpointError(f"{path}: parameter names differ; missing={missing} unknown={unknown}")
        for name, p in params.items():
            arr = z[name]
            if arr.shape != p.shape:
                raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {p.shape}")
            p.data = np.array(arr, dtype=np.float64)
    return model
