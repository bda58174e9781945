"""Adam, the training loop, accuracy evaluation and length-bucketed evaluation."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import LABELS, EmbeddingTable, NLIExample, Vocabulary, make_batches
from .encoder import ModelConfig
from .layers import ConfigError
from .nli import NLIModel
from .tensor import NumericError, Tensor, no_grad

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "train_acc", "valid_acc", "seconds")


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    h: int = 5
    alpha: float = 1.5
    dropout: float = 0.1
    d_e: int = 300
    d_ff: int = 1200
    d_h: int = 300
    epochs: int = 10
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    norm: str = "post"

    def model_config(self) -> ModelConfig:
        return ModelConfig(d_e=self.d_e, h=self.h, d_ff=self.d_ff, d_h=self.d_h,
                           alpha=self.alpha, dropout=self.dropout, norm=self.norm)

    def validate(self) -> "TrainConfig":
        self.model_config().validate()
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("learning_rate, batch_size and epochs must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("Adam betas must be in [0, 1) and eps positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls({k: np.zeros_like(p.data) for k, p in params.items()},
                   {k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict[str, Tensor], state: AdamState, config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update, in place. Missing grads count as zero.

    A non-finite gradient aborts the step before anything is written.
    """
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise NumericError(f"non-finite gradient in parameter {name}; step aborted")
    state.t += 1
    b1, b2, lr, eps = config.adam_beta1, config.adam_beta2, config.learning_rate, config.adam_eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad if p.grad is not None else 0.0
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * np.square(g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    count: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "count": self.count, "labels": list(LABELS),
                "confusion": self.confusion.tolist()}


def _resolve(model) -> NLIModel:
    return model if isinstance(model, NLIModel) else load_checkpoint(model)


def predict(dataset: Sequence[NLIExample], model, batch_size: int = 64) -> np.ndarray:
    """Argmax labels (ties to the lowest label id), dropout off."""
    model = _resolve(model)
    preds = []
    with no_grad():
        for prem, hyp, _ in make_batches(dataset, batch_size):
            preds.append(np.argmax(model.forward(prem, hyp).data, axis=-1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


def evaluate(dataset: Sequence[NLIExample], model, batch_size: int = 64) -> EvalResult:
    """Accuracy plus a confusion matrix (rows gold, columns predicted)."""
    gold = np.array([e.label for e in dataset], dtype=np.int64)
    pred = predict(dataset, model, batch_size)
    confusion = np.zeros((len(LABELS), len(LABELS)), dtype=np.int64)
    np.add.at(confusion, (gold, pred), 1)
    acc = float((gold == pred).mean()) if len(gold) else float("nan")
    return EvalResult(acc, confusion, len(gold))


@dataclass
class LengthBucket:
    lo: float
    hi: float
    count: int
    accuracy: float | None


def evaluate_by_length(dataset: Sequence[NLIExample], model, bucket_edges: Sequence[float],
                       batch_size: int = 64) -> list[LengthBucket]:
    """Accuracy per bucket of average premise/hypothesis length.

    Edges ``e0 < e1 < ... < ek`` give buckets ``[e0, e1), ..., [ek, inf)``.
    """
    edges = np.asarray(sorted(bucket_edges), dtype=np.float64)
    if edges.size == 0:
        raise ValueError("need at least one bucket edge")
    avg = np.array([(len(e.premise) + len(e.hypothesis)) / 2.0 for e in dataset])
    if avg.size and avg.min() < edges[0]:
        raise ValueError(f"first edge {edges[0]} is above the shortest average length {avg.min()}")
    gold = np.array([e.label for e in dataset], dtype=np.int64)
    correct = predict(dataset, model, batch_size) == gold
    which = np.searchsorted(edges, avg, side="right") - 1
    rows = []
    for k, lo in enumerate(edges):
        hi = edges[k + 1] if k + 1 < edges.size else math.inf
        sel = which == k
        n = int(sel.sum())
        rows.append(LengthBucket(float(lo), float(hi), n, float(correct[sel].mean()) if n else None))
    return rows


def write_length_table(rows: Sequence[LengthBucket], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket_lo", "bucket_hi", "count", "accuracy"])
        for r in rows:
            w.writerow([repr(r.lo), repr(r.hi), r.count, "" if r.accuracy is None else repr(r.accuracy)])


@dataclass
class TrainResult:
    model: NLIModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = -math.inf
    best_params: dict[str, np.ndarray] = field(default_factory=dict)
    clamped: int = 0

    def restore_best(self) -> NLIModel:
        for name, p in self.model.named_parameters().items():
            p.data = self.best_params[name].copy()
        return self.model


def train_loop(train: Sequence[NLIExample], valid: Sequence[NLIExample], config: TrainConfig,
               embeddings: EmbeddingTable, vocab: Vocabulary | None = None,
               out_dir=None, model: NLIModel | None = None) -> TrainResult:
    """Fixed epoch budget; keep the parameters with the best validation accuracy.

    Without a validation set, training accuracy picks the best epoch. With
    ``out_dir``, writes ``best.ckpt`` on every improvement and appends a row
    per epoch to ``metrics.csv``.
    """
    config.validate()
    if len(train) == 0:
        raise ConfigError("training set is empty")
    if model is None:
        model = NLIModel(config.model_config(), embeddings, vocab, seed=config.seed)
    params = model.named_parameters()
    state = AdamState.init(params)
    dropout_rng = np.random.default_rng([config.seed, 1])
    result = TrainResult(model)

    metrics_path = ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path, ckpt_path = out_dir / "metrics.csv", out_dir / "best.ckpt"
        with metrics_path.open("w", newline="") as fh:
            csv.writer(fh).writerow(METRICS_HEADER)

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        total_loss, correct, seen = 0.0, 0, 0
        for prem, hyp, labels in make_batches(train, config.batch_size, shuffle=True,
                                              seed=config.seed * 100003 + epoch):
            for p in params.values():
                p.grad = None
            loss, probs, clamped = model.loss(prem, hyp, labels, training=True, rng=dropout_rng)
            if clamped:
                result.clamped += clamped
                log.warning("epoch %d: %d gold probabilities clamped at 1e-12", epoch, clamped)
            loss.backward()
            adam_step(params, state, config)
            total_loss += loss.item() * len(labels)
            correct += int((np.argmax(probs.data, axis=-1) == labels).sum())
            seen += len(labels)
        train_loss, train_acc = total_loss / seen, correct / seen
        valid_acc = evaluate(valid, model, config.batch_size).accuracy if len(valid) else float("nan")
        seconds = time.perf_counter() - start
        row = {"epoch": epoch, "train_loss": train_loss, "train_acc": train_acc,
               "valid_acc": valid_acc, "seconds": seconds}
        result.history.append(row)
        log.info("epoch %d  loss %.4f  train %.4f  valid %.4f  (%.1fs)",
                 epoch, train_loss, train_acc, valid_acc, seconds)
        if metrics_path is not None:
            with metrics_path.open("a", newline="") as fh:
                csv.writer(fh).writerow([row[k] for k in METRICS_HEADER])

        score = valid_acc if len(valid) else train_acc
        if score > result.best_score:
            result.best_score, result.best_epoch = score, epoch
            result.best_params = {k: p.data.copy() for k, p in params.items()}
            if ckpt_path is not None:
                save_checkpoint(ckpt_path, model, extra={"epoch": epoch, "score": score,
                                                         "train_config": config.to_dict()})
    return result
