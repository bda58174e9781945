"""Siamese NLI classifier over the shared sentence encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import LABELS, EmbeddingTable, SentenceBatch, Vocabulary
from .encoder import EncodedBatch, EncoderParams, ModelConfig, encode
from .layers import LayerNormParams, glorot, project, zeros
from .tensor import DimensionError, Tensor

N_CLASSES = len(LABELS)
LOG_FLOOR = 1e-12


@dataclass
class ClassifierParams:
    Wr: Tensor
    br: Tensor
    ln: LayerNormParams
    Wc: Tensor
    bc: Tensor

    @classmethod
    def init(cls, d_e: int, d_h: int, rng: np.random.Generator) -> "ClassifierParams":
        return cls(glorot(rng, 16 * d_e, d_h), zeros(d_h), LayerNormParams.init(d_h),
                   glorot(rng, d_h, N_CLASSES), zeros(N_CLASSES))

    def named_parameters(self, prefix: str = "cls") -> dict[str, Tensor]:
        out = {f"{prefix}.Wr": self.Wr, f"{prefix}.br": self.br}
        out.update(self.ln.named_parameters(f"{prefix}.ln"))
        out.update({f"{prefix}.Wc": self.Wc, f"{prefix}.bc": self.bc})
        return out


def relation_features(u, v) -> Tensor:
    """``[u ; v ; |u - v| ; u * v]`` along the last axis."""
    u, v = T.as_tensor(u), T.as_tensor(v)
    if u.shape != v.shape:
        raise DimensionError(f"relation features need equal shapes, got {u.shape} and {v.shape}")
    return T.concat([u, v, T.absolute(u - v), u * v], axis=-1)


def classify(features, params: ClassifierParams, dropout: float = 0.0, rng=None,
             training: bool = False) -> Tensor:
    """ReLU layer (layer-normed, dropped out) then a 3-way softmax."""
    hidden = T.relu(project(features, params.Wr, params.ln, "post", params.br))
    hidden = T.dropout(hidden, dropout, rng, training)
    return T.softmax(T.matmul(hidden, params.Wc) + params.bc, axis=-1)


def nli_loss(probs, labels) -> tuple[Tensor, int]:
    """Mean negative log-probability of the gold labels.

    Probabilities at or below 1e-12 are clamped; the count is returned so
    callers can surface it in their metrics.
    """
    probs = T.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1, 1)
    if probs.ndim != 2 or labels.shape[0] != probs.shape[0]:
        raise DimensionError(f"probabilities {probs.shape} vs {labels.shape[0]} labels")
    gold = T.take_along(probs, labels, axis=1)
    logp, clamped = T.log_clamped(gold, LOG_FLOOR)
    return -T.mean(logp), clamped


def stack_batches(a: SentenceBatch, b: SentenceBatch) -> SentenceBatch:
    width = max(a.width, b.width)
    ids = np.zeros((len(a) + len(b), width), dtype=np.int64)
    ids[:len(a), :a.width] = a.ids
    ids[len(a):, :b.width] = b.ids
    return SentenceBatch(ids, np.concatenate([a.lengths, b.lengths]))


class NLIModel:
    """Encoder + classifier sharing one parameter set across premise and hypothesis."""

    def __init__(self, config: ModelConfig, embeddings: EmbeddingTable, vocab: Vocabulary | None = None,
                 seed: int = 0, encoder: EncoderParams | None = None,
                 classifier: ClassifierParams | None = None):
        self.config = config.validate()
        if embeddings.dim != config.d_e:
            raise DimensionError(f"embedding width {embeddings.dim} != d_e {config.d_e}")
        self.embeddings = embeddings
        self.vocab = vocab
        rng = np.random.default_rng(seed)
        self.encoder = encoder if encoder is not None else EncoderParams.init(config, rng)
        self.classifier = classifier if classifier is not None else ClassifierParams.init(config.d_e, config.d_h, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        out = self.encoder.named_parameters("enc")
        out.update(self.classifier.named_parameters("cls"))
        return out

    def parameter_count(self) -> int:
        return sum(p.size for p in self.named_parameters().values())

    def encode(self, batch: SentenceBatch, training: bool = False, rng=None,
               taps: dict | None = None) -> EncodedBatch:
        cfg = self.config
        return encode(batch, self.embeddings, self.encoder, cfg.alpha, dropout=cfg.dropout,
                      rng=rng, training=training, taps=taps)

    def forward(self, premises: SentenceBatch, hypotheses: SentenceBatch, training: bool = False,
                rng=None) -> Tensor:
        # both sides go through the encoder as one batch; padding is invisible
        B = len(premises)
        both = stack_batches(premises, hypotheses)
        vecs = self.encode(both, training, rng).sentence_vector
        u, v = T.getitem(vecs, slice(0, B)), T.getitem(vecs, slice(B, None))
        return classify(relation_features(u, v), self.classifier, self.config.dropout, rng, training)

    def loss(self, premises, hypotheses, labels, training: bool = False, rng=None):
        probs = self.forward(premises, hypotheses, training, rng)
        loss, clamped = nli_loss(probs, labels)
        return loss, probs, clamped

    def predict_proba(self, premises: SentenceBatch, hypotheses: SentenceBatch) -> np.ndarray:
        with T.no_grad():
            return self.forward(premises, hypotheses).data
