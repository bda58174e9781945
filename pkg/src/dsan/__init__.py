"""Directional self-attention sentence encoder with distance masks, for NLI.

A small numpy autodiff core (``dsan.tensor``) carries the whole model; the
other modules build masks, layers, the encoder, the NLI classifier, training
and case-study introspection on top of it.
"""
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (EmbeddingTable, NLIExample, SentenceBatch, Vocabulary, load_embeddings,
                   parse_nli_jsonl, tokenize)
from .encoder import ModelConfig, encode
from .introspect import CaseStudyReport, capture, export
from .nli import NLIModel
from .tensor import ContractError, DimensionError, NumericError, Tensor, grad_check, no_grad
from .train import TrainConfig, evaluate, evaluate_by_length, train_loop

__all__ = [
    "CaseStudyReport", "ContractError", "DimensionError", "EmbeddingTable", "ModelConfig",
    "NLIExample", "NLIModel", "NumericError", "SentenceBatch", "Tensor", "TrainConfig",
    "Vocabulary", "capture", "encode", "evaluate", "evaluate_by_length", "export", "grad_check",
    "load_checkpoint", "load_embeddings", "no_grad", "parse_nli_jsonl", "save_checkpoint",
    "tokenize", "train_loop",
]
