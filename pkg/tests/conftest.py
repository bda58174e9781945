import sys

import numpy as np
import pytest

from dsan.data import SentenceBatch, Vocabulary, index_examples, random_embeddings, synthetic_corpus
from dsan.encoder import ModelConfig
from dsan.nli import NLIModel

CASE_SENTENCE = "A lady stands outside of a Mexican market."
TOY = dict(d_e=20, h=2, d_ff=80, d_h=8)


def toy_setup(dropout=0.0, alpha=1.5, seed=0, n=32):
    """Synthetic corpus, its vocabulary (plus the case-study words), random embeddings."""
    raw = synthetic_corpus(n, seed=seed)
    vocab = Vocabulary.build([e.premise for e in raw] + [e.hypothesis for e in raw])
    for tok in "A lady stands outside of a Mexican market .".split():
        vocab.add(tok)
    emb = random_embeddings(vocab, TOY["d_e"], seed=seed)
    cfg = ModelConfig(**TOY, alpha=alpha, dropout=dropout)
    return index_examples(raw, vocab), vocab, emb, cfg


def toy_model(dropout=0.0, alpha=1.5, seed=0):
    data, vocab, emb, cfg = toy_setup(dropout, alpha, seed)
    return NLIModel(cfg, emb, vocab, seed=seed), data


def jitter(model, scale=0.1, seed=5):
    """Move every parameter off its initial value (see the grad-check notes in the README)."""
    rng = np.random.default_rng(seed)
    for p in model.named_parameters().values():
        p.data = p.data + rng.normal(0.0, scale, p.shape)
    return model


def two_pair_batch():
    """Batch of 2 pairs, lengths <= 5, with padding on both sides."""
    prem = SentenceBatch.from_sequences([[2, 3, 4, 5, 6], [7, 8, 9]])
    hyp = SentenceBatch.from_sequences([[10, 11], [12, 13, 14, 15]])
    return prem, hyp, np.array([0, 2])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
