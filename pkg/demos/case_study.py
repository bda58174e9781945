"""Case-study artifacts for one sentence, from a briefly trained toy model.

Writes CSV tables and SVG heatmaps under ./case_study_out and prints the
per-word summaries.
"""
import sys
from pathlib import Path

import numpy as np

from dsan.data import Vocabulary, index_examples, random_embeddings, synthetic_corpus, tokenize
from dsan.introspect import capture, export
from dsan.train import TrainConfig, train_loop

sentence = sys.argv[1] if len(sys.argv) > 1 else "A lady stands outside of a Mexican market."
raw = synthetic_corpus(48, seed=0)
vocab = Vocabulary.build([e.premise for e in raw] + [e.hypothesis for e in raw] + [tokenize(sentence)])
emb = random_embeddings(vocab, 20, seed=0)
cfg = TrainConfig(d_e=20, h=2, d_ff=80, d_h=8, dropout=0.1, batch_size=8, epochs=15, seed=0)
model = train_loop(index_examples(raw, vocab), [], cfg, emb, vocab).model

report = capture(sentence, model)
assert not report.violations(), report.violations()
np.set_printoptions(precision=3, suppress=True, linewidth=140)
print("tokens:", report.tokens)
print("forward head-averaged attention:\n", report.attn_avg["forward"])
for name in ("gate_avg", "ffn_deact_ratio", "ffn_out_max"):
    for d in ("forward", "backward"):
        print(f"{name:16s} {d:8s}", getattr(report, name)[d])
print("multi-dim pooling mean weight  ", report.multidim_avg_weight)
print("max-pool selection %           ", report.maxpool_ratio, "sum", report.maxpool_ratio.sum())

paths = export(report, Path("case_study_out"))
print(f"{len(paths)} files written, e.g. {paths[0]}")
