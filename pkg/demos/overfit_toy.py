"""Train a toy-sized model until it memorises 32 template sentence pairs.

The label of each pair is fixed by a single keyword in the hypothesis
("surely" -> entailment, "never" -> contradiction, "maybe" -> neutral), so a
working encoder must learn to find that word wherever it sits.
"""
import numpy as np

from dsan.data import Vocabulary, index_examples, random_embeddings, synthetic_corpus
from dsan.train import TrainConfig, evaluate, evaluate_by_length, train_loop

raw = synthetic_corpus(32, seed=0)
vocab = Vocabulary.build([e.premise for e in raw] + [e.hypothesis for e in raw])
train = index_examples(raw, vocab)
held_out = index_examples(synthetic_corpus(60, seed=1), vocab)
emb = random_embeddings(vocab, 20, seed=0)

print("example:", " ".join(raw[0].premise), "|", " ".join(raw[0].hypothesis), "->", raw[0].label)
cfg = TrainConfig(d_e=20, h=2, d_ff=80, d_h=8, dropout=0.0, batch_size=8, epochs=60, seed=0)
result = train_loop(train, [], cfg, emb, vocab)
for row in result.history[::10]:
    print(f"epoch {row['epoch']:3d}  loss {row['train_loss']:.4f}  train acc {row['train_acc']:.3f}")

model = result.model
print("train accuracy:", evaluate(train, model).accuracy)
res = evaluate(held_out, model)
print("held-out accuracy:", res.accuracy)
print("confusion (rows gold, cols predicted):\n", res.confusion)
for b in evaluate_by_length(held_out, model, [0, 5, 7, 9]):
    acc = "-" if b.accuracy is None else f"{b.accuracy:.3f}"
    print(f"avg length [{b.lo:g}, {b.hi:g}): {b.count:3d} pairs, accuracy {acc}")
np.testing.assert_equal(evaluate(train, model).accuracy, 1.0)
