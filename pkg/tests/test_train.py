import csv

import numpy as np
import pytest

from conftest import TOY, toy_setup
from dsan.data import NLIExample
from dsan.layers import ConfigError
from dsan.nli import NLIModel
from dsan.tensor import NumericError, Tensor
from dsan.train import (METRICS_HEADER, AdamState, TrainConfig, adam_step, evaluate, evaluate_by_length,
                        predict, train_loop, write_length_table)


def _scalar_param(value=0.0):
    return {"w": Tensor(np.array([value]), requires_grad=True)}


def test_first_step_moves_by_learning_rate():
    for g in (3.7, -0.02, 1e-3):
        params = _scalar_param()
        params["w"].grad = np.array([g])
        adam_step(params, AdamState.init(params), TrainConfig())
        assert abs(params["w"].data[0] + 0.001 * np.sign(g)) < 1e-8


def test_constant_gradient_step_tends_to_learning_rate():
    params = _scalar_param()
    state = AdamState.init(params)
    cfg = TrainConfig(learning_rate=0.01)
    for _ in range(500):
        before = params["w"].data.copy()
        params["w"].grad = np.array([0.5])
        adam_step(params, state, cfg)
    assert abs((before - params["w"].data)[0] - 0.01) < 1e-9
    assert state.t == 500


def test_zero_and_missing_gradients_leave_parameters():
    params = {"a": Tensor(np.ones(3), requires_grad=True), "b": Tensor(np.ones(2), requires_grad=True)}
    params["a"].grad = np.zeros(3)
    state = adam_step(params, AdamState.init(params), TrainConfig())
    assert state.t == 1
    assert np.array_equal(params["a"].data, np.ones(3)) and np.array_equal(params["b"].data, np.ones(2))


def test_nan_gradient_aborts_before_any_write():
    params = {"good": Tensor(np.ones(2), requires_grad=True), "bad": Tensor(np.ones(2), requires_grad=True)}
    params["good"].grad = np.ones(2)
    params["bad"].grad = np.array([0.0, np.nan])
    state = AdamState.init(params)
    with pytest.raises(NumericError, match="bad"):
        adam_step(params, state, TrainConfig())
    assert state.t == 0 and np.array_equal(params["good"].data, np.ones(2))


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(h=7).validate()
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(adam_beta2=1.0).validate()
    assert TrainConfig().model_config().d_ff == 1200


def _toy_config(**kw):
    return TrainConfig(**TOY, dropout=0.0, batch_size=8, epochs=3, **kw)


def test_empty_training_set_is_a_config_error():
    _, vocab, emb, _ = toy_setup()
    with pytest.raises(ConfigError):
        train_loop([], [], _toy_config(), emb, vocab)


def test_training_is_deterministic_and_embeddings_stay_frozen(tmp_path):
    data, vocab, emb, _ = toy_setup(n=24)
    checksum = emb.checksum()
    cfg = TrainConfig(**TOY, dropout=0.1, batch_size=8, epochs=3, seed=7)
    a = train_loop(data, data[:6], cfg, emb, vocab, out_dir=tmp_path / "a")
    b = train_loop(data, data[:6], cfg, emb, vocab, out_dir=tmp_path / "b")
    assert [r["train_loss"] for r in a.history] == [r["train_loss"] for r in b.history]
    assert emb.checksum() == checksum
    assert not any(name.startswith("emb") for name in a.model.named_parameters())
    with (tmp_path / "a" / "metrics.csv").open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == METRICS_HEADER and len(rows) == 4
    assert (tmp_path / "a" / "best.ckpt").is_file()


def test_best_parameters_are_restorable():
    data, vocab, emb, _ = toy_setup(n=24)
    res = train_loop(data, data[:9], _toy_config(), emb, vocab)
    res.restore_best()
    assert evaluate(data[:9], res.model).accuracy == res.best_score
    assert 1 <= res.best_epoch <= 3


def _model():
    _, vocab, emb, cfg = toy_setup()
    return NLIModel(cfg, emb, vocab, seed=2)


def test_uniform_model_predicts_first_label():
    data, *_ = toy_setup(n=30)
    model = _model()
    model.classifier.Wc.data = np.zeros_like(model.classifier.Wc.data)
    res = evaluate(data, model)
    assert np.all(predict(data, model) == 0)
    assert res.accuracy == sum(e.label == 0 for e in data) / len(data)


def test_confusion_rows_count_gold_labels():
    data, *_ = toy_setup(n=30)
    res = evaluate(data, _model())
    assert res.confusion.sum(axis=1).tolist() == [sum(e.label == k for e in data) for k in range(3)]
    assert res.accuracy == np.trace(res.confusion) / 30


def test_evaluate_ignores_batch_size_and_order():
    data, *_ = toy_setup(n=30)
    model = _model()
    base = evaluate(data, model)
    perm = np.random.default_rng(0).permutation(30)
    for bs in (1, 7, 64):
        assert evaluate(data, model, bs).accuracy == base.accuracy
        shuffled = evaluate([data[i] for i in perm], model, bs)
        assert np.array_equal(shuffled.confusion, base.confusion)


def _sized(p, h, label=0):
    return NLIExample(tuple(range(2, 2 + p)), tuple(range(2, 2 + h)), label)


def test_length_buckets(tmp_path):
    data = [_sized(9, 11), _sized(1, 2), _sized(4, 6), _sized(30, 40), _sized(10, 10)]
    model = _model()
    rows = evaluate_by_length(data, model, [0, 5, 10, 15])
    assert [(r.lo, r.hi, r.count) for r in rows] == [(0, 5, 1), (5, 10, 1), (10, 15, 2), (15, np.inf, 1)]
    assert sum(r.count for r in rows) == len(data)
    single = evaluate_by_length(data, model, [0])
    assert single[0].accuracy == evaluate(data, model).accuracy
    empty = evaluate_by_length(data, model, [0, 100])
    assert empty[1].count == 0 and empty[1].accuracy is None
    write_length_table(empty, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[2] == "100.0,inf,0,"
    with pytest.raises(ValueError):
        evaluate_by_length(data, model, [2, 5])
