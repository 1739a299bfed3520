import math

import numpy as np
import numpy.testing as npt
import pytest

from bgcapsule import tensor as T
from bgcapsule import training
from bgcapsule.config import AblationConfig
from bgcapsule.errors import ContractError, DataError
from bgcapsule.synthetic import separable_corpus
from bgcapsule.tensor import Tensor

from conftest import build_toy_model, toy_config


# ---------------------------------------------------------------------------
# cross-entropy


def test_cross_entropy_perfect_prediction():
    probs = Tensor([[1.0, 0.0], [0.0, 1.0]])
    assert training.cross_entropy(probs, np.array([0, 1])).item() == pytest.approx(0.0, abs=1e-6)


def test_cross_entropy_uniform_four_classes():
    probs = Tensor(np.full((3, 4), 0.25))
    loss = training.cross_entropy(probs, np.array([0, 1, 3]))
    assert loss.item() == pytest.approx(math.log(4.0), rel=1e-6)


def test_cross_entropy_hand_value():
    loss = training.cross_entropy(Tensor([[0.7, 0.3]]), np.array([0]))
    assert loss.item() == pytest.approx(-math.log(0.7), rel=1e-6)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(DataError):
        training.cross_entropy(Tensor([[0.5, 0.5]]), np.array([2]))


def test_cross_entropy_gradient_through_softmax():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(3, 4))
    labels = np.array([0, 2, 3])
    report = T.grad_check(
        lambda t: training.cross_entropy(T.softmax(t, axis=1), labels),
        Tensor(logits, dtype=np.float64),
        name="softmax-xent",
    )
    assert report.passed, report.line()


# ---------------------------------------------------------------------------
# Adam


def test_adam_zero_gradient_leaves_params_bitwise():
    rng = np.random.default_rng(1)
    params = {"w": Tensor(rng.normal(size=(3, 3)).astype(np.float32))}
    before = params["w"].data.copy()
    opt = training.Adam(params, lr=0.1)
    opt.step({"w": Tensor(np.zeros((3, 3), dtype=np.float32))})
    npt.assert_array_equal(params["w"].data, before)


def test_adam_first_step_magnitude():
    params = {"w": Tensor(np.zeros(5, dtype=np.float32))}
    opt = training.Adam(params, lr=0.001)
    opt.step({"w": Tensor(np.ones(5, dtype=np.float32))})
    npt.assert_allclose(params["w"].data, np.full(5, -0.001), rtol=1e-5)


def test_adam_two_runs_identical():
    def run():
        rng = np.random.default_rng(2)
        params = {"w": Tensor(rng.normal(size=(4,)).astype(np.float32))}
        opt = training.Adam(params, lr=0.01)
        for step in range(5):
            g = np.sin(np.arange(4, dtype=np.float32) + step)
            opt.step({"w": Tensor(g)})
        return params["w"].data

    npt.assert_array_equal(run(), run())


def test_adam_shape_mismatch():
    params = {"w": Tensor(np.zeros(3, dtype=np.float32))}
    opt = training.Adam(params)
    with pytest.raises(ContractError):
        opt.step({"w": Tensor(np.zeros(4, dtype=np.float32))})


# ---------------------------------------------------------------------------
# dropout masks


def test_dropout_rate_zero_all_ones():
    mask = training.recurrent_dropout_mask((4, 5), 0.0, np.random.default_rng(0))
    npt.assert_array_equal(mask, np.ones((4, 5)))


def test_dropout_kept_fraction():
    mask = training.recurrent_dropout_mask((100000,), 0.25, np.random.default_rng(3))
    kept = float((mask > 0).mean())
    assert kept == pytest.approx(0.75, abs=0.01)
    # surviving entries are scaled to keep the expectation
    assert np.allclose(mask[mask > 0], 1.0 / 0.75)


def test_dropout_bad_rate():
    with pytest.raises(ContractError):
        training.recurrent_dropout_mask((2,), 1.0, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# training loop on the separable corpus


def test_train_reaches_95_percent(separable_docs):
    model, encoded = build_toy_model(separable_docs)
    result = training.train(model, encoded, [], model.config)
    assert result.final_train_acc >= 0.95


def test_loss_descends_after_one_epoch(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=1))
    initial = training.evaluate(model, encoded, 64).loss
    training.train(model, encoded, [], model.config)
    after = training.evaluate(model, encoded, 64).loss
    assert after < initial


def test_train_empty_dataset_rejected(toy_model):
    model, _ = toy_model
    with pytest.raises(ContractError):
        training.train(model, [], [], model.config)


def test_train_zero_epochs_rejected(separable_docs):
    model, encoded = build_toy_model(separable_docs)
    bad = toy_config(epochs=1)
    bad.epochs = 0
    with pytest.raises(Exception):
        training.train(model, encoded, [], bad)


def test_training_deterministic(separable_docs):
    def run():
        model, encoded = build_toy_model(separable_docs, toy_config(epochs=2))
        training.train(model, encoded, [], model.config)
        return {name: p.data.copy() for name, p in model.parameters().items()}

    first, second = run(), run()
    for name in first:
        npt.assert_array_equal(first[name], second[name], err_msg=name)


def test_best_validation_params_retained(separable_docs):
    train_docs = separable_docs[:160]
    val_docs = separable_docs[160:]
    model, encoded = build_toy_model(train_docs, toy_config(epochs=4))
    # encode validation docs with the same vocab
    from bgcapsule.text import encode_docs

    enc_val = encode_docs(val_docs, model.vocab, model.config.max_len)
    result = training.train(model, encoded, enc_val, model.config)
    metrics = training.evaluate(model, enc_val, 64)
    assert metrics.accuracy == pytest.approx(result.best_val_acc, abs=1e-9)
    assert result.best_epoch >= 1
    val_records = [r for r in result.history if r.split == "val"]
    assert max(r.acc for r in val_records) == pytest.approx(result.best_val_acc)


def test_metrics_line_format(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=1))
    lines = []
    training.train(model, encoded, encoded[:32], model.config, log=lines.append)
    assert lines[0].startswith("epoch=1 split=train loss=")
    assert lines[1].startswith("epoch=1 split=val loss=")


def test_pad_embedding_row_stays_zero_through_training(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=2))
    assert model.config.embed_trainable
    training.train(model, encoded, [], model.config)
    npt.assert_array_equal(model.embedding.data[0], np.zeros(model.config.embed_dim))


def test_frozen_embeddings_unchanged(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=1, embed_trainable=False))
    before = model.embedding.data.copy()
    training.train(model, encoded, [], model.config)
    npt.assert_array_equal(model.embedding.data, before)


def test_eval_mode_ignores_dropout(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=1, dropout=0.9))
    a = training.evaluate(model, encoded[:40], 16)
    b = training.evaluate(model, encoded[:40], 16)
    assert a.accuracy == b.accuracy and a.loss == b.loss


def test_evaluate_deterministic_and_class_counts(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=1))
    m1 = training.evaluate(model, encoded, 32)
    m2 = training.evaluate(model, encoded, 32)
    assert m1.accuracy == m2.accuracy
    assert m1.class_total.sum() == len(encoded)
    assert np.all(m1.class_correct <= m1.class_total)


def test_chance_level_accuracy_with_uniform_model(separable_docs):
    model, encoded = build_toy_model(separable_docs, toy_config(epochs=1))
    # zero out the head so the output is exactly uniform
    model.head.w2.data = np.zeros_like(model.head.w2.data)
    model.head.b2.data = np.zeros_like(model.head.b2.data)
    metrics = training.evaluate(model, encoded, 64)
    # argmax of a uniform row is class 0; the corpus is balanced
    assert metrics.accuracy == pytest.approx(0.5, abs=0.01)


# ---------------------------------------------------------------------------
# cross-validation


def test_cross_validate_report(separable_docs):
    cfg = toy_config(epochs=2)
    result = training.cross_validate(separable_docs[:60], cfg, k=3)
    assert len(result.fold_accuracies) == 3
    assert result.mean == pytest.approx(float(np.mean(result.fold_accuracies)))
    assert result.best == pytest.approx(float(np.max(result.fold_accuracies)))
    assert result.best >= result.mean
    lines = list(result.lines())
    assert lines[0].startswith("fold=0 acc=")
    assert lines[-1].startswith("mean=")


def test_cross_validate_reproducible(separable_docs):
    cfg = toy_config(epochs=1)
    a = training.cross_validate(separable_docs[:40], cfg, k=2)
    b = training.cross_validate(separable_docs[:40], cfg, k=2)
    assert a.fold_accuracies == b.fold_accuracies
