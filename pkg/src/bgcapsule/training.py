"""Loss, Adam, dropout, the training loop, evaluation, and k-fold CV.

Metrics are emitted as line-oriented records (``epoch=.. split=..
loss=.. acc=..``; CV adds ``fold=.. acc=..`` then ``mean=.. best=..``)
so they can be streamed, diffed, and parsed trivially.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import AblationConfig, ModelConfig
from .errors import ContractError, DataError
from .tensor import Tape, Tensor, record_op
from .text import (
    build_vocab,
    encode_docs,
    iter_batches,
    kfold_split,
    load_glove,
    random_embeddings,
    tokenize_lower,
)

PROB_FLOOR = 1e-12


def cross_entropy(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log probability of the true class, floored at 1e-12."""
    labels = np.asarray(labels)
    n, classes = probs.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} does not match batch of {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= classes:
        raise DataError(f"label outside [0, {classes})")
    picked = probs.data[np.arange(n), labels]
    clipped = np.maximum(picked, PROB_FLOOR)
    out = np.asarray(-np.log(clipped).mean(), dtype=probs.dtype)

    def back(g):
        grad = np.zeros_like(probs.data)
        grad[np.arange(n), labels] = np.where(picked > PROB_FLOOR, -g / (n * clipped), 0.0)
        return (grad,)

    return record_op(out, (probs,), back)


class Adam:
    """Standard Adam with bias correction; one state slot per parameter."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, grads: dict[str, Tensor]) -> None:
        self.t += 1
        for name, param in self.params.items():
            g = grads[name].data
            if g.shape != param.shape:
                raise ContractError(f"gradient shape {g.shape} != param {param.shape} for {name}")
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            param.data = param.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def recurrent_dropout_mask(shape, rate: float, rng) -> np.ndarray:
    """Bernoulli(1-rate)/(1-rate) mask; one draw per sequence per layer."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=np.float32)
    keep = (rng.random(shape) >= rate).astype(np.float32)
    return keep / np.float32(1.0 - rate)


@dataclass
class EpochRecord:
    epoch: int
    split: str  # train | val
    loss: float
    acc: float

    def line(self) -> str:
        return f"epoch={self.epoch} split={self.split} loss={self.loss:.6f} acc={self.acc:.4f}"


@dataclass
class EvalMetrics:
    loss: float
    accuracy: float
    class_total: np.ndarray  # docs per true class
    class_correct: np.ndarray


@dataclass
class TrainResult:
    history: list[EpochRecord]
    best_epoch: int
    best_val_acc: float
    final_train_acc: float


def _batch_stats(probs: np.ndarray, labels: np.ndarray):
    predicted = probs.argmax(axis=1)
    return float((predicted == labels).sum())


def train(model, train_docs, val_docs, config: ModelConfig, log=None) -> TrainResult:
    """Mini-batch Adam over seeded shuffles; keeps the best-validation epoch.

    ``log`` is called with each metrics line as it is produced.
    """
    if not train_docs:
        raise ContractError("training set is empty")
    config.validate()
    params = model.parameters()
    optimizer = Adam(params, lr=config.lr)
    history: list[EpochRecord] = []
    best_val, best_epoch, best_state = -1.0, 0, None
    final_train_acc = 0.0

    for epoch in range(1, config.epochs + 1):
        shuffle_rng = np.random.default_rng([config.seed, 4, epoch])
        dropout_rng = np.random.default_rng([config.seed, 5, epoch])
        total_loss, correct = 0.0, 0.0
        for batch in iter_batches(train_docs, config.batch_size, shuffle_rng):
            with Tape() as tape:
                tape.watch(*params.values())
                probs = model.forward(batch.token_ids, training=True, rng=dropout_rng)
                loss = cross_entropy(probs, batch.labels)
                tape.backward(loss)
                grads = {name: tape.grad(p) for name, p in params.items()}
            optimizer.step(grads)
            total_loss += loss.item() * len(batch.labels)
            correct += _batch_stats(probs.data, batch.labels)
        record = EpochRecord(epoch, "train", total_loss / len(train_docs),
                             correct / len(train_docs))
        history.append(record)
        final_train_acc = record.acc
        if log:
            log(record.line())
        if val_docs:
            metrics = evaluate(model, val_docs, config.batch_size)
            val_record = EpochRecord(epoch, "val", metrics.loss, metrics.accuracy)
            history.append(val_record)
            if log:
                log(val_record.line())
            if metrics.accuracy > best_val:
                best_val = metrics.accuracy
                best_epoch = epoch
                best_state = {name: p.data.copy() for name, p in params.items()}

    if best_state is not None:
        for name, param in params.items():
            param.data = best_state[name]
    else:
        best_val = final_train_acc
        best_epoch = config.epochs
    return TrainResult(history=history, best_epoch=best_epoch, best_val_acc=best_val,
                       final_train_acc=final_train_acc)


def evaluate(model, docs, batch_size: int = 256) -> EvalMetrics:
    """Accuracy and mean loss in eval mode; deterministic."""
    if not docs:
        raise ContractError("evaluation set is empty")
    classes = model.config.class_count
    total_loss, correct = 0.0, 0.0
    class_total = np.zeros(classes, dtype=np.int64)
    class_correct = np.zeros(classes, dtype=np.int64)
    for batch in iter_batches(docs, batch_size):
        probs = model.forward(batch.token_ids, training=False)
        total_loss += cross_entropy(probs, batch.labels).item() * len(batch.labels)
        predicted = probs.data.argmax(axis=1)
        for cls in range(classes):
            of_class = batch.labels == cls
            class_total[cls] += int(of_class.sum())
            class_correct[cls] += int((predicted[of_class] == cls).sum())
        correct += float((predicted == batch.labels).sum())
    return EvalMetrics(loss=total_loss / len(docs), accuracy=correct / len(docs),
                       class_total=class_total, class_correct=class_correct)


@dataclass
class CvResult:
    fold_accuracies: list[float]
    mean: float
    best: float
    histories: list = field(default_factory=list)

    def lines(self):
        for i, acc in enumerate(self.fold_accuracies):
            yield f"fold={i} acc={acc:.4f}"
        yield f"mean={self.mean:.4f} best={self.best:.4f}"


def cross_validate(raw_docs, config: ModelConfig, k: int = 10,
                   ablation: AblationConfig | None = None, glove_path=None,
                   log=None) -> CvResult:
    """Train k independent models on a seeded fold partition.

    Each fold gets its own vocabulary, embeddings, and seed derived from
    the base seed, so the whole report reproduces bit-for-bit.
    """
    from .model import TextClassifier  # here to avoid a circular import

    folds = kfold_split(raw_docs, k, config.seed)
    accuracies: list[float] = []
    histories = []
    for i, (fold_train, fold_val) in enumerate(folds):
        fold_config = replace(config, seed=config.seed + 1000 * (i + 1))
        vocab = build_vocab(tokenize_lower(d.text) for d in fold_train)
        if glove_path is not None:
            table, _ = load_glove(glove_path, vocab, config.embed_dim, fold_config.seed)
        else:
            table = random_embeddings(vocab, config.embed_dim, fold_config.seed)
        enc_train = encode_docs(fold_train, vocab, config.max_len, config.truncate_keep)
        enc_val = encode_docs(fold_val, vocab, config.max_len, config.truncate_keep)
        model = TextClassifier(fold_config, vocab, table, ablation)
        result = train(model, enc_train, enc_val, fold_config)
        accuracies.append(result.best_val_acc)
        histories.append(result.history)
        if log:
            log(f"fold={i} acc={result.best_val_acc:.4f}")
    mean = float(np.mean(accuracies))
    best = float(np.max(accuracies))
    if log:
        log(f"mean={mean:.4f} best={best:.4f}")
    return CvResult(fold_accuracies=accuracies, mean=mean, best=best, histories=histories)
