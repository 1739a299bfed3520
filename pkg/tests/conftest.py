import numpy as np
import pytest

from bgcapsule.config import AblationConfig, ModelConfig
from bgcapsule.model import TextClassifier
from bgcapsule.synthetic import separable_corpus
from bgcapsule.text import build_vocab, encode_docs, random_embeddings, tokenize_lower


def toy_config(**overrides) -> ModelConfig:
    """Small, fast configuration used across the test suite."""
    base = dict(
        max_len=16,
        embed_dim=8,
        bigru_sizes=[4, 3],
        caps_dim=4,
        routed_caps=3,
        routed_caps_dim=4,
        routing_iters=2,
        dense_hidden=16,
        class_count=2,
        dropout=0.25,
        batch_size=8,
        epochs=10,
        lr=1e-2,
        seed=0,
        embed_trainable=True,
    )
    base.update(overrides)
    return ModelConfig(**base)


def build_toy_model(docs, config=None, ablation=None, dtype=np.float32):
    config = config or toy_config()
    vocab = build_vocab(tokenize_lower(d.text) for d in docs)
    table = random_embeddings(vocab, config.embed_dim, config.seed)
    encoded = encode_docs(docs, vocab, config.max_len, config.truncate_keep)
    model = TextClassifier(config, vocab, table, ablation, dtype=dtype)
    return model, encoded


@pytest.fixture
def separable_docs():
    return separable_corpus(200, seed=1)


@pytest.fixture
def toy_model(separable_docs):
    return build_toy_model(separable_docs)
