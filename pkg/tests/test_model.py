import numpy as np
import numpy.testing as npt
import pytest

from bgcapsule.config import AblationConfig, ModelConfig
from bgcapsule.errors import ConfigError
from bgcapsule.model import TextClassifier
from bgcapsule.synthetic import separable_corpus
from bgcapsule.text import batch_of, build_vocab, random_embeddings, tokenize_lower

from conftest import build_toy_model, toy_config


def test_forward_shape_chain(separable_docs):
    model, encoded = build_toy_model(separable_docs)
    batch = batch_of(encoded[:2])
    assert batch.token_ids.shape == (2, 16)
    probs = model.forward(batch.token_ids)
    assert probs.shape == (2, 2)


def test_probability_rows_sum_to_one(separable_docs):
    model, encoded = build_toy_model(separable_docs)
    probs = model.forward(batch_of(encoded[:8]).token_ids).data
    npt.assert_allclose(probs.sum(axis=1), np.ones(8), atol=1e-6)
    assert np.all(probs >= 0)


def test_eval_mode_deterministic(separable_docs):
    model, encoded = build_toy_model(separable_docs)
    ids = batch_of(encoded[:4]).token_ids
    a = model.forward(ids).data
    b = model.forward(ids).data
    npt.assert_array_equal(a, b)


def test_same_seed_same_parameters(separable_docs):
    m1, _ = build_toy_model(separable_docs)
    m2, _ = build_toy_model(separable_docs)
    for (n1, p1), (n2, p2) in zip(m1.parameters().items(), m2.parameters().items()):
        assert n1 == n2
        npt.assert_array_equal(p1.data, p2.data)


def test_shared_stage_parameter_counts_match_across_variants(separable_docs):
    cfg = toy_config()
    bg, _ = build_toy_model(separable_docs, cfg, AblationConfig(variant="bgcapsule"))
    mp, _ = build_toy_model(separable_docs, cfg, AblationConfig(variant="bigru_maxpool"))
    for stage in ("embedding", "bigru1", "bigru2"):
        assert bg.parameter_count(stage) == mp.parameter_count(stage)
    assert bg.parameter_count("routing") > 0
    assert mp.parameter_count("routing") == 0


def test_cnn_capsule_uses_same_routing_params(separable_docs):
    cfg = toy_config()
    ab = AblationConfig(variant="cnn_capsule", cnn_filter_widths=[2, 3], cnn_filter_count=5)
    model, encoded = build_toy_model(separable_docs, cfg, ab)
    assert model.feature_width == 10
    probs = model.forward(batch_of(encoded[:2]).token_ids)
    assert probs.shape == (2, 2)
    names = set(model.parameters())
    assert "routing.pair_w" in names and "primary_caps.w" in names


def test_unshared_pair_weights_shape(separable_docs):
    cfg = toy_config(share_pair_weights=False)
    model, _ = build_toy_model(separable_docs, cfg)
    assert model.pair_w.shape == (cfg.routed_caps, cfg.max_len, cfg.caps_dim,
                                  cfg.routed_caps_dim)


def test_routing_info_exposed(separable_docs):
    model, encoded = build_toy_model(separable_docs)
    model.forward(batch_of(encoded[:3]).token_ids)
    info = model.last_routing
    assert info is not None
    assert info.couplings.shape == (3, model.config.max_len, model.config.routed_caps)
    npt.assert_allclose(info.couplings.sum(axis=2), np.ones((3, model.config.max_len)),
                        atol=1e-5)


def test_softmax_axis_flag_changes_normalization(separable_docs):
    cfg = toy_config(softmax_axis="input_caps")
    model, encoded = build_toy_model(separable_docs, cfg)
    model.forward(batch_of(encoded[:2]).token_ids)
    sums = model.last_routing.couplings.sum(axis=1)
    npt.assert_allclose(sums, np.ones((2, cfg.routed_caps)), atol=1e-5)


def test_predict_text_all_oov(separable_docs):
    model, _ = build_toy_model(separable_docs)
    cls, probs = model.predict_text("qqq zzz unseen tokens only")
    assert cls in (0, 1)
    assert probs.sum() == pytest.approx(1.0, abs=1e-6)
    cls2, probs2 = model.predict_text("qqq zzz unseen tokens only")
    assert cls == cls2
    npt.assert_array_equal(probs, probs2)


def test_embedding_dim_mismatch_rejected(separable_docs):
    cfg = toy_config()
    vocab = build_vocab(tokenize_lower(d.text) for d in separable_docs)
    table = random_embeddings(vocab, dim=cfg.embed_dim + 1, seed=0)
    with pytest.raises(ConfigError):
        TextClassifier(cfg, vocab, table)


def test_pool_window_exceeding_max_len_rejected(separable_docs):
    cfg = toy_config(max_len=3)
    with pytest.raises(ConfigError):
        build_toy_model(separable_docs, cfg, AblationConfig(variant="bigru_maxpool",
                                                            pool_window=64))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(dropout=1.5).validate()
    with pytest.raises(ConfigError):
        ModelConfig(epochs=0).validate()
    with pytest.raises(ConfigError):
        ModelConfig(head_activation="gelu").validate()
    with pytest.raises(ConfigError):
        ModelConfig(bigru_sizes=[5]).validate()
    with pytest.raises(ConfigError):
        AblationConfig(variant="other").validate()
