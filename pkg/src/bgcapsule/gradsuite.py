"""Finite-difference verification of every differentiable operation.

Runs each op at small shapes in float64 and sweeps every parameter of a
tiny model end to end, one central difference per element. The CLI
``gradcheck`` command and the acceptance tests both drive this module.
"""

from __future__ import annotations

import numpy as np

from . import layers as L
from . import tensor as T
from .config import AblationConfig, ModelConfig
from .model import TextClassifier
from .tensor import GradCheckReport, Tape, Tensor, error_stats, grad_check
from .text import LabeledText, build_vocab, encode_docs, random_embeddings, tokenize_lower
from .training import cross_entropy

OP_TOL = 1e-4
MODEL_TOL = 1e-3


def _sq(t):
    return T.reduce_sum(T.mul(t, t))


def _op_checks() -> list[GradCheckReport]:
    rng = np.random.default_rng(42)
    reports = []

    def check(name, fn, x, tol=OP_TOL):
        reports.append(grad_check(fn, Tensor(x, dtype=np.float64), tol=tol, name=name))

    b = Tensor(rng.normal(size=(3, 3)), dtype=np.float64)
    check("matmul", lambda t: T.reduce_sum(T.matmul(t, b)), rng.normal(size=(3, 3)))
    check("sigmoid", lambda t: _sq(T.sigmoid(t)), rng.normal(size=(6,)))
    check("tanh", lambda t: _sq(T.tanh(t)), rng.normal(size=(6,)))
    check("relu", lambda t: _sq(T.relu(t)), rng.normal(size=(6,)) + 0.3)
    check("selu", lambda t: _sq(T.selu(t)), rng.normal(size=(6,)))
    check("add_mul_sub", lambda t: T.reduce_sum(T.mul(T.add(t, t), T.sub(t, T.scale(t, 0.25)))),
          rng.normal(size=(2, 3)))
    bias = Tensor(rng.normal(size=(4,)), dtype=np.float64)
    check("add_bias", lambda t: _sq(T.add_bias(t, bias)), rng.normal(size=(3, 4)))
    check("softmax", lambda t: _sq(T.softmax(t, axis=1)), rng.normal(size=(3, 5)))

    def structural(t):
        moved = T.transpose(T.reshape(t, (3, 4)), (1, 0))
        piece = T.slice_axis(moved, 0, 1, 4)
        joined = T.concat([piece, piece], axis=1)
        return T.add(T.reduce_sum(T.mul(joined, joined)), T.norm(moved))

    check("structural", structural, rng.normal(size=(12,)))

    w_shared = Tensor(rng.normal(size=(2, 3, 4)), dtype=np.float64)
    check("einsum2", lambda t: _sq(T.einsum2("nid,jde->njie", t, w_shared)),
          rng.normal(size=(1, 5, 3)))

    check("squash", lambda t: _sq(L.squash(t)), rng.normal(size=(20,)))
    check("squash_batched", lambda t: _sq(L.squash(t, axis=-1)), rng.normal(size=(2, 3, 4)))

    # GRU cell: wrt input, state, and each weight group
    params = L.init_gru(rng, 3, 2, np.float64)
    x_t = Tensor(rng.normal(size=(2, 3)), dtype=np.float64)
    h_prev = Tensor(rng.normal(size=(2, 2)), dtype=np.float64)
    check("gru_step/x", lambda t: _sq(L.gru_step(t, h_prev, params)), x_t.data)
    check("gru_step/h", lambda t: _sq(L.gru_step(x_t, t, params)), h_prev.data)
    for attr in ("w_z", "w_r", "w_h", "b_z", "b_r", "b_h"):
        original = getattr(params, attr)

        def wrt_param(t, attr=attr, original=original):
            setattr(params, attr, t)
            out = _sq(L.gru_step(x_t, h_prev, params))
            setattr(params, attr, original)
            return out

        check(f"gru_step/{attr}", wrt_param, original.data)

    seq = Tensor(rng.normal(size=(1, 4, 3)), dtype=np.float64)
    p_fwd = L.init_gru(rng, 3, 2, np.float64)
    p_bwd = L.init_gru(rng, 3, 2, np.float64)
    check("bigru/seq", lambda t: _sq(L.bigru_forward(t, p_fwd, p_bwd)), seq.data)

    def bigru_wrt_wz(t):
        original = p_fwd.w_z
        p_fwd.w_z = t
        out = _sq(L.bigru_forward(seq, p_fwd, p_bwd))
        p_fwd.w_z = original
        return out

    check("bigru/w_z", bigru_wrt_wz, p_fwd.w_z.data)

    u = Tensor(rng.normal(size=(1, 3, 3)), dtype=np.float64)
    check("predict_vectors/shared", lambda t: _sq(L.predict_vectors(u, t)),
          rng.normal(size=(2, 3, 4)))
    check("predict_vectors/per_pair", lambda t: _sq(L.predict_vectors(u, t)),
          rng.normal(size=(2, 3, 3, 4)))

    u_hat = rng.normal(size=(1, 2, 3, 4))

    def routing_target(t):
        v, _ = L.dynamic_routing(t, iterations=3)
        return _sq(v)

    check("dynamic_routing", routing_target, u_hat)

    head = L.init_head(rng, 5, 4, 3, np.float64)
    head_x = Tensor(rng.normal(size=(2, 5)), dtype=np.float64)
    labels = np.array([0, 2])
    for activation in ("relu", "selu"):
        check(f"dense_head/{activation}/x",
              lambda t, a=activation: cross_entropy(L.dense_head(t, head, a), labels),
              head_x.data)

    def head_wrt_w1(t):
        original = head.w1
        head.w1 = t
        out = cross_entropy(L.dense_head(head_x, head, "relu"), labels)
        head.w1 = original
        return out

    check("dense_head/w1", head_wrt_w1, head.w1.data)
    check("softmax_xent", lambda t: cross_entropy(T.softmax(t, axis=1), labels),
          rng.normal(size=(2, 4)))

    kernel = Tensor(rng.normal(size=(3, 2, 3)), dtype=np.float64)
    conv_bias = Tensor(rng.normal(size=(3,)), dtype=np.float64)
    check("conv1d/x", lambda t: _sq(L.conv1d_same(t, kernel, conv_bias)),
          rng.normal(size=(1, 5, 2)))
    check("conv1d/kernel", lambda t: _sq(L.conv1d_same(seq, t, conv_bias)),
          rng.normal(size=(3, 3, 3)))
    check("max_pool", lambda t: _sq(L.max_pool_routing(t, 2)), rng.normal(size=(1, 6, 3)))

    return reports


def _toy_corpus() -> list[LabeledText]:
    # full-length docs so the checked point has no zero-padding ties
    return [
        LabeledText("alpha beta gamma delta epsilon zeta", 0),
        LabeledText("delta epsilon zeta alpha eta beta", 1),
        LabeledText("beta beta gamma eta zeta alpha", 0),
        LabeledText("zeta epsilon epsilon gamma delta eta", 1),
    ]


def _toy_model(variant: str) -> tuple[TextClassifier, np.ndarray, np.ndarray]:
    config = ModelConfig(
        max_len=6, embed_dim=5, bigru_sizes=[3, 2], caps_dim=3, primary_caps_per_pos=1,
        routed_caps=2, routed_caps_dim=3, routing_iters=3, dense_hidden=4, class_count=2,
        dropout=0.0, batch_size=2, epochs=1, lr=1e-3, seed=12, embed_trainable=True,
    )
    ablation = AblationConfig(variant=variant, cnn_filter_widths=[2, 3], cnn_filter_count=3,
                              pool_window=3)
    docs = _toy_corpus()
    vocab = build_vocab(tokenize_lower(d.text) for d in docs)
    table = random_embeddings(vocab, config.embed_dim, config.seed)
    # at the default +-0.05 embedding scale the double squash collapses
    # activations below the finite-difference step; check at a healthy scale
    table.vectors = table.vectors * 20.0
    model = TextClassifier(config, vocab, table, ablation, dtype=np.float64)
    encoded = encode_docs(docs[:2], vocab, config.max_len)
    ids = np.array([d.tokens for d in encoded], dtype=np.int32)
    labels = np.array([d.label for d in encoded], dtype=np.int64)
    return model, ids, labels


def _full_model_checks(variant: str, step: float = 1e-5) -> list[GradCheckReport]:
    """Every parameter of a 2-doc forward pass vs central differences."""
    model, ids, labels = _toy_model(variant)
    params = model.parameters()
    with Tape() as tape:
        tape.watch(*params.values())
        loss = cross_entropy(model.forward(ids), labels)
        tape.backward(loss)
        analytic = {name: tape.grad(p).data.copy() for name, p in params.items()}

    def loss_value() -> float:
        return cross_entropy(model.forward(ids), labels).item()

    reports = []
    for name, param in params.items():
        numeric = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        out = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_value()
            flat[i] = orig - step
            down = loss_value()
            flat[i] = orig
            out[i] = (up - down) / (2.0 * step)
        if name == "embedding":
            numeric[0] = 0.0  # row 0 is pinned; its analytic gradient is zero by design
        max_abs, max_rel, max_err = error_stats(analytic[name], numeric)
        reports.append(GradCheckReport(
            name=f"model/{variant}/{name}", max_abs_err=max_abs, max_rel_err=max_rel,
            max_err=max_err, tol=MODEL_TOL, passed=max_err < MODEL_TOL,
        ))
    return reports


def run_suite(include_model: bool = True, log=None) -> list[GradCheckReport]:
    reports = _op_checks()
    if include_model:
        for variant in ("bgcapsule", "bigru_maxpool", "cnn_capsule"):
            reports.extend(_full_model_checks(variant))
    if log:
        for report in reports:
            log(report.line())
    return reports
