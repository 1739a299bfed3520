"""Forward stack: embedding lookup, GRU/BiGRU ensemble, capsules with
agreement routing, and the dense softmax head.

Shapes use N for batch, T for sequence length, F for features, I/J for
capsule counts in the lower/upper layer, and D for capsule dimension.
Every op here is recorded on the active tape and passes gradient
checking; see ``gradsuite``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError
from .tensor import Tensor, record_op


def glorot_uniform(rng, shape, dtype=np.float32) -> Tensor:
    """Fan-based uniform init; fans are the trailing two extents."""
    fan_in, fan_out = (shape[0], shape[0]) if len(shape) == 1 else (shape[-2], shape[-1])
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype))


# ---------------------------------------------------------------------------
# embedding


def embedding_forward(table: Tensor, token_ids: np.ndarray, trainable: bool = False) -> Tensor:
    """Gather rows of [V+1, E] by integer ids [N, T] -> [N, T, E].

    With ``trainable`` the gradient scatter-adds into the table, except
    row 0 (padding), which never receives gradient.
    """
    ids = np.asarray(token_ids)
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= table.shape[0]:
        raise DimensionError(
            f"token ids outside table with {table.shape[0]} rows"
        )
    out = table.data[ids]
    if not trainable:
        return Tensor(out)

    def back(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        grad[0] = 0.0
        return (grad,)

    return record_op(out, (table,), back)


# ---------------------------------------------------------------------------
# GRU


@dataclass
class GruParams:
    """Gate and candidate weights over the [h, x] concatenation."""

    w_z: Tensor  # (hidden+input, hidden)
    w_r: Tensor
    w_h: Tensor
    b_z: Tensor  # (hidden,)
    b_r: Tensor
    b_h: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_z.shape[1]

    def named(self, prefix: str):
        yield f"{prefix}.w_z", self.w_z
        yield f"{prefix}.w_r", self.w_r
        yield f"{prefix}.w_h", self.w_h
        yield f"{prefix}.b_z", self.b_z
        yield f"{prefix}.b_r", self.b_r
        yield f"{prefix}.b_h", self.b_h


def init_gru(rng, input_size: int, hidden_size: int, dtype=np.float32) -> GruParams:
    total = hidden_size + input_size
    return GruParams(
        w_z=glorot_uniform(rng, (total, hidden_size), dtype),
        w_r=glorot_uniform(rng, (total, hidden_size), dtype),
        w_h=glorot_uniform(rng, (total, hidden_size), dtype),
        b_z=T.zeros((hidden_size,), dtype),
        b_r=T.zeros((hidden_size,), dtype),
        b_h=T.zeros((hidden_size,), dtype),
    )


def gru_step(x_t: Tensor, h_prev: Tensor, params: GruParams, h_mask: Tensor | None = None) -> Tensor:
    """One GRU update for a batch: [N,F], [N,H] -> [N,H].

    ``h_mask`` is an optional recurrent-dropout mask applied to the
    hidden state as seen by the gates; the state carried through the
    update-gate interpolation stays unmasked.
    """
    h_in = T.mul(h_prev, h_mask) if h_mask is not None else h_prev
    hx = T.concat([h_in, x_t], axis=1)
    z = T.sigmoid(T.add_bias(T.matmul(hx, params.w_z), params.b_z))
    r = T.sigmoid(T.add_bias(T.matmul(hx, params.w_r), params.b_r))
    rh = T.concat([T.mul(r, h_in), x_t], axis=1)
    candidate = T.tanh(T.add_bias(T.matmul(rh, params.w_h), params.b_h))
    keep = T.sub(T.ones(z.shape, z.dtype), z)
    return T.add(T.mul(keep, h_prev), T.mul(z, candidate))


def run_gru(seq: Tensor, params: GruParams, reverse: bool = False,
            h_mask: Tensor | None = None) -> Tensor:
    """Unroll a GRU over [N,T,F] -> [N,T,H], starting from h = 0.

    With ``reverse`` the scan runs right-to-left but outputs stay at
    their original positions.
    """
    n, t_len, _ = seq.shape
    h = T.zeros((n, params.hidden_size), seq.dtype)
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    outputs: list[Tensor | None] = [None] * t_len
    for t in steps:
        h = gru_step(T.take(seq, 1, t), h, params, h_mask)
        outputs[t] = T.reshape(h, (n, 1, params.hidden_size))
    return T.concat(outputs, axis=1)


def bigru_forward(seq: Tensor, params_fwd: GruParams, params_bwd: GruParams,
                  masks: tuple[Tensor | None, Tensor | None] = (None, None)) -> Tensor:
    """Both directions concatenated per position: [N,T,F] -> [N,T,2H]."""
    fwd = run_gru(seq, params_fwd, reverse=False, h_mask=masks[0])
    bwd = run_gru(seq, params_bwd, reverse=True, h_mask=masks[1])
    return T.concat([fwd, bwd], axis=2)


def ensemble_forward(seq: Tensor, bigru1, bigru2, masks=((None, None), (None, None))) -> Tensor:
    """Channel-wise concat of two BiGRUs: [N,T,F] -> [N,T,2*H1+2*H2]."""
    out1 = bigru_forward(seq, bigru1[0], bigru1[1], masks[0])
    out2 = bigru_forward(seq, bigru2[0], bigru2[1], masks[1])
    return T.concat([out1, out2], axis=2)


# ---------------------------------------------------------------------------
# capsules


def squash(t: Tensor, axis: int = -1) -> Tensor:
    """Norm-limiting nonlinearity: v = (|s|^2 / (1+|s|^2)) * s/|s|.

    Keeps direction, maps norms into [0, 1). Zero vectors stay zero and
    get zero gradient.
    """
    x = t.data
    axis = axis % x.ndim if x.ndim else 0
    q = (x * x).sum(axis=axis, keepdims=True)  # |s|^2
    safe_q = np.where(q > 0, q, 1.0)
    root = np.sqrt(safe_q)
    scale = np.where(q > 0, root / (1.0 + q), 0.0)
    out = (x * scale).astype(t.dtype, copy=False)

    def back(g):
        # d scale/d q = (1 - q) / (2 sqrt(q) (1+q)^2), chain through q = sum s^2
        dscale_dq = np.where(q > 0, (1.0 - q) / (2.0 * root * (1.0 + q) ** 2), 0.0)
        inner = (g * x).sum(axis=axis, keepdims=True)
        return ((g * scale + 2.0 * x * dscale_dq * inner).astype(t.dtype, copy=False),)

    return record_op(out, (t,), back)


def primary_capsules(features: Tensor, weight: Tensor, bias: Tensor,
                     caps_per_pos: int, caps_dim: int) -> Tensor:
    """Project per-position features into capsules and squash.

    [N,T,F] with weight [F, caps_per_pos*caps_dim] -> [N, T*caps_per_pos, caps_dim].
    """
    n, t_len, feat = features.shape
    if weight.shape != (feat, caps_per_pos * caps_dim):
        raise ConfigError(
            f"primary capsule projection {weight.shape} does not map {feat} features "
            f"to {caps_per_pos}x{caps_dim} capsules"
        )
    flat = T.reshape(features, (n * t_len, feat))
    projected = T.add_bias(T.matmul(flat, weight), bias)
    caps = T.reshape(projected, (n, t_len * caps_per_pos, caps_dim))
    return squash(caps, axis=-1)


def predict_vectors(u: Tensor, weights: Tensor) -> Tensor:
    """Per-pair votes u_hat[j|i] = W_ij u_i.

    ``weights`` is either [J, D, D'] (shared over input capsules) or
    [J, I, D, D'] (one matrix per pair); u is [N, I, D]. Returns
    [N, J, I, D'].
    """
    if weights.ndim == 3:
        if weights.shape[1] != u.shape[2]:
            raise DimensionError(f"prediction weights {weights.shape} vs capsules {u.shape}")
        return T.einsum2("nid,jde->njie", u, weights)
    if weights.ndim == 4:
        if weights.shape[1] != u.shape[1] or weights.shape[2] != u.shape[2]:
            raise DimensionError(f"prediction weights {weights.shape} vs capsules {u.shape}")
        return T.einsum2("nid,jide->njie", u, weights)
    raise DimensionError(f"prediction weights must have rank 3 or 4, got {weights.shape}")


@dataclass
class RoutingInfo:
    """Final couplings/logits plus per-iteration coupling snapshots."""

    couplings: np.ndarray  # [N, I, J]
    logits: np.ndarray  # [N, I, J]
    iterations: int
    coupling_history: list  # one [N, I, J] array per iteration


def dynamic_routing(u_hat: Tensor, iterations: int,
                    normalize_over: str = "output_caps") -> tuple[Tensor, RoutingInfo]:
    """Agreement routing over prediction vectors [N, J, I, D'].

    Logits start at zero; each round takes the coupling softmax, forms
    the weighted vote sum per upper capsule, squashes it, and adds the
    vote/output dot products back into the logits. The whole unroll is
    differentiable. ``normalize_over`` picks the softmax axis: couplings
    of one input capsule over upper capsules ("output_caps", default) or
    of one upper capsule over inputs ("input_caps").
    """
    if iterations < 1:
        raise ContractError(f"routing needs at least 1 iteration, got {iterations}")
    if normalize_over not in ("output_caps", "input_caps"):
        raise ConfigError(f"unknown routing normalization {normalize_over!r}")
    n, j_count, i_count, _ = u_hat.shape
    axis = 2 if normalize_over == "output_caps" else 1
    b = T.zeros((n, i_count, j_count), u_hat.dtype)
    history = []
    v = None
    c = b
    for _ in range(iterations):
        c = T.softmax(b, axis=axis)
        history.append(c.data.copy())
        s = T.einsum2("nij,njie->nje", c, u_hat)
        v = squash(s, axis=-1)
        agreement = T.einsum2("njie,nje->nij", u_hat, v)
        b = T.add(b, agreement)
    info = RoutingInfo(
        couplings=c.data.copy(),
        logits=b.data.copy(),
        iterations=iterations,
        coupling_history=history,
    )
    return v, info


def flatten_capsules(v: Tensor) -> Tensor:
    """[N, J, D'] -> [N, J*D'], row-major."""
    n, j_count, dim = v.shape
    return T.reshape(v, (n, j_count * dim))


# ---------------------------------------------------------------------------
# dense head


@dataclass
class HeadParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    def named(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def init_head(rng, in_size: int, hidden: int, classes: int, dtype=np.float32) -> HeadParams:
    return HeadParams(
        w1=glorot_uniform(rng, (in_size, hidden), dtype),
        b1=T.zeros((hidden,), dtype),
        w2=glorot_uniform(rng, (hidden, classes), dtype),
        b2=T.zeros((classes,), dtype),
    )


def dense_head(x: Tensor, params: HeadParams, activation: str = "relu") -> Tensor:
    """Hidden layer + linear + softmax -> class probabilities [N, C]."""
    act = T.relu if activation == "relu" else T.selu
    hidden = act(T.add_bias(T.matmul(x, params.w1), params.b1))
    logits = T.add_bias(T.matmul(hidden, params.w2), params.b2)
    return T.softmax(logits, axis=1)


# ---------------------------------------------------------------------------
# ablation building blocks


def max_pool_routing(features: Tensor, window: int = 4) -> Tensor:
    """Elementwise max over non-overlapping position windows.

    [N,T,F] -> [N, T//window, F]; a trailing remainder is dropped.
    Gradient goes to the (earliest) argmax position of each window only.
    """
    if window < 1:
        raise ContractError(f"pool window must be >= 1, got {window}")
    n, t_len, feat = features.shape
    blocks = t_len // window
    if blocks < 1:
        raise DimensionError(f"window {window} exceeds sequence length {t_len}")
    x = features.data[:, :blocks * window, :].reshape(n, blocks, window, feat)
    arg = x.argmax(axis=2)  # first maximum wins ties
    out = np.take_along_axis(x, arg[:, :, None, :], axis=2)[:, :, 0, :]

    def back(g):
        grad_blocks = np.zeros_like(x)
        np.put_along_axis(grad_blocks, arg[:, :, None, :], g[:, :, None, :], axis=2)
        grad = np.zeros(features.shape, dtype=g.dtype)
        grad[:, :blocks * window, :] = grad_blocks.reshape(n, blocks * window, feat)
        return (grad,)

    return record_op(out, (features,), back)


def conv1d_same(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    """1-d convolution over positions with zero same-padding.

    [N,T,F] with kernel [w,F,K] -> [N,T,K].
    """
    if kernel.ndim != 3 or kernel.shape[1] != x.shape[2]:
        raise DimensionError(f"conv kernel {kernel.shape} does not match input {x.shape}")
    n, t_len, feat = x.shape
    width, _, out_ch = kernel.shape
    left = (width - 1) // 2
    padded = np.zeros((n, t_len + width - 1, feat), dtype=x.dtype)
    padded[:, left:left + t_len, :] = x.data
    windows = np.lib.stride_tricks.sliding_window_view(padded, width, axis=1)  # [N,T,F,w]
    out = np.einsum("ntfw,wfk->ntk", windows, kernel.data, optimize=True) + bias.data

    def back(g):
        grad_k = np.einsum("ntfw,ntk->wfk", windows, g, optimize=True)
        grad_b = g.sum(axis=(0, 1))
        grad_pad = np.zeros_like(padded)
        for d in range(width):
            grad_pad[:, d:d + t_len, :] += np.einsum(
                "ntk,fk->ntf", g, kernel.data[d], optimize=True
            )
        return (grad_pad[:, left:left + t_len, :], grad_k, grad_b)

    return record_op(out, (x, kernel, bias), back)


def cnn_feature_extractor(embedded: Tensor, kernels, biases) -> Tensor:
    """Parallel same-padded convolutions with ReLU, channel-concatenated.

    [N,T,E] -> [N,T,sum of filter counts].
    """
    outputs = [T.relu(conv1d_same(embedded, k, b)) for k, b in zip(kernels, biases)]
    return T.concat(outputs, axis=2)
