"""Dense tensors with a reverse-mode gradient tape.

Values are numpy arrays in row-major order. float32 is the working
precision for training; build tensors with ``dtype=np.float64`` when
checking gradients. Binary ops require identical shapes: the only
broadcasting allowed is scalar*tensor (``scale``) and the explicit
row-vector add (``add_bias``). Set ``BGC_CHECK_FINITE=1`` to assert
that every op output is finite.

A :class:`Tape` records ops while it is the active context. ``backward``
walks the recorded nodes in reverse creation order, which is a reverse
topological order because inputs always exist before their outputs.
Tapes are single-threaded and meant to be discarded after one
forward/backward pass.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

_state = threading.local()
_check_finite = os.environ.get("BGC_CHECK_FINITE", "") == "1"


def set_check_finite(enabled: bool) -> None:
    """Toggle the NaN/Inf assertion on op outputs (BGC_CHECK_FINITE)."""
    global _check_finite
    _check_finite = bool(enabled)


class Tensor:
    """Immutable-by-convention n-d float array, optionally on a tape.

    ``node_id`` is the index of the op that produced this tensor on the
    active tape, or None for leaves / untaped values.
    """

    __slots__ = ("data", "node_id")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.node_id = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.item())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"

    # arithmetic sugar; shapes must match exactly, numbers mean scale
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def norm(self, axis=None, keepdims=False):
        return norm(self, axis, keepdims)


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Append-only op log for one forward pass.

    Use as a context manager; ops executed inside record themselves.
    ``backward`` may be called repeatedly and always recomputes from
    scratch, so replays are deterministic.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.gradients: dict[int, np.ndarray] = {}
        self._watched: list[Tensor] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False

    def watch(self, *tensors: Tensor) -> None:
        """Register leaves so ``grad`` reports zeros when loss ignores them."""
        self._watched.extend(tensors)

    def record(self, output: Tensor, inputs, backward) -> None:
        output.node_id = len(self.nodes)
        self.nodes.append(_Node(output, tuple(inputs), backward))

    def backward(self, loss: Tensor) -> None:
        """Populate gradients of everything recorded, seeding d(loss)=1."""
        if loss.shape != ():
            raise ContractError(f"loss must be a scalar tensor, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            for tensor, contrib in zip(node.inputs, node.backward(g)):
                if contrib is None:
                    continue
                acc = grads.get(id(tensor))
                grads[id(tensor)] = contrib if acc is None else acc + contrib
        self.gradients = grads

    def grad(self, tensor: Tensor) -> Tensor:
        """Gradient of the last ``backward`` loss w.r.t. ``tensor`` (zeros if untouched)."""
        arr = self.gradients.get(id(tensor))
        if arr is None:
            return Tensor(np.zeros_like(tensor.data))
        return Tensor(np.broadcast_to(arr, tensor.shape).astype(tensor.dtype, copy=False))


def active_tape() -> Tape | None:
    stack = getattr(_state, "tapes", None)
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Tensor) -> None:
    tape.backward(loss)


def record_op(out_data: np.ndarray, inputs, backward_fn) -> Tensor:
    """Wrap an op result and record it on the active tape, if any.

    ``backward_fn(grad_out)`` must return one gradient array (or None)
    per input, each matching that input's shape.
    """
    if _check_finite and not np.all(np.isfinite(out_data)):
        raise FloatingPointError("non-finite value in op output")
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None:
        tape.record(out, inputs, backward_fn)
    return out


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} requires identical shapes, got {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product [m,k] x [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs [m,k] x [k,n], got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return record_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")
    return record_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")
    return record_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(t: Tensor, c) -> Tensor:
    c = float(c)
    return record_op(t.data * c, (t,), lambda g: (g * c,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-F bias vector to every row of [..., F]."""
    if b.ndim != 1 or x.ndim < 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias needs [...,F] and [F], got {x.shape} and {b.shape}")
    lead = tuple(range(x.ndim - 1))
    return record_op(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def sigmoid(t: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-t.data))
    return record_op(out, (t,), lambda g: (g * out * (1.0 - out),))


def tanh(t: Tensor) -> Tensor:
    out = np.tanh(t.data)
    return record_op(out, (t,), lambda g: (g * (1.0 - out * out),))


def relu(t: Tensor) -> Tensor:
    x = t.data
    out = np.maximum(x, 0)
    return record_op(out, (t,), lambda g: (g * (x > 0),))


def selu(t: Tensor) -> Tensor:
    x = t.data
    pos = x > 0
    out = np.where(pos, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    out = out.astype(t.dtype, copy=False)
    return record_op(
        out, (t,), lambda g: (g * np.where(pos, SELU_LAMBDA, out + SELU_LAMBDA * SELU_ALPHA),)
    )


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted exp-normalize along ``axis``; slices sum to one."""
    _check_axis(t, axis)
    x = t.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - dot) * out,)

    return record_op(out, (t,), back)


# ---------------------------------------------------------------------------
# structural ops


def _check_axis(t: Tensor, axis: int) -> int:
    if not -t.ndim <= axis < t.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {t.shape}")
    return axis % t.ndim


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat of zero tensors")
    axis = _check_axis(tensors[0], axis)
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise DimensionError(
                f"concat shapes differ off axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    return record_op(out, tensors, lambda g: tuple(np.split(g, offsets, axis=axis)))


def slice_axis(t: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice [start, stop) along one axis."""
    axis = _check_axis(t, axis)
    extent = t.shape[axis]
    if not 0 <= start < stop <= extent:
        raise DimensionError(f"slice [{start},{stop}) out of range for axis {axis} of {t.shape}")
    index = (slice(None),) * axis + (slice(start, stop),)

    def back(g):
        full = np.zeros(t.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return record_op(t.data[index], (t,), back)


def take(t: Tensor, axis: int, i: int) -> Tensor:
    """Select index ``i`` along ``axis``, dropping that axis."""
    axis = _check_axis(t, axis)
    if not 0 <= i < t.shape[axis]:
        raise DimensionError(f"index {i} out of range for axis {axis} of {t.shape}")
    index = (slice(None),) * axis + (i,)

    def back(g):
        full = np.zeros(t.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return record_op(t.data[index], (t,), back)


def reshape(t: Tensor, shape) -> Tensor:
    out = t.data.reshape(shape)
    return record_op(out, (t,), lambda g: (g.reshape(t.shape),))


def transpose(t: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(t.ndim)))
    axes = tuple(a % t.ndim for a in axes)
    if sorted(axes) != list(range(t.ndim)):
        raise DimensionError(f"transpose axes {axes} is not a permutation for shape {t.shape}")
    inverse = np.argsort(axes)
    return record_op(t.data.transpose(axes), (t,), lambda g: (g.transpose(inverse),))


def reduce_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is not None:
        axis = _check_axis(t, axis)
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, t.shape).astype(t.dtype, copy=False),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, t.shape),)

    return record_op(out, (t,), back)


def norm(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    """Euclidean norm along an axis (or of the whole tensor); zero-safe gradient."""
    if axis is not None:
        axis = _check_axis(t, axis)
    x = t.data
    n = np.sqrt((x * x).sum(axis=axis, keepdims=keepdims))

    def back(g):
        nk = n if (keepdims or axis is None) else np.expand_dims(n, axis)
        gk = g if (keepdims or axis is None) else np.expand_dims(g, axis)
        safe = np.where(nk > 0, nk, 1.0)
        return (np.where(nk > 0, gk * x / safe, 0.0).astype(t.dtype, copy=False),)

    return record_op(n, (t,), back)


def mean(t: Tensor) -> Tensor:
    return scale(reduce_sum(t), 1.0 / t.size)


# ---------------------------------------------------------------------------
# two-operand einsum


def _parse_einsum2(subscripts: str, a: Tensor, b: Tensor):
    try:
        in_spec, out_spec = subscripts.replace(" ", "").split("->")
        a_spec, b_spec = in_spec.split(",")
    except ValueError:
        raise DimensionError(f"einsum2 spec must look like 'ab,bc->ac', got {subscripts!r}")
    for spec, t in ((a_spec, a), (b_spec, b)):
        if len(spec) != t.ndim:
            raise DimensionError(f"spec {spec!r} does not match shape {t.shape}")
        if len(set(spec)) != len(spec):
            raise DimensionError(f"repeated index in operand spec {spec!r} is not supported")
    known = set(a_spec) | set(b_spec)
    if not set(out_spec) <= known:
        raise DimensionError(f"output indices {out_spec!r} not all bound by inputs")
    # every input index must survive in the other operand or the output,
    # otherwise the adjoint einsum would be underdetermined
    for spec, other in ((a_spec, set(b_spec) | set(out_spec)), (b_spec, set(a_spec) | set(out_spec))):
        if not set(spec) <= other:
            raise DimensionError(f"index summed inside a single operand in {subscripts!r}")
    extents: dict[str, int] = {}
    for spec, t in ((a_spec, a), (b_spec, b)):
        for letter, extent in zip(spec, t.shape):
            if extents.setdefault(letter, extent) != extent:
                raise DimensionError(
                    f"extent mismatch for index {letter!r} in {subscripts!r}: "
                    f"{a.shape} vs {b.shape}"
                )
    return a_spec, b_spec, out_spec


def einsum2(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Differentiable two-operand einsum for batched contractions.

    Each index must appear in at least two of (a, b, output) so both
    adjoints are plain einsums; diagonals are rejected.
    """
    a_spec, b_spec, out_spec = _parse_einsum2(subscripts, a, b)
    ad, bd = a.data, b.data
    out = np.einsum(subscripts, ad, bd, optimize=True)

    def back(g):
        ga = np.einsum(f"{out_spec},{b_spec}->{a_spec}", g, bd, optimize=True)
        gb = np.einsum(f"{a_spec},{out_spec}->{b_spec}", ad, g, optimize=True)
        return (ga, gb)

    return record_op(out, (a, b), back)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheckReport:
    """Comparison of analytic vs central-difference gradients.

    Per element the error is min(absolute, relative) difference, so a
    check passes where either measure is small; ``max_err`` is the worst
    element.
    """

    name: str
    max_abs_err: float
    max_rel_err: float
    max_err: float
    tol: float
    passed: bool

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"op={self.name} err={self.max_err:.3e} abs={self.max_abs_err:.3e} rel={self.max_rel_err:.3e} {status}"


def error_stats(analytic: np.ndarray, numeric: np.ndarray):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    abs_err = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel_err = np.where(denom > 0, abs_err / np.where(denom > 0, denom, 1.0), 0.0)
    combined = np.minimum(abs_err, rel_err)
    if abs_err.size == 0:
        return 0.0, 0.0, 0.0
    return float(abs_err.max()), float(rel_err.max()), float(combined.max())


def grad_check(f, x: Tensor, step: float = 1e-5, tol: float = 1e-4, name: str = "") -> GradCheckReport:
    """Check d f(x) / d x against central finite differences.

    ``f`` must be deterministic and return a scalar Tensor; the check is
    run in float64 regardless of the dtype of ``x``.
    """
    base = x.data.astype(np.float64)
    with Tape() as tape:
        xt = Tensor(base.copy())
        tape.watch(xt)
        loss = f(xt)
        if loss.shape != ():
            raise ContractError("grad_check target must return a scalar")
        tape.backward(loss)
        analytic = tape.grad(xt).data

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        up = f(Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - step
        down = f(Tensor(bumped.reshape(base.shape))).item()
        num_flat[i] = (up - down) / (2.0 * step)

    max_abs, max_rel, max_err = error_stats(analytic, numeric)
    return GradCheckReport(
        name=name or getattr(f, "__name__", "f"),
        max_abs_err=max_abs,
        max_rel_err=max_rel,
        max_err=max_err,
        tol=tol,
        passed=max_err < tol,
    )
