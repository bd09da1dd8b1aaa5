"""Minimal tape-based reverse-mode automatic differentiation on numpy arrays.

Every op takes and returns :class:`Tensor` objects.  While a :class:`Tape` is
active (``with Tape() as tape:``) each op whose inputs require gradients is
recorded together with a closure computing the adjoints of its parents;
:func:`backward` then replays the tape in reverse.  Outside a tape ops are
plain numpy computations, which is how inference and greedy decoding run.

Besides the elementwise/linear-algebra primitives there are a few fused ops
(``lstm_cell``, ``lstm_sequence``, ``additive_attention``, ``embedding_bag``,
``softmax_cross_entropy``) with hand-written adjoints; they keep the tape
short enough that pure-numpy training of recurrent models is fast.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64

_state = threading.local()


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an op."""


class DegenerateVectorError(ValueError):
    """Raised when normalizing a vector whose norm is (numerically) zero."""


class SparseRows:
    """Row-sparse gradient of an embedding table: ``rows[k]`` adds to row ``ids[k]``.

    Converts to a dense array on demand (``np.asarray``); duplicate ids sum.
    """

    __slots__ = ("ids", "rows", "shape")

    def __init__(self, ids, rows, shape):
        self.ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        self.rows = np.asarray(rows, dtype=DTYPE).reshape(len(self.ids), *shape[1:])
        self.shape = tuple(shape)

    def coalesce(self) -> "SparseRows":
        uniq, inv = np.unique(self.ids, return_inverse=True)
        acc = np.zeros((len(uniq),) + self.shape[1:])
        np.add.at(acc, inv, self.rows)
        return SparseRows(uniq, acc, self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, self.ids, self.rows)
        return out

    def __array__(self, dtype=None, copy=None):
        out = self.to_dense()
        return out if dtype is None else out.astype(dtype)

    def copy(self) -> "SparseRows":
        return SparseRows(self.ids.copy(), self.rows.copy(), self.shape)

    def __add__(self, other):
        if isinstance(other, SparseRows):
            return SparseRows(np.concatenate([self.ids, other.ids]),
                              np.concatenate([self.rows, other.rows]), self.shape)
        out = np.array(other, dtype=DTYPE, copy=True)
        np.add.at(out, self.ids, self.rows)
        return out

    __radd__ = __add__

    def sum_squares(self) -> float:
        c = self.coalesce()
        return float(np.sum(c.rows * c.rows))


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(value, name: str | None = None) -> Tensor:
    return Tensor(value, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    outputs: tuple
    parents: tuple
    backward_fn: Callable


class Tape:
    """Ordered record of executed ops; usable as a context manager."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def _tape_stack() -> list:
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_grad:
    """Suspend recording inside a ``with`` block, even under an active tape."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False


def _record(outputs: tuple, parents: tuple, backward_fn: Callable) -> None:
    tape = active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return
    for out in outputs:
        out.requires_grad = True
    tape.nodes.append(_Node(outputs, parents, backward_fn))


def backward(loss: Tensor, tape: Tape) -> None:
    """Propagate d(loss)/d(.) into ``.grad`` of every traced tensor.

    Gradients accumulate across calls until zeroed (see :func:`sgd_step`).
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    adj: dict = {id(loss): np.ones_like(loss.value)}
    touched: dict = {id(loss): loss}
    for node in reversed(tape.nodes):
        grads = [adj.get(id(o)) for o in node.outputs]
        if all(g is None for g in grads):
            continue
        grads = [np.zeros_like(o.value) if g is None else np.asarray(g)
                 for g, o in zip(grads, node.outputs)]
        for p, g in zip(node.parents, node.backward_fn(*grads)):
            if g is None or not p.requires_grad:
                continue
            key = id(p)
            if key in adj:
                adj[key] = adj[key] + g
            else:
                adj[key] = g if isinstance(g, SparseRows) else np.array(g, dtype=DTYPE).reshape(p.value.shape)
                touched[key] = p
    for key, t in touched.items():
        g = adj[key]
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.value + b.value)
    _record((out,), (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.value - b.value)
    _record((out,), (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    out = Tensor(av * bv)
    _record((out,), (a, b), lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    out = Tensor(y)
    _record((out,), (a,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    out = Tensor(y)
    _record((out,), (a,), lambda g: (g * (1.0 - y * y),))
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    y = _softmax(a.value)
    out = Tensor(y)
    _record((out,), (a,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))
    return out


# ------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` where ``b`` is 2-D and ``a`` has any leading batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.value, b.value
    out = Tensor(av @ bv)

    def _back(g):
        ga = g @ bv.T
        if av.ndim == 1:
            gb = np.outer(av, g)
        else:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    _record((out,), (a, b), _back)
    return out


def transpose(a: Tensor) -> Tensor:
    """Transpose of a 2-D tensor."""
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D tensor, got shape {a.shape}")
    out = Tensor(a.value.T)
    _record((out,), (a,), lambda g: (g.T,))
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"concat: shapes {shapes} do not conform on axis {axis}") from None
    out = Tensor(value)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    _record((out,), tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis)))
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        value = np.stack([t.value for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeError(f"stack: shapes {shapes} differ") from None
    out = Tensor(value)
    n = len(tensors)
    _record((out,), tuple(tensors),
            lambda g: tuple(np.squeeze(s, axis=axis) for s in np.split(g, n, axis=axis)))
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    out = Tensor(value)
    _record((out,), (a,), lambda g: (g.reshape(a.shape),))
    return out


def take(a: Tensor, index, axis: int = 0) -> Tensor:
    """Select a single index (dropping the axis) or a slice along ``axis``."""
    sl = [slice(None)] * a.ndim
    sl[axis] = index
    sl = tuple(sl)
    out = Tensor(a.value[sl])

    def _back(g):
        full = np.zeros_like(a.value)
        full[sl] = g
        return (full,)

    _record((out,), (a,), _back)
    return out


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding: ids out of range for table {table.shape}")
    out = Tensor(table.value[ids])

    def _back(g):
        return (SparseRows(ids, g.reshape(-1, table.shape[1]), table.shape),)

    _record((out,), (table,), _back)
    return out


def embedding_bag(table: Tensor, ids, mask) -> Tensor:
    """Masked mean of embedding rows: ``ids``/``mask`` are (B, N), output (B, D)."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=DTYPE)
    if ids.shape != mask.shape or ids.ndim != 2:
        raise ShapeError(f"embedding_bag: ids {ids.shape} and mask {mask.shape} must be equal 2-D")
    counts = np.maximum(mask.sum(axis=1, keepdims=True), 1.0)
    weights = mask / counts
    out = Tensor(np.einsum("bn,bnd->bd", weights, table.value[ids]))

    def _back(g):
        contrib = weights[:, :, None] * g[:, None, :]
        return (SparseRows(ids, contrib.reshape(-1, table.shape[1]), table.shape),)

    _record((out,), (table,), _back)
    return out


# ----------------------------------------------------------------- reductions

def mean(a: Tensor) -> Tensor:
    n = a.value.size
    out = Tensor(a.value.mean())
    _record((out,), (a,), lambda g: (np.full(a.shape, g / n),))
    return out


def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    out = Tensor(a.value.sum(axis=axis))

    def _back(g):
        if axis is None:
            return (np.full(a.shape, g),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape),)

    _record((out,), (a,), _back)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of two vectors of equal length."""
    if a.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"dot: shapes {a.shape} and {b.shape} are not equal vectors")
    return sum(mul(a, b))


# ---------------------------------------------------------- losses / normals

def softmax_cross_entropy(logits: Tensor, target, weights=None) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over all positions.

    ``logits`` has shape (..., K) and ``target`` the leading shape (a bare int
    for a single K-vector).  With ``weights`` (same shape as ``target``) the
    result is ``sum(w * nll) / sum(w)``; zero weights mask padding.
    """
    lv = logits.value
    k = lv.shape[-1]
    target = np.asarray(target, dtype=np.int64)
    if target.shape != lv.shape[:-1]:
        raise ShapeError(f"softmax_cross_entropy: logits {lv.shape} vs target {target.shape}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise IndexError(f"softmax_cross_entropy: target index out of range [0, {k})")
    w = np.ones(target.shape, dtype=DTYPE) if weights is None else np.asarray(weights, dtype=DTYPE)
    if w.shape != target.shape:
        raise ShapeError(f"softmax_cross_entropy: weights {w.shape} vs target {target.shape}")
    total = w.sum()
    if total <= 0:
        raise ValueError("softmax_cross_entropy: weights sum to zero")
    logp = _log_softmax(lv)
    idx = target[..., None]
    picked = np.take_along_axis(logp, idx, axis=-1)[..., 0]
    out = Tensor(-(w * picked).sum() / total)

    def _back(g):
        p = np.exp(logp)
        np.put_along_axis(p, idx, np.take_along_axis(p, idx, axis=-1) - 1.0, axis=-1)
        return (p * (w / total)[..., None] * g,)

    _record((out,), (logits,), _back)
    return out


def l2_normalize(v: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale ``v`` (or each row of a 2-D ``v``) to unit Euclidean norm."""
    v = as_tensor(v)
    x = v.value
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(norm < eps):
        raise DegenerateVectorError(f"l2_normalize: vector norm below {eps}")
    y = x / norm
    out = Tensor(y)
    _record((out,), (v,), lambda g: ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,))
    return out


# ---------------------------------------------------------------- fused RNNs

def _lstm_gates(pre: np.ndarray, c_prev: np.ndarray):
    h = c_prev.shape[-1]
    i = _sigmoid(pre[:, :h])
    f = _sigmoid(pre[:, h:2 * h])
    g = np.tanh(pre[:, 2 * h:3 * h])
    o = _sigmoid(pre[:, 3 * h:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    return i, f, g, o, c, tc, o * tc


def _lstm_gate_grads(dh, dc, c_prev, i, f, g, o, tc):
    dc = dc + dh * o * (1.0 - tc * tc)
    dpre = np.concatenate(
        [dc * g * i * (1.0 - i), dc * c_prev * f * (1.0 - f), dc * i * (1.0 - g * g),
         dh * tc * o * (1.0 - o)], axis=1)
    return dpre, dc * f


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor,
              mask=None) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, cell, output).

    ``x`` (B, D), ``h``/``c`` (B, H), ``w_x`` (D, 4H), ``w_h`` (H, 4H), ``b`` (4H,).
    Rows with ``mask == 0`` carry ``h``/``c`` through unchanged.
    """
    hid = h.shape[-1]
    if (x.ndim != 2 or w_x.shape != (x.shape[1], 4 * hid) or w_h.shape != (hid, 4 * hid)
            or b.shape != (4 * hid,) or c.shape != h.shape or h.shape[0] != x.shape[0]):
        raise ShapeError(f"lstm_cell: x {x.shape}, h {h.shape}, c {c.shape}, "
                         f"w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}")
    xv, hv, cv = x.value, h.value, c.value
    pre = xv @ w_x.value + hv @ w_h.value + b.value
    i, f, g, o, c_new, tc, h_new = _lstm_gates(pre, cv)
    if mask is not None:
        m = np.asarray(mask, dtype=DTYPE).reshape(-1, 1)
        h_out = m * h_new + (1.0 - m) * hv
        c_out = m * c_new + (1.0 - m) * cv
    else:
        m = None
        h_out, c_out = h_new, c_new
    h_t, c_t = Tensor(h_out), Tensor(c_out)

    def _back(gh, gc):
        if m is not None:
            dh, dc_in = gh * m, gc * m
        else:
            dh, dc_in = gh, gc
        dpre, dc_prev = _lstm_gate_grads(dh, dc_in, cv, i, f, g, o, tc)
        dx = dpre @ w_x.value.T
        dh_prev = dpre @ w_h.value.T
        if m is not None:
            dh_prev = dh_prev + gh * (1.0 - m)
            dc_prev = dc_prev + gc * (1.0 - m)
        return dx, dh_prev, dc_prev, xv.T @ dpre, hv.T @ dpre, dpre.sum(axis=0)

    _record((h_t, c_t), (x, h, c, w_x, w_h, b), _back)
    return h_t, c_t


def lstm_sequence(x: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, mask=None,
                  reverse: bool = False) -> Tensor:
    """Run an LSTM over ``x`` (B, T, D) from zero state; returns states (B, T, H).

    With ``reverse`` the scan runs from the last position to the first.  Masked
    positions (mask (B, T) == 0) hold the running state and are not updated,
    so right-padding is transparent in both directions.
    """
    if x.ndim != 3 or w_x.shape[0] != x.shape[2] or w_h.shape[1] != w_x.shape[1]:
        raise ShapeError(f"lstm_sequence: x {x.shape}, w_x {w_x.shape}, w_h {w_h.shape}")
    bsz, steps, _ = x.shape
    hid = w_h.shape[0]
    xv = x.value
    m = np.ones((bsz, steps), dtype=DTYPE) if mask is None else np.asarray(mask, dtype=DTYPE)
    wx, wh, bv = w_x.value, w_h.value, b.value
    xproj = xv @ wx + bv
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    h = np.zeros((bsz, hid))
    c = np.zeros((bsz, hid))
    hs = np.zeros((bsz, steps, hid))
    cache = []
    for t in order:
        pre = xproj[:, t] + h @ wh
        i, f, g, o, c_new, tc, h_new = _lstm_gates(pre, c)
        mt = m[:, t:t + 1]
        cache.append((t, h, c, i, f, g, o, tc, mt))
        h = mt * h_new + (1.0 - mt) * h
        c = mt * c_new + (1.0 - mt) * c
        hs[:, t] = h
    out = Tensor(hs)

    def _back(gout):
        dx_proj = np.zeros((bsz, steps, 4 * hid))
        dwh = np.zeros_like(wh)
        dh = np.zeros((bsz, hid))
        dc = np.zeros((bsz, hid))
        for t, h_prev, c_prev, i, f, g, o, tc, mt in reversed(cache):
            dh = dh + gout[:, t]
            dpre, dc_prev = _lstm_gate_grads(dh * mt, dc * mt, c_prev, i, f, g, o, tc)
            dx_proj[:, t] = dpre
            dwh += h_prev.T @ dpre
            dh = dpre @ wh.T + dh * (1.0 - mt)
            dc = dc_prev + dc * (1.0 - mt)
        dx = dx_proj @ wx.T
        dwx = xv.reshape(-1, xv.shape[2]).T @ dx_proj.reshape(-1, 4 * hid)
        return dx, dwx, dwh, dx_proj.sum(axis=(0, 1))

    _record((out,), (x, w_x, w_h, b), _back)
    return out


def additive_attention(query: Tensor, keys: Tensor, values: Tensor, w_q: Tensor, v: Tensor,
                       mask=None) -> tuple[Tensor, np.ndarray]:
    """Bahdanau attention: ``score_t = v . tanh(keys_t + query @ w_q)``.

    ``query`` (B, Q), ``keys`` (B, T, A) (already projected), ``values``
    (B, T, D), ``w_q`` (Q, A), ``v`` (A,).  Returns the context (B, D) and the
    attention weights (B, T) as a plain array (masked positions get 0).
    """
    if (keys.ndim != 3 or values.shape[:2] != keys.shape[:2] or w_q.shape != (query.shape[1], keys.shape[2])
            or v.shape != (keys.shape[2],) or query.shape[0] != keys.shape[0]):
        raise ShapeError(f"additive_attention: query {query.shape}, keys {keys.shape}, "
                         f"values {values.shape}, w_q {w_q.shape}, v {v.shape}")
    qv, kv, vv = query.value, keys.value, values.value
    s = np.tanh(kv + (qv @ w_q.value)[:, None, :])
    e = s @ v.value
    if mask is not None:
        e = np.where(np.asarray(mask, dtype=bool), e, -np.inf)
    alpha = _softmax(e)
    ctx = Tensor(np.einsum("bt,btd->bd", alpha, vv))

    def _back(gctx):
        dalpha = np.einsum("btd,bd->bt", vv, gctx)
        de = alpha * (dalpha - (alpha * dalpha).sum(axis=1, keepdims=True))
        dv = np.einsum("bt,bta->a", de, s)
        da = de[:, :, None] * v.value * (1.0 - s * s)
        dq_proj = da.sum(axis=1)
        return (dq_proj @ w_q.value.T, da, alpha[:, :, None] * gctx[:, None, :],
                qv.T @ dq_proj, dv)

    _record((ctx,), (query, keys, values, w_q, v), _back)
    return ctx, alpha


# ------------------------------------------------------------------ optimizer

@dataclass
class SgdConfig:
    learning_rate: float = 0.5
    gradient_clip_norm: float | None = 5.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.gradient_clip_norm is not None and not self.gradient_clip_norm > 0:
            raise ValueError(f"gradient_clip_norm must be positive or None, got {self.gradient_clip_norm}")


def global_grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if isinstance(p.grad, SparseRows):
            total += p.grad.sum_squares()
        elif p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    return float(np.sqrt(total))


def sgd_step(params: Sequence[Tensor], config: SgdConfig) -> float:
    """Plain SGD update with optional global-norm clipping; zeroes the grads.

    Returns the pre-clipping gradient norm.
    """
    for p in params:
        if isinstance(p.grad, SparseRows):
            p.grad = p.grad.coalesce()
    norm = global_grad_norm(params)
    scale = config.learning_rate
    if config.gradient_clip_norm is not None and norm > config.gradient_clip_norm:
        scale *= config.gradient_clip_norm / norm
    for p in params:
        if isinstance(p.grad, SparseRows):
            p.value[p.grad.ids] -= scale * p.grad.rows
        elif p.grad is not None:
            p.value -= scale * p.grad
        p.grad = None
    return norm


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        p.grad = None
