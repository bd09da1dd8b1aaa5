"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from styleshift import autodiff as ad


def numeric_grad(fn, tensors, step=1e-4):
    """d fn() / d t for every tensor in ``tensors`` by central differences.

    ``fn`` must rebuild the computation from the tensors' current values and
    return a scalar Tensor; no tape is used here.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.value)
        flat = t.value.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            hi = fn().item()
            flat[k] = orig - step
            lo = fn().item()
            flat[k] = orig
            gflat[k] = (hi - lo) / (2 * step)
        grads.append(g)
    return grads


def analytic_grad(fn, tensors):
    for t in tensors:
        t.grad = None
        t.requires_grad = True
    with ad.Tape() as tape:
        loss = fn()
    ad.backward(loss, tape)
    return [np.zeros_like(t.value) if t.grad is None else np.array(t.grad, dtype=float) for t in tensors]


def relative_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def max_relative_error(fn, tensors, step=1e-4):
    an = analytic_grad(fn, tensors)
    nu = numeric_grad(fn, tensors, step)
    return max(relative_error(a, n) for a, n in zip(an, nu))


def _case_matmul(rng):
    a, b = ad.Tensor(rng.normal(size=(3, 4))), ad.Tensor(rng.normal(size=(4, 2)))
    r = rng.normal(size=(3, 2))
    return (lambda: ad.sum(ad.mul(ad.matmul(a, b), r))), [a, b]


def _case_matmul_batched(rng):
    a, b = ad.Tensor(rng.normal(size=(2, 3, 4))), ad.Tensor(rng.normal(size=(4, 2)))
    r = rng.normal(size=(2, 3, 2))
    return (lambda: ad.sum(ad.mul(ad.matmul(a, b), r))), [a, b]


def _binary(op):
    def case(rng):
        a, b = ad.Tensor(rng.normal(size=(3, 4))), ad.Tensor(rng.normal(size=(4,)))
        r = rng.normal(size=(3, 4))
        return (lambda: ad.sum(ad.mul(op(a, b), r))), [a, b]
    return case


def _unary(op, shape=(3, 5)):
    def case(rng):
        a = ad.Tensor(rng.normal(size=shape))
        r = rng.normal(size=shape)
        return (lambda: ad.sum(ad.mul(op(a), r))), [a]
    return case


def _case_concat(rng):
    a, b = ad.Tensor(rng.normal(size=(2, 3))), ad.Tensor(rng.normal(size=(2, 2)))
    r = rng.normal(size=(2, 5))
    return (lambda: ad.sum(ad.mul(ad.concat([a, b], axis=1), r))), [a, b]


def _case_stack(rng):
    a, b = ad.Tensor(rng.normal(size=(2, 3))), ad.Tensor(rng.normal(size=(2, 3)))
    r = rng.normal(size=(2, 2, 3))
    return (lambda: ad.sum(ad.mul(ad.stack([a, b], axis=1), r))), [a, b]


def _case_take(rng):
    a = ad.Tensor(rng.normal(size=(2, 4, 3)))
    r = rng.normal(size=(2, 3))
    return (lambda: ad.sum(ad.mul(ad.take(a, 2, axis=1), r))), [a]


def _case_embedding(rng):
    table = ad.Tensor(rng.normal(size=(6, 3)))
    ids = rng.integers(0, 6, size=(2, 4))
    r = rng.normal(size=(2, 4, 3))
    return (lambda: ad.sum(ad.mul(ad.embedding(table, ids), r))), [table]


def _case_embedding_bag(rng):
    table = ad.Tensor(rng.normal(size=(6, 3)))
    ids = rng.integers(0, 6, size=(3, 4))
    mask = np.array([[1, 1, 1, 1], [1, 1, 0, 0], [1, 0, 0, 0]], dtype=float)
    r = rng.normal(size=(3, 3))
    return (lambda: ad.sum(ad.mul(ad.embedding_bag(table, ids, mask), r))), [table]


def _case_mean(rng):
    a = ad.Tensor(rng.normal(size=(3, 4)))
    return (lambda: ad.mean(ad.mul(a, a))), [a]


def _case_sum_axis(rng):
    a = ad.Tensor(rng.normal(size=(3, 4)))
    r = rng.normal(size=(3,))
    return (lambda: ad.sum(ad.mul(ad.sum(a, axis=1), r))), [a]


def _case_dot(rng):
    a, b = ad.Tensor(rng.normal(size=(6,))), ad.Tensor(rng.normal(size=(6,)))
    return (lambda: ad.mul(ad.dot(a, b), ad.dot(a, a))), [a, b]


def _case_cross_entropy(rng):
    logits = ad.Tensor(rng.normal(size=(3, 4, 5)))
    target = rng.integers(0, 5, size=(3, 4))
    weights = (rng.random((3, 4)) > 0.3).astype(float)
    weights[0, 0] = 1.0
    return (lambda: ad.softmax_cross_entropy(logits, target, weights)), [logits]


def _case_l2_normalize(rng):
    v = ad.Tensor(rng.normal(size=(5,)))
    r = rng.normal(size=(5,))
    return (lambda: ad.sum(ad.mul(ad.l2_normalize(v), r))), [v]


def _case_lstm_cell(rng):
    x, h, c = (ad.Tensor(rng.normal(size=(2, 3))), ad.Tensor(rng.normal(size=(2, 4))),
               ad.Tensor(rng.normal(size=(2, 4))))
    wx, wh, b = (ad.Tensor(rng.normal(size=(3, 16))), ad.Tensor(rng.normal(size=(4, 16))),
                 ad.Tensor(rng.normal(size=(16,))))
    mask = np.array([1.0, 0.0])
    rh, rc = rng.normal(size=(2, 4)), rng.normal(size=(2, 4))

    def fn():
        h2, c2 = ad.lstm_cell(x, h, c, wx, wh, b, mask)
        return ad.add(ad.sum(ad.mul(h2, rh)), ad.sum(ad.mul(c2, rc)))

    return fn, [x, h, c, wx, wh, b]


def _case_lstm_sequence(rng):
    x = ad.Tensor(rng.normal(size=(2, 3, 3)))
    wx, wh, b = (ad.Tensor(rng.normal(size=(3, 8))), ad.Tensor(rng.normal(size=(2, 8))),
                 ad.Tensor(rng.normal(size=(8,))))
    mask = np.array([[1, 1, 1], [1, 1, 0]], dtype=float)
    reverse = bool(rng.integers(0, 2))
    r = rng.normal(size=(2, 3, 2))
    return (lambda: ad.sum(ad.mul(ad.lstm_sequence(x, wx, wh, b, mask, reverse), r))), [x, wx, wh, b]


def _case_attention(rng):
    q, k, v = (ad.Tensor(rng.normal(size=(2, 3))), ad.Tensor(rng.normal(size=(2, 4, 5))),
               ad.Tensor(rng.normal(size=(2, 4, 2))))
    wq, vv = ad.Tensor(rng.normal(size=(3, 5))), ad.Tensor(rng.normal(size=(5,)))
    mask = np.array([[1, 1, 1, 1], [1, 1, 1, 0]], dtype=bool)
    r = rng.normal(size=(2, 2))
    return (lambda: ad.sum(ad.mul(ad.additive_attention(q, k, v, wq, vv, mask)[0], r))), [q, k, v, wq, vv]


OP_CASES = {
    "matmul": _case_matmul,
    "matmul_batched": _case_matmul_batched,
    "add": _binary(ad.add),
    "sub": _binary(ad.sub),
    "mul": _binary(ad.mul),
    "sigmoid": _unary(ad.sigmoid),
    "tanh": _unary(ad.tanh),
    "softmax": _unary(ad.softmax),
    "transpose": _unary(lambda a: ad.transpose(ad.transpose(a))),
    "reshape": _unary(lambda a: ad.reshape(ad.reshape(a, (5, 3)), (3, 5))),
    "concat": _case_concat,
    "stack": _case_stack,
    "take": _case_take,
    "embedding": _case_embedding,
    "embedding_bag": _case_embedding_bag,
    "mean": _case_mean,
    "sum_axis": _case_sum_axis,
    "dot": _case_dot,
    "softmax_cross_entropy": _case_cross_entropy,
    "l2_normalize": _case_l2_normalize,
    "lstm_cell": _case_lstm_cell,
    "lstm_sequence": _case_lstm_sequence,
    "additive_attention": _case_attention,
}
