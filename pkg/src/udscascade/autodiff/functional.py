"""Differentiable primitives.

Every function takes and returns :class:`Tensor` objects; plain numbers and
arrays are promoted to constants.  Backward closures return one gradient
(or ``None``) per parent, in parent order.
"""

from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, f"cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor.from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor.from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return Tensor.from_op(out, (a, b), backward, "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(x.data * mask, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out, (x,), backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return Tensor.from_op(out, (x,), backward, "tanh")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- shape manipulation -----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", f"operands must be at least 2-d, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", f"inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op(a.data @ b.data, (a, b), backward, "matmul")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(x.data, axes), (x,),
                          lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", f"cannot reshape {original} to {shape}") from None
    return Tensor.from_op(out, (x,), lambda g: (g.reshape(original),), "reshape")


def index(x: Tensor, idx) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(x.data[idx], (x,), backward, "index")


def take_rows(x: Tensor, rows) -> Tensor:
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= x.shape[0]):
        raise ShapeError("take_rows", f"row index out of range for {x.shape[0]} rows")
    n = x.shape[0]

    def backward(g):
        full = np.zeros((n,) + g.shape[rows.ndim:])
        np.add.at(full, rows, g)
        return (full,)

    return Tensor.from_op(x.data[rows], (x,), backward, "take_rows")


def embedding_lookup(table: Tensor, ids) -> Tensor:
    return take_rows(table, ids)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat", "no inputs")
    ndim = tensors[0].ndim
    ax = axis % ndim
    for t in tensors:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != ax):
            raise ShapeError("concat", f"incompatible shapes {[t.shape for t in tensors]} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=ax),
                          tuple(tensors), backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if len({t.shape for t in tensors}) != 1:
        raise ShapeError("stack", f"shapes differ: {[t.shape for t in tensors]}")

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor.from_op(np.stack([t.data for t in tensors], axis=axis),
                          tuple(tensors), backward, "stack")


# -- reductions --------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor.from_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return sum(x, axis, keepdims) * (1.0 / count)


def mean_pool(x: Tensor, axis: int = 0) -> Tensor:
    return mean(x, axis=axis)


# -- normalisation and activations over an axis ----------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(out, (x,), backward, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ShapeError("layer_norm", f"gain/bias must have shape ({x.shape[-1]},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv / n * (n * gx_hat - gx_hat.sum(-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "layer_norm")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when not training, rate is 0, or no RNG stream is given."""
    if not training or rng is None or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep) / keep
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# -- layers --------------------------------------------------------------------

def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` for a 2-d batch of row vectors."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError("affine", f"cannot apply {weight.shape} weight to input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError("affine", f"bias shape {bias.shape} does not match {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
        parents = (x, weight, bias)
    else:
        parents = (x, weight)

    def backward(g):
        grads = (g @ weight.data.T, x.data.T @ g)
        return grads + (g.sum(axis=0),) if bias is not None else grads

    return Tensor.from_op(out, parents, backward, "affine")


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor):
    """One LSTM cell update for a batch; returns ``(h_next, c_next)``.

    Gate order in the packed weights is input, forget, cell, output.
    """
    hidden = h.shape[-1]
    if w_ih.shape != (x.shape[-1], 4 * hidden) or w_hh.shape != (hidden, 4 * hidden):
        raise ShapeError("lstm_step", f"weights {w_ih.shape}/{w_hh.shape} do not fit "
                                      f"input {x.shape} and hidden {h.shape}")
    if bias.shape != (4 * hidden,) or c.shape != h.shape or x.shape[0] != h.shape[0]:
        raise ShapeError("lstm_step", "bias or state shapes are inconsistent")
    z = x.data @ w_ih.data + h.data @ w_hh.data + bias.data
    i = _sigmoid(z[:, :hidden])
    f = _sigmoid(z[:, hidden:2 * hidden])
    u = np.tanh(z[:, 2 * hidden:3 * hidden])
    o = _sigmoid(z[:, 3 * hidden:])
    c_next = f * c.data + i * u
    tc = np.tanh(c_next)
    h_next = o * tc

    def backward(g):
        gh, gc = g[0], g[1]
        dc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            dc * u * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - u * u),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        return (dz @ w_ih.data.T, dz @ w_hh.data.T, dc * f,
                x.data.T @ dz, h.data.T @ dz, dz.sum(axis=0))

    packed = Tensor.from_op(np.stack([h_next, c_next]), (x, h, c, w_ih, w_hh, bias),
                            backward, "lstm_step")
    return index(packed, 0), index(packed, 1)


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor, reverse: bool = False) -> Tensor:
    """Run an LSTM over the rows of ``x`` (``T x n_in``) from zero state; returns ``T x H``.

    Same cell as :func:`lstm_step`, fused into one node with
    backpropagation through time.
    """
    T = x.shape[0]
    hidden = w_hh.shape[0]
    if x.ndim != 2 or w_ih.shape != (x.shape[1], 4 * hidden) or w_hh.shape != (hidden, 4 * hidden) \
            or bias.shape != (4 * hidden,):
        raise ShapeError("lstm", f"weights {w_ih.shape}/{w_hh.shape}/{bias.shape} do not fit input {x.shape}")
    steps = range(T - 1, -1, -1) if reverse else range(T)
    xz = x.data @ w_ih.data + bias.data
    gates = np.zeros((T, 4 * hidden))
    cs = np.zeros((T, hidden))
    hs = np.zeros((T, hidden))
    prev = {}
    h = np.zeros(hidden)
    c = np.zeros(hidden)
    for t in steps:
        z = xz[t] + h @ w_hh.data
        i, f, o = _sigmoid(z[:hidden]), _sigmoid(z[hidden:2 * hidden]), _sigmoid(z[3 * hidden:])
        u = np.tanh(z[2 * hidden:3 * hidden])
        prev[t] = (h, c)
        c = f * c + i * u
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, u, o])
        cs[t], hs[t] = c, h

    def backward(g):
        dz_all = np.zeros((T, 4 * hidden))
        h_prev_all = np.zeros((T, hidden))
        dh = np.zeros(hidden)
        dc = np.zeros(hidden)
        for t in reversed(list(steps)):
            i, f, u, o = (gates[t, k * hidden:(k + 1) * hidden] for k in range(4))
            h_prev, c_prev = prev[t]
            tc = np.tanh(cs[t])
            gh = g[t] + dh
            dc = dc + gh * o * (1.0 - tc * tc)
            dz = np.concatenate([dc * u * i * (1.0 - i), dc * c_prev * f * (1.0 - f),
                                 dc * i * (1.0 - u * u), gh * tc * o * (1.0 - o)])
            dz_all[t] = dz
            h_prev_all[t] = h_prev
            dh = w_hh.data @ dz
            dc = dc * f
        return dz_all @ w_ih.data.T, x.data.T @ dz_all, h_prev_all.T @ dz_all, dz_all.sum(axis=0)

    return Tensor.from_op(hs, (x, w_ih, w_hh, bias), backward, "lstm")


def _augment(a: np.ndarray) -> np.ndarray:
    return np.concatenate([a, np.ones(a.shape[:-1] + (1,))], axis=-1)


def biaffine(left: Tensor, right: Tensor, weight: Tensor) -> Tensor:
    """Score every (left row, right row) pair: ``[l;1]^T W [r;1]``.

    ``weight`` is ``(d+1, d+1)`` for an ``n x m`` score matrix or
    ``(c, d+1, d+1)`` for ``n x m x c`` channel scores.
    """
    if left.ndim != 2 or right.ndim != 2:
        raise ShapeError("biaffine", f"inputs must be 2-d, got {left.shape} and {right.shape}")
    d = left.shape[1]
    if right.shape[1] != d:
        raise ShapeError("biaffine", f"feature sizes differ: {left.shape[1]} vs {right.shape[1]}")
    if weight.shape[-2:] != (d + 1, d + 1) or weight.ndim not in (2, 3):
        raise ShapeError("biaffine", f"weight {weight.shape} does not fit feature size {d}")
    L, R, W = _augment(left.data), _augment(right.data), weight.data
    if W.ndim == 2:
        LW = L @ W
        out = LW @ R.T

        def backward(g):
            gL = g @ R @ W.T
            gR = g.T @ LW
            gW = L.T @ g @ R
            return gL[:, :d], gR[:, :d], gW
    else:
        LW = np.matmul(L[None], W)  # c, i, b
        out = np.moveaxis(LW @ R.T, 0, 2)

        def backward(g):
            gc = np.ascontiguousarray(np.moveaxis(g, 2, 0))  # c, i, j
            gR = np.matmul(np.transpose(gc, (0, 2, 1)), LW).sum(axis=0)
            GR = gc @ R  # c, i, b
            gL = np.matmul(GR, np.transpose(W, (0, 2, 1))).sum(axis=0)
            gW = np.matmul(L.T[None], GR)
            return gL[:, :d], gR[:, :d], gW

    return Tensor.from_op(out, (left, right, weight), backward, "biaffine")


def bilinear(left: Tensor, right: Tensor, weight: Tensor) -> Tensor:
    """Row-paired bilinear form ``out[n, c] = left[n]^T W[:, :, c] right[n]``.

    1-d ``left``/``right`` give a length-``c`` output.
    """
    if weight.ndim != 3:
        raise ShapeError("bilinear", f"weight must be 3-d, got {weight.shape}")
    if left.shape[-1] != weight.shape[0] or right.shape[-1] != weight.shape[1]:
        raise ShapeError("bilinear", f"inputs {left.shape}, {right.shape} do not fit weight {weight.shape}")
    if left.shape[:-1] != right.shape[:-1] or left.ndim not in (1, 2):
        raise ShapeError("bilinear", f"inputs must be paired rows, got {left.shape} and {right.shape}")
    vector = left.ndim == 1
    Lx = left.data[None] if vector else left.data
    Rx = right.data[None] if vector else right.data
    W = weight.data
    a, b, c = W.shape
    LW = (Lx @ W.reshape(a, b * c)).reshape(-1, b, c)
    out = np.matmul(Rx[:, None, :], LW)[:, 0, :]

    def backward(g):
        g2 = g[None] if vector else g
        gR = np.matmul(LW, g2[:, :, None])[:, :, 0]
        RG = (Rx[:, :, None] * g2[:, None, :]).reshape(-1, b * c)
        gL = RG @ W.reshape(a, b * c).T
        gW = (Lx.T @ RG).reshape(a, b, c)
        if vector:
            gL, gR = gL[0], gR[0]
        return gL, gR, gW

    return Tensor.from_op(out[0] if vector else out, (left, right, weight), backward, "bilinear")


# -- losses ----------------------------------------------------------------------

def _weights(weights, n):
    if weights is None:
        return np.ones(n)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != n:
        raise ShapeError("loss", f"{w.shape[0]} weights for {n} items")
    return w


def _zero_loss(parent: Tensor) -> Tensor:
    return Tensor.from_op(np.zeros(()), (parent,), lambda g: (np.zeros(parent.shape),), "zero_loss")


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean negative log-likelihood of integer ``targets`` under row softmax."""
    if logits.ndim != 2:
        raise ShapeError("cross_entropy", f"logits must be 2-d, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if targets.shape[0] != n:
        raise ShapeError("cross_entropy", f"{targets.shape[0]} targets for {n} rows")
    if n and (targets.min() < 0 or targets.max() >= k):
        raise ValueError(f"cross_entropy: target outside [0, {k})")
    w = _weights(weights, n)
    total = w.sum()
    if n == 0 or total == 0:
        return _zero_loss(logits)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    nll = lse - z[rows, targets]
    value = float((w * nll).sum() / total)

    def backward(g):
        probs = np.exp(z - lse[:, None])
        probs[rows, targets] -= 1.0
        return (probs * (w / total)[:, None] * g,)

    return Tensor.from_op(np.asarray(value), (logits,), backward, "cross_entropy")


def binary_cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean BCE of raw ``logits`` against ``targets`` in {0, 1}."""
    t = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    if t.size and (np.any((t != 0) & (t != 1))):
        raise ValueError("binary_cross_entropy: targets must be 0 or 1")
    w = _weights(weights, logits.size).reshape(logits.shape)
    total = w.sum()
    if logits.size == 0 or total == 0:
        return _zero_loss(logits)
    x = logits.data
    per = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    value = float((w * per).sum() / total)

    def backward(g):
        return ((_sigmoid(x) - t) * w / total * g,)

    return Tensor.from_op(np.asarray(value), (logits,), backward, "binary_cross_entropy")


def mse(pred: Tensor, target, weights=None) -> Tensor:
    t = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    w = _weights(weights, pred.size).reshape(pred.shape)
    total = w.sum()
    if pred.size == 0 or total == 0:
        return _zero_loss(pred)
    diff = pred.data - t
    value = float((w * diff * diff).sum() / total)

    def backward(g):
        return (2.0 * w * diff / total * g,)

    return Tensor.from_op(np.asarray(value), (pred,), backward, "mse")
