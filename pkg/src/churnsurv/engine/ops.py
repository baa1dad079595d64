"""Differentiable primitives used by the MLP and the bifurcating model."""
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from .tensor import Tensor, as_tensor, make


def _check_shape(a, b, what):
    if a != b:
        raise ValueError(f"{what}: shape mismatch {a} vs {b}")


def sigmoid_np(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ez = np.exp(x[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return make(A @ B, (a, b), backward)


def add_bias(x, b):
    x, b = as_tensor(x), as_tensor(b)
    _check_shape(x.shape[-1:], b.shape, "add_bias")
    lead = tuple(range(x.data.ndim - 1))

    def backward(g):
        return g, g.sum(axis=lead)

    return make(x.data + b.data, (x, b), backward)


def dense(x, w, b):
    return add_bias(matmul(x, w), b)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_shape(a.shape, b.shape, "add")
    return make(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return make(x.data * c, (x,), lambda g: (g * c,))


def relu(x):
    x = as_tensor(x)
    keep = x.data > 0
    return make(np.where(keep, x.data, 0.0), (x,), lambda g: (g * keep,))


def sigmoid(x):
    x = as_tensor(x)
    s = sigmoid_np(x.data)
    return make(s, (x,), lambda g: (g * s * (1.0 - s),))


def identity(x):
    x = as_tensor(x)
    return make(x.data.copy(), (x,), lambda g: (g,))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def sum_squares(x):
    x = as_tensor(x)
    X = x.data
    return make(np.array(np.sum(X * X)), (x,), lambda g: (2.0 * g * X,))


def add_scalars(*terms):
    terms = [as_tensor(t) for t in terms]
    total = np.array(sum(float(np.sum(t.data)) for t in terms))
    return make(total, terms, lambda g: tuple(g for _ in terms))


def embedding_lookup(table, ids):
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"embedding id out of range [0, {n})")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make(table.data[ids], (table,), backward)


def dropout(x, rate, active, rng):
    """Inverted dropout: zero each unit with prob ``rate``, scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not active or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make(x.data * keep, (x,), lambda g: (g * keep,))


@dataclass
class BatchNormState:
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-3

    @classmethod
    def create(cls, n, momentum=0.99, eps=1e-3):
        return cls(np.zeros(n), np.ones(n), momentum, eps)


def batch_norm(x, gamma, beta, state, training):
    """Batch statistics (and running-stat update) in training, running stats otherwise."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    X = x.data
    if training:
        if X.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs batch size >= 2")
        mu = X.mean(axis=0)
        var = X.var(axis=0)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mu
        state.running_var = m * state.running_var + (1.0 - m) * var
    else:
        mu, var = state.running_mean, state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (X - mu) * inv
    G = gamma.data

    def backward(g):
        dgamma = (g * xhat).sum(axis=0)
        dbeta = g.sum(axis=0)
        dxhat = g * G
        if training:
            n = X.shape[0]
            dx = inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dx = dxhat * inv
        return dx, dgamma, dbeta

    return make(xhat * G + beta.data, (x, gamma, beta), backward)


# ---------------------------------------------------------------- sequences

@dataclass(frozen=True)
class PackedLayout:
    """Time-major packing of variable-length sequences.

    Rows are sorted by decreasing length (stable), so at step ``t`` the
    active rows are the first ``batch_sizes[t]`` of the sorted batch.
    ``b_idx``/``t_idx`` give the (batch, step) origin of each packed row.
    """

    lengths: np.ndarray
    order: np.ndarray
    batch_sizes: np.ndarray
    offsets: np.ndarray
    b_idx: np.ndarray
    t_idx: np.ndarray

    @property
    def batch(self):
        return len(self.lengths)


def pack_layout(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim == 1:
        mask = mask[None, :]
    lengths = mask.sum(axis=1)
    T = mask.shape[1]
    prefix = np.arange(T)[None, :] < lengths[:, None]
    if not np.array_equal(prefix, mask):
        raise ValueError("mask true entries must form a contiguous prefix")
    if np.any(lengths == 0):
        raise ValueError("every sequence needs at least one valid step")
    order = np.argsort(-lengths, kind="stable")
    t_max = int(lengths.max())
    batch_sizes = np.array([(lengths > t).sum() for t in range(t_max)], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(batch_sizes)])
    b_idx = np.concatenate([order[:n] for n in batch_sizes])
    t_idx = np.repeat(np.arange(t_max), batch_sizes)
    return PackedLayout(lengths, order, batch_sizes, offsets, b_idx, t_idx)


def pack(x, layout):
    """Gather the valid (batch, step) rows of a ``B x T x F`` tensor."""
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape)
        gx[layout.b_idx, layout.t_idx] = g
        return (gx,)

    return make(x.data[layout.b_idx, layout.t_idx], (x,), backward)


def lstm_packed(x, layout, W, U, b):
    """LSTM over packed rows; returns the final hidden state per sequence (B x H).

    Gate order along the 4H axis is input, forget, candidate, output.
    Finished sequences are not touched after their last step, so padding
    has no effect on the result.
    """
    x, W, U, b = as_tensor(x), as_tensor(W), as_tensor(U), as_tensor(b)
    H = U.shape[0]
    _check_shape(W.shape, (x.shape[1], 4 * H), "lstm input kernel")
    _check_shape(U.shape, (H, 4 * H), "lstm recurrent kernel")
    _check_shape(b.shape, (4 * H,), "lstm bias")
    B = layout.batch
    xp = x.data @ W.data + b.data
    Ud = U.data
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    steps = []
    for t, n in enumerate(layout.batch_sizes):
        lo, hi = layout.offsets[t], layout.offsets[t + 1]
        z = xp[lo:hi] + h[:n] @ Ud
        c_prev = c[:n].copy()
        h_prev = h[:n].copy()
        c_new = np.empty((n, H))
        h_new = np.empty((n, H))
        tanh_c = np.empty((n, H))
        _kernels.lstm_gates_forward(z, c_prev, c_new, h_new, tanh_c)
        c[:n] = c_new
        h[:n] = h_new
        steps.append((z, c_prev, h_prev, tanh_c))
    out = np.empty((B, H))
    out[layout.order] = h
    X = x.data

    def backward(g):
        dh = g[layout.order].copy()
        dc = np.zeros((B, H))
        dxp = np.empty_like(xp)
        dU = np.zeros_like(Ud)
        for t in range(len(steps) - 1, -1, -1):
            n = layout.batch_sizes[t]
            gates, c_prev, h_prev, tanh_c = steps[t]
            dz = np.empty((n, 4 * H))
            dc_prev = np.empty((n, H))
            _kernels.lstm_gates_backward(
                gates, c_prev, tanh_c, np.ascontiguousarray(dh[:n]),
                np.ascontiguousarray(dc[:n]), dz, dc_prev)
            dU += h_prev.T @ dz
            dxp[layout.offsets[t]:layout.offsets[t + 1]] = dz
            dh[:n] = dz @ Ud.T
            dc[:n] = dc_prev
        return dxp @ W.data.T, X.T @ dxp, dU, dxp.sum(axis=0)

    return make(out, (x, W, U, b), backward)


def lstm_forward(seq, mask, W, U, b):
    """Masked LSTM over padded ``B x T x F`` input (or ``T x F`` for one sequence)."""
    seq = as_tensor(seq)
    single = seq.data.ndim == 2
    if single:
        seq = reshape(seq, (1,) + seq.shape)
        mask = np.asarray(mask, dtype=bool)[None, :]
    layout = pack_layout(mask)
    out = lstm_packed(pack(seq, layout), layout, W, U, b)
    return reshape(out, (out.shape[1],)) if single else out


# ------------------------------------------------------------------- losses

BCE_EPS = 1e-7
SMAPE_EPS = 1e-7


def _flat_pair(pred, target):
    pred = as_tensor(pred)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    if pred.data.size != y.size:
        raise ValueError(f"length mismatch: {pred.data.size} predictions vs {y.size} targets")
    if y.size == 0:
        raise ValueError("losses need at least one element")
    return pred, y


def loss_mse(pred, target):
    pred, y = _flat_pair(pred, target)
    p = pred.data.reshape(-1)
    n = y.size
    d = p - y
    return make(np.array(np.mean(d * d)), (pred,),
                lambda g: ((2.0 * g / n * d).reshape(pred.shape),))


def loss_bce(pred_prob, target):
    pred, y = _flat_pair(pred_prob, target)
    raw = pred.data.reshape(-1)
    p = np.clip(raw, BCE_EPS, 1.0 - BCE_EPS)
    inside = (raw >= BCE_EPS) & (raw <= 1.0 - BCE_EPS)
    n = y.size
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))

    def backward(g):
        d = (-y / p + (1.0 - y) / (1.0 - p)) / n * inside
        return ((g * d).reshape(pred.shape),)

    return make(np.array(value), (pred,), backward)


def loss_smape(pred, target):
    """Ratio-of-sums SMAPE; the |.| subgradient is 0 at exact hits."""
    from ..metrics import smape_eval

    pred, y = _flat_pair(pred, target)
    p = pred.data.reshape(-1)
    num = np.abs(p - y).sum()
    den = (y + p).sum() + SMAPE_EPS
    value = smape_eval(p, y, clamp=False)

    def backward(g):
        d = np.sign(p - y) / den - num / (den * den)
        return ((g * d).reshape(pred.shape),)

    return make(np.array(value), (pred,), backward)
