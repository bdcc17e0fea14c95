"""Forward and backward passes for the layers of the CNN-biLSTM.

Activations are laid out ``(batch, time, channels)``. Every sequence in a
batch carries its true length; positions at or beyond it are padding. Each
forward returns the output together with a cache the matching backward
consumes, and padded outputs are exactly zero.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class SequenceTooShort(ValueError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def length_mask(lengths, T: int) -> np.ndarray:
    return np.arange(T)[None, :] < np.asarray(lengths)[:, None]


ROW_BLOCK = 8


def row_matmul(a, w):
    """``a @ w`` issued as fixed-size blocks of rows.

    BLAS picks different kernels (and summation orders) depending on the
    number of rows, so the same row can come out differently alone and in a
    batch. Padding every product to whole ``ROW_BLOCK`` row blocks makes each
    row's result independent of its companions. ``w`` is ``(K, N)``, or
    ``(G, K, N)`` with ``a`` grouped along its first axis.
    """
    grouped = w.ndim == 3
    G = a.shape[0] if grouped else 1
    K, N = w.shape[-2:]
    # non-contiguous operands can bypass BLAS entirely
    flat = np.ascontiguousarray(a.reshape(G, -1, K))
    M = flat.shape[1]
    pad = -M % ROW_BLOCK
    if pad:
        flat = np.concatenate([flat, np.zeros((G, pad, K), dtype=a.dtype)], axis=1)
    ws = w if grouped else w[None]
    out = np.matmul(flat.reshape(G, -1, ROW_BLOCK, K), ws[:, None])
    return out.reshape(G, -1, N)[:, :M].reshape(a.shape[:-1] + (N,))


# -- convolution ------------------------------------------------------------

def conv1d_forward(x, W, b, lengths):
    """Valid cross-correlation, stride 1. ``W`` is ``(r, D_in, D_out)``."""
    r, D, F = W.shape
    B, T, _ = x.shape
    lengths = np.asarray(lengths)
    if T < r or lengths.min() < r:
        raise SequenceTooShort(f"sequence of length {lengths.min()} shorter than receptive field {r}")
    Tout = T - r + 1
    cols = sliding_window_view(x, r, axis=1).transpose(0, 1, 3, 2).reshape(B, Tout, r * D)
    out_len = lengths - r + 1
    mask = length_mask(out_len, Tout)
    out = (row_matmul(cols, W.reshape(r * D, F)) + b) * mask[..., None]
    return out, out_len, (cols, W, mask, T)


def conv1d_backward(dout, cache):
    cols, W, mask, T = cache
    r, D, F = W.shape
    B, Tout, _ = dout.shape
    dout = dout * mask[..., None]
    dW = (cols.reshape(-1, r * D).T @ dout.reshape(-1, F)).reshape(r, D, F)
    db = dout.sum(axis=(0, 1))
    dcols = (dout @ W.reshape(r * D, F).T).reshape(B, Tout, r, D)
    dx = np.zeros((B, T, D), dtype=dout.dtype)
    for k in range(r):
        dx[:, k:k + Tout] += dcols[:, :, k]
    return dx, dW, db


# -- batch normalization ----------------------------------------------------

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def batchnorm_forward(x, gamma, beta, lengths, running_mean, running_var, train: bool,
                      momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Per-channel normalization over all valid (batch, time) positions.

    Returns ``(out, cache, (new_running_mean, new_running_var))``; running
    statistics only move in train mode.
    """
    mask = length_mask(lengths, x.shape[1])[..., None]
    if train:
        n = mask.sum()
        mean = (x * mask).sum(axis=(0, 1)) / n
        centered = (x - mean) * mask
        var = (centered ** 2).sum(axis=(0, 1)) / n
        new_stats = (momentum * running_mean + (1 - momentum) * mean,
                     momentum * running_var + (1 - momentum) * var)
    else:
        n = None
        mean, var = running_mean, running_var
        centered = (x - mean) * mask
        new_stats = (running_mean, running_var)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = (gamma * xhat + beta) * mask
    return out, (xhat, gamma, inv_std, mask, n, train), new_stats


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, mask, n, train = cache
    dout = dout * mask
    dgamma = (dout * xhat).sum(axis=(0, 1))
    dbeta = dout.sum(axis=(0, 1))
    dxhat = dout * gamma
    if train:
        dx = inv_std / n * (n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
        dx = dx * mask
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


# -- elementwise ------------------------------------------------------------

def relu_forward(x):
    return np.maximum(x, 0.0), x > 0


def relu_backward(dout, cache):
    return dout * cache


def dropout_forward(x, p: float, train: bool, rng: np.random.Generator | None):
    """Inverted dropout: survivors are scaled by ``1/(1-p)`` so inference is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1.0 - p)
    return x * keep, keep


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


# -- pooling ----------------------------------------------------------------

def maxpool_forward(x, lengths, pool: int = 2):
    """Non-overlapping max pooling; a trailing partial window is dropped.

    Ties route the gradient to the lowest index in the window.
    """
    B, T, D = x.shape
    lengths = np.asarray(lengths)
    if T < pool or lengths.min() < pool:
        raise SequenceTooShort(f"sequence of length {lengths.min()} shorter than pool size {pool}")
    Tout = T // pool
    windows = x[:, :Tout * pool].reshape(B, Tout, pool, D)
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None, :], axis=2)[:, :, 0]
    out_len = lengths // pool
    mask = length_mask(out_len, Tout)[..., None]
    return out * mask, out_len, (arg, mask, x.shape, pool)


def maxpool_backward(dout, cache):
    arg, mask, shape, pool = cache
    B, T, D = shape
    Tout = dout.shape[1]
    dwin = np.zeros((B, Tout, pool, D), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[:, :, None, :], (dout * mask)[:, :, None, :], axis=2)
    dx = np.zeros(shape, dtype=dout.dtype)
    dx[:, :Tout * pool] = dwin.reshape(B, Tout * pool, D)
    return dx


# -- LSTM -------------------------------------------------------------------

def _scan(xw, U, m):
    """Run ``K`` stacked LSTM directions at once.

    ``xw`` is the precomputed input projection ``(K, B, T, 4H)``, ``U`` is
    ``(K, H, 4H)`` and ``m`` the ``(B, T, 1)`` boolean validity mask.
    """
    K, B, T, G = xw.shape
    H = G // 4
    dt = xw.dtype
    h = np.zeros((K, B, H), dtype=dt)
    c = np.zeros((K, B, H), dtype=dt)
    out = np.empty((K, B, T, H), dtype=dt)
    hprev = np.empty((K, B, T, H), dtype=dt)
    cprev = np.empty((K, B, T, H), dtype=dt)
    gates = np.empty((K, B, T, G), dtype=dt)
    tanh_c = np.empty((K, B, T, H), dtype=dt)
    for t in range(T):
        hprev[:, :, t] = h
        cprev[:, :, t] = c
        z = xw[:, :, t] + row_matmul(h, U)
        g = gates[:, :, t]
        g[..., :3 * H] = sigmoid(z[..., :3 * H])
        g[..., 3 * H:] = np.tanh(z[..., 3 * H:])
        c_new = g[..., H:2 * H] * c + g[..., :H] * g[..., 3 * H:]
        tc = tanh_c[:, :, t]
        np.tanh(c_new, out=tc)
        h_new = g[..., 2 * H:3 * H] * tc
        mt = m[:, t]
        h = np.where(mt, h_new, h)
        c = np.where(mt, c_new, c)
        out[:, :, t] = np.where(mt, h_new, 0.0)
    return out, h, (m, hprev, cprev, gates, tanh_c)


def _scan_backward(dout, dlast, U, state):
    m, hprev, cprev, gates, tanh_c = state
    K, B, T, H = dout.shape
    dz = np.empty((K, B, T, 4 * H), dtype=dout.dtype)
    dh = np.zeros((K, B, H), dtype=dout.dtype) if dlast is None else dlast.copy()
    dc = np.zeros((K, B, H), dtype=dout.dtype)
    UT = U.transpose(0, 2, 1)
    for t in range(T - 1, -1, -1):
        mt = m[:, t]
        g = gates[:, :, t]
        i, f, o, cand = g[..., :H], g[..., H:2 * H], g[..., 2 * H:3 * H], g[..., 3 * H:]
        tc = tanh_c[:, :, t]
        dh_new = np.where(mt, dh + dout[:, :, t], 0.0)
        dc_new = np.where(mt, dc, 0.0) + dh_new * o * (1 - tc * tc)
        dzt = dz[:, :, t]
        dzt[..., :H] = dc_new * cand * i * (1 - i)
        dzt[..., H:2 * H] = dc_new * cprev[:, :, t] * f * (1 - f)
        dzt[..., 2 * H:3 * H] = dh_new * tc * o * (1 - o)
        dzt[..., 3 * H:] = dc_new * i * (1 - cand * cand)
        dc = dc_new * f + np.where(mt, 0.0, dc)
        dh = dzt @ UT + np.where(mt, 0.0, dh)
    return dz


def _param_grads(xs, hprev, dz, W):
    """``dx, dW, dU, db`` from stacked pre-activation gradients."""
    K, B, T, G = dz.shape
    dzf = dz.reshape(K, -1, G)
    dW = xs.reshape(K, B * T, -1).transpose(0, 2, 1) @ dzf
    dU = hprev.reshape(K, B * T, -1).transpose(0, 2, 1) @ dzf
    db = dzf.sum(axis=1)
    dx = dz @ W.transpose(0, 2, 1)[:, None]
    return dx, dW, dU, db


def lstm_forward(x, lengths, W, U, b):
    """One LSTM direction over padded sequences, zero initial state.

    Gate layout along the last axis of ``W``/``U``/``b`` is input, forget,
    output, candidate. Past a sequence's end the state is frozen, so the
    returned final state is the state at the last valid step.
    """
    if x.shape[1] == 0:
        raise SequenceTooShort("empty sequence")
    m = length_mask(lengths, x.shape[1])[..., None]
    out, h, state = _scan(row_matmul(x, W)[None] + b, U[None], m)
    return out[0], h[0], (x[None], W[None], U[None], state)


def lstm_backward(dout, dlast, cache):
    """Backpropagation through time. ``dlast`` is the gradient w.r.t. the final state ``h``."""
    xs, W, U, state = cache
    dz = _scan_backward(dout[None], None if dlast is None else dlast[None], U, state)
    dx, dW, dU, db = _param_grads(xs, state[1], dz, W)
    return dx[0], dW[0], dU[0], db[0]


def reverse_index(lengths, T: int):
    """Per-row index that reverses the valid prefix and leaves padding in place (an involution)."""
    lengths = np.asarray(lengths)
    t = np.arange(T)[None, :]
    return np.where(t < lengths[:, None], lengths[:, None] - 1 - t, t)


def bilstm_forward(x, lengths, fwd, bwd):
    """Bidirectional layer; ``fwd``/``bwd`` are ``(W, U, b)`` triples.

    Output at each position is ``[forward_h, backward_h]``. The backward
    direction runs forward over each row's reversed valid prefix, and both
    directions share one time loop.
    """
    B, T, _ = x.shape
    if T == 0:
        raise SequenceTooShort("empty sequence")
    rows = np.arange(B)[:, None]
    rev = reverse_index(lengths, T)
    xs = np.stack([x, x[rows, rev]])
    W = np.stack([fwd[0], bwd[0]])
    U = np.stack([fwd[1], bwd[1]])
    b = np.stack([fwd[2], bwd[2]])[:, None, None, :]
    m = length_mask(lengths, T)[..., None]
    out, _, state = _scan(row_matmul(xs, W) + b, U, m)
    y = np.concatenate([out[0], out[1][rows, rev]], axis=2)
    return y, (xs, W, U, state, rev)


def bilstm_backward(dout, cache):
    xs, W, U, state, rev = cache
    H = dout.shape[2] // 2
    rows = np.arange(dout.shape[0])[:, None]
    d = np.stack([dout[:, :, :H], dout[:, :, H:][rows, rev]])
    dz = _scan_backward(d, None, U, state)
    dx, dW, dU, db = _param_grads(xs, state[1], dz, W)
    return dx[0] + dx[1][rows, rev], (dW[0], dU[0], db[0]), (dW[1], dU[1], db[1])


# -- dense ------------------------------------------------------------------

def dense_forward(x, W, b):
    if x.shape[-1] != W.shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match weight rows {W.shape[0]}")
    return row_matmul(x, W) + b, (x, W)


def dense_backward(dout, cache):
    x, W = cache
    return dout @ W.T, x.T @ dout, dout.sum(axis=0)
