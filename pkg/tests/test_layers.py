import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wals_typology.nn import layers as L
from wals_typology.nn.gradcheck import grad_check, numerical_gradient, relative_error

SEEDS = range(5)
TOL = 1e-4


def _check(f, arrays, analytic):
    res = grad_check(f, arrays, analytic)
    assert res.max_error <= TOL, res.errors
    return res


def test_conv_examples():
    x = np.array([[[1.0], [2.0], [3.0]]])
    W = np.array([[[1.0]], [[0.0]]])
    out, out_len, _ = L.conv1d_forward(x, W, np.zeros(1), [3])
    assert out[0, :, 0].tolist() == [1.0, 2.0] and out_len.tolist() == [2]
    x = np.arange(12.0).reshape(1, 4, 3)
    out, _, _ = L.conv1d_forward(x, np.eye(3)[None], np.zeros(3), [4])
    assert np.array_equal(out, x)
    with pytest.raises(L.SequenceTooShort):
        L.conv1d_forward(x, np.zeros((5, 3, 1)), np.zeros(1), [4])


@pytest.mark.parametrize("seed", SEEDS)
def test_conv_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 6, 4))
    W = rng.normal(size=(3, 4, 8))
    b = rng.normal(size=8)
    lengths = np.array([6, 4])
    G = rng.normal(size=(2, 4, 8))
    f = lambda: float(np.sum(L.conv1d_forward(x, W, b, lengths)[0] * G))  # noqa: E731
    dx, dW, db = L.conv1d_backward(G, L.conv1d_forward(x, W, b, lengths)[2])
    _check(f, {"x": x, "W": W, "b": b}, {"x": dx, "W": dW, "b": db})
    assert np.all(dx[1, 4:] == 0)


def bn(x, gamma, beta, lengths, train=True):
    C = x.shape[2]
    return L.batchnorm_forward(x, gamma, beta, lengths, np.zeros(C), np.ones(C), train)


def test_batchnorm_examples():
    x = np.full((2, 3, 2), 4.0)
    out, _, _ = bn(x, np.ones(2), np.zeros(2), [3, 3])
    assert np.array_equal(out, np.zeros_like(x))
    x = np.random.default_rng(0).normal(size=(3, 5, 4))
    out, _, _ = bn(x, np.ones(4), np.full(4, 5.0), [5, 5, 5])
    assert np.allclose(out.mean(axis=(0, 1)), 5.0)


@given(st.integers(0, 2 ** 20), st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_batchnorm_train_normalizes(seed, lens):
    rng = np.random.default_rng(seed)
    T = max(lens)
    x = rng.normal(3.0, 2.0, size=(len(lens), T, 3))
    out, _, (rm, rv) = bn(x, np.ones(3), np.zeros(3), lens)
    valid = out[L.length_mask(lens, T)]
    assert np.allclose(valid.mean(0), 0, atol=1e-10)
    raw_var = x[L.length_mask(lens, T)].var(0)
    assert np.allclose(valid.var(0), raw_var / (raw_var + 1e-5))
    assert np.all(out[~L.length_mask(lens, T)] == 0)
    assert np.allclose(rm, 0.1 * x[L.length_mask(lens, T)].mean(0))


def test_batchnorm_infer_uses_running_stats():
    x = np.ones((1, 2, 1)) * 3.0
    out, _, stats = L.batchnorm_forward(x, np.ones(1), np.zeros(1), [2], np.array([1.0]), np.array([4.0]), False)
    assert np.allclose(out, 2.0 / np.sqrt(4.0 + 1e-5))
    assert stats[0][0] == 1.0 and stats[1][0] == 4.0


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("train", [True, False])
def test_batchnorm_gradient(seed, train):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 5, 4))
    gamma, beta = rng.normal(size=4), rng.normal(size=4)
    lengths = np.array([5, 3, 4])
    G = rng.normal(size=x.shape)
    f = lambda: float(np.sum(bn(x, gamma, beta, lengths, train)[0] * G))  # noqa: E731
    grads = L.batchnorm_backward(G, bn(x, gamma, beta, lengths, train)[1])
    _check(f, {"x": x, "gamma": gamma, "beta": beta}, dict(zip(["x", "gamma", "beta"], grads)))


def test_relu_examples():
    out, mask = L.relu_forward(np.array([-1.0, 0.0, 2.0]))
    assert out.tolist() == [0.0, 0.0, 2.0]
    x = np.array([0.5, 3.0])
    assert np.array_equal(L.relu_forward(x)[0], x)
    assert L.relu_backward(np.array([1.0]), L.relu_forward(np.array([-3.0]))[1]).tolist() == [0.0]


@pytest.mark.parametrize("seed", SEEDS)
def test_relu_gradient_away_from_zero(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=20)
    x += np.sign(x) * 0.1
    G = rng.normal(size=20)
    f = lambda: float(np.sum(L.relu_forward(x)[0] * G))  # noqa: E731
    res = grad_check(f, {"x": x}, {"x": L.relu_backward(G, L.relu_forward(x)[1])})
    assert res.max_error <= 1e-8


def test_maxpool_examples():
    x = np.array([1.0, 3.0, 2.0, 0.0]).reshape(1, 4, 1)
    out, out_len, _ = L.maxpool_forward(x, [4])
    assert out.ravel().tolist() == [3.0, 2.0] and out_len.tolist() == [2]
    x = np.array([5.0, 5.0]).reshape(1, 2, 1)
    out, _, cache = L.maxpool_forward(x, [2])
    assert out.ravel().tolist() == [5.0]
    assert L.maxpool_backward(np.ones((1, 1, 1)), cache).ravel().tolist() == [1.0, 0.0]
    out, _, _ = L.maxpool_forward(np.arange(5.0).reshape(1, 5, 1), [5])
    assert out.ravel().tolist() == [1.0, 3.0]
    with pytest.raises(L.SequenceTooShort):
        L.maxpool_forward(np.ones((1, 1, 1)), [1])


@pytest.mark.parametrize("seed", SEEDS)
def test_maxpool_gradient(seed):
    rng = np.random.default_rng(seed)
    # distinct values spaced far beyond h keep every window's argmax fixed
    x = rng.permutation(30).astype(float).reshape(1, 10, 3) * 0.1
    G = rng.normal(size=(1, 5, 3))
    f = lambda: float(np.sum(L.maxpool_forward(x, [10])[0] * G))  # noqa: E731
    dx = L.maxpool_backward(G, L.maxpool_forward(x, [10])[2])
    _check(f, {"x": x}, {"x": dx})


def test_dropout():
    x = np.ones(10)
    assert L.dropout_forward(x, 0.0, True, np.random.default_rng(0))[0] is x
    assert L.dropout_forward(x, 0.5, False, None)[0] is x
    with pytest.raises(ValueError):
        L.dropout_forward(x, 1.0, True, np.random.default_rng(0))
    with pytest.raises(ValueError):
        L.dropout_forward(x, -0.1, True, np.random.default_rng(0))


def test_dropout_survivor_fraction():
    n = 10 ** 5
    out, _ = L.dropout_forward(np.ones(n), 0.5, True, np.random.default_rng(42))
    frac = np.mean(out != 0)
    assert abs(frac - 0.5) <= 3 * np.sqrt(0.25 / n)
    assert set(np.unique(out)) <= {0.0, 2.0}
    assert abs(out.mean() - 1.0) <= 6 * np.sqrt(1.0 / n)


def _sig(v):
    return 1 / (1 + math.exp(-v))


def test_lstm_single_cell_matches_hand_computation():
    wi, wf, wo, wg = 0.5, -0.3, 0.8, 1.2
    bi, bf, bo, bg = 0.1, 1.0, -0.2, 0.05
    x = 0.7
    W = np.array([[wi, wf, wo, wg]])
    U = np.array([[0.9, 0.9, 0.9, 0.9]])
    b = np.array([bi, bf, bo, bg])
    out, h, _ = L.lstm_forward(np.array([[[x]]]), [1], W, U, b)
    i, o, g = _sig(wi * x + bi), _sig(wo * x + bo), math.tanh(wg * x + bg)
    expected = o * math.tanh(i * g)
    assert math.isclose(out[0, 0, 0], expected, rel_tol=1e-14)
    assert math.isclose(h[0, 0], expected, rel_tol=1e-14)


def test_lstm_zero_weights_fixed_point():
    out, h, _ = L.lstm_forward(np.ones((2, 5, 3)), [5, 2], np.zeros((3, 8)), np.zeros((2, 8)), np.zeros(8))
    assert np.all(out == 0) and np.all(h == 0)


def test_lstm_state_frozen_past_length(rng):
    W, U, b = rng.normal(size=(3, 8)), rng.normal(size=(2, 8)), rng.normal(size=8)
    x = rng.normal(size=(1, 6, 3))
    _, h_short, _ = L.lstm_forward(x[:, :4], [4], W, U, b)
    out, h_pad, _ = L.lstm_forward(x, [4], W, U, b)
    assert np.array_equal(h_short, h_pad)
    assert np.all(out[0, 4:] == 0)


def test_lstm_empty_sequence():
    with pytest.raises(L.SequenceTooShort):
        L.lstm_forward(np.zeros((1, 0, 2)), [0], np.zeros((2, 4)), np.zeros((1, 4)), np.zeros(4))


@given(st.lists(st.integers(0, 9), min_size=1, max_size=5))
def test_reverse_index_is_involution(lens):
    T = 10
    rev = L.reverse_index(lens, T)
    rows = np.arange(len(lens))[:, None]
    assert np.array_equal(rev[rows, rev], np.broadcast_to(np.arange(T), rev.shape))


def _lstm_params(rng, D, H):
    return rng.normal(size=(D, 4 * H)) * 0.5, rng.normal(size=(H, 4 * H)) * 0.5, rng.normal(size=4 * H) * 0.5


@pytest.mark.parametrize("seed", SEEDS)
def test_lstm_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5, 4))
    W, U, b = _lstm_params(rng, 4, 3)
    lengths = np.array([5, 3])
    G, Gh = rng.normal(size=(2, 5, 3)), rng.normal(size=(2, 3))

    def f():
        out, h, _ = L.lstm_forward(x, lengths, W, U, b)
        return float(np.sum(out * G) + np.sum(h * Gh))

    dx, dW, dU, db = L.lstm_backward(G, Gh, L.lstm_forward(x, lengths, W, U, b)[2])
    _check(f, {"x": x, "W": W, "U": U, "b": b}, {"x": dx, "W": dW, "U": dU, "b": db})


@pytest.mark.parametrize("seed", SEEDS)
def test_bilstm_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 5, 4))
    fwd, bwd = _lstm_params(rng, 4, 3), _lstm_params(rng, 4, 3)
    lengths = np.array([5, 4])
    G = rng.normal(size=(2, 5, 6))
    f = lambda: float(np.sum(L.bilstm_forward(x, lengths, fwd, bwd)[0] * G))  # noqa: E731
    dx, gf, gb = L.bilstm_backward(G, L.bilstm_forward(x, lengths, fwd, bwd)[1])
    arrays = {"x": x, **{f"f{k}": a for k, a in enumerate(fwd)}, **{f"b{k}": a for k, a in enumerate(bwd)}}
    analytic = {"x": dx, **{f"f{k}": a for k, a in enumerate(gf)}, **{f"b{k}": a for k, a in enumerate(gb)}}
    _check(f, arrays, analytic)


def test_bilstm_backward_direction_reads_reversed_prefix(rng):
    fwd, bwd = _lstm_params(rng, 2, 3), _lstm_params(rng, 2, 3)
    x = rng.normal(size=(1, 4, 2))
    out_pad, _ = L.bilstm_forward(np.concatenate([x, np.zeros((1, 2, 2))], 1), [4], fwd, bwd)
    out, _ = L.bilstm_forward(x, [4], fwd, bwd)
    assert np.allclose(out_pad[:, :4], out, rtol=0, atol=0)
    rev, _, _ = L.lstm_forward(np.ascontiguousarray(x[:, ::-1]), [4], *bwd)
    assert np.array_equal(out[0, :, 3:], rev[0, ::-1])


def test_dense_head():
    b = np.array([1.0, -2.0, 3.0])
    z, _ = L.dense_forward(np.ones((2, 4)), np.zeros((4, 3)), b)
    assert np.array_equal(z, np.tile(b, (2, 1)))
    with pytest.raises(ValueError):
        L.dense_forward(np.ones((2, 5)), np.zeros((4, 3)), b)


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_gradient(seed):
    rng = np.random.default_rng(seed)
    x, W, b = rng.normal(size=(3, 6)), rng.normal(size=(6, 5)), rng.normal(size=5)
    G = rng.normal(size=(3, 5))
    f = lambda: float(np.sum(L.dense_forward(x, W, b)[0] * G))  # noqa: E731
    dx, dW, db = L.dense_backward(G, L.dense_forward(x, W, b)[1])
    _check(f, {"x": x, "W": W, "b": b}, {"x": dx, "W": dW, "b": db})


def test_numerical_gradient_flags_kinks():
    x = np.array([0.0, 1.0])
    _, kinked = numerical_gradient(lambda: (float(np.abs(x).sum()), bytes(x > 0)), x)
    assert kinked.tolist() == [True, False]
    assert relative_error([1.0], [1.0]) == 0.0
    assert relative_error([0.0], [0.0]) == 0.0


@given(st.integers(1, 40), st.integers(0, 39), st.integers(1, 20), st.integers(1, 20), st.integers(0, 2 ** 16))
def test_row_matmul_rows_independent_of_companions(M, start, K, N, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(M + start, K))
    W = rng.normal(size=(K, N))
    together = L.row_matmul(A, W)
    alone = L.row_matmul(A[start:start + 1], W)
    assert np.array_equal(together[start], alone[0])
    assert np.allclose(together, A @ W, rtol=1e-12, atol=1e-12)
