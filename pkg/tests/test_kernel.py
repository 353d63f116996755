import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gswa import kernel as K
from gswa.errors import ConfigError, DimensionError


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += float(a[i, t]) * float(b[t, j])
            out[i][j] = s
    return np.array(out)


# -- matmul ---------------------------------------------------------------


def test_matmul_identity():
    eye = np.eye(2, dtype=np.float32)
    np.testing.assert_array_equal(K.matmul(eye, eye), eye)


def test_matmul_hand():
    out = K.matmul(np.array([[1, 2], [3, 4]], np.float32), np.array([[1], [1]], np.float32))
    np.testing.assert_array_equal(out, [[3], [7]])


def test_matmul_triple_loop(rng):
    a = rng.normal(size=(5, 7)).astype(np.float32)
    b = rng.normal(size=(7, 3)).astype(np.float32)
    out = K.matmul(a, b)
    assert out.shape == (5, 3) and out.dtype == np.float32
    np.testing.assert_allclose(out, triple_loop(a, b), atol=1e-6)


def test_matmul_shape_error_names_both():
    with pytest.raises(DimensionError) as exc:
        K.matmul(np.zeros((2, 3), np.float32), np.zeros((4, 5), np.float32))
    assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)


def test_matmul_associative(rng):
    for _ in range(10):
        a, b, c = (rng.normal(size=s).astype(np.float32) for s in ((4, 6), (6, 5), (5, 3)))
        left = K.matmul(K.matmul(a, b), c).astype(np.float64)
        right = K.matmul(a, K.matmul(b, c)).astype(np.float64)
        assert np.linalg.norm(left - right) <= 1e-4 * np.linalg.norm(left)


def test_nonfinite_rejected():
    with pytest.raises(FloatingPointError):
        K.matmul(np.array([[np.inf]], np.float32), np.array([[1.0]], np.float32))


# -- softmax --------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(K.softmax_rows(np.zeros((1, 3), np.float32)), [[1 / 3] * 3],
                               atol=1e-7)


def test_softmax_stable():
    out = K.softmax_rows(np.array([[1000.0, 0.0]], np.float32))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-6)


def test_softmax_64bit_reference():
    ref = np.exp(np.array([1.0, 2.0, 3.0]))
    ref /= ref.sum()
    np.testing.assert_allclose(K.softmax_rows(np.array([[1, 2, 3]], np.float32))[0], ref,
                               atol=1e-7)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 9)),
              elements=st.floats(-1e4, 1e4, width=32)))
def test_softmax_rows_on_simplex(x):
    p = K.softmax_rows(x).astype(np.float64)
    assert np.all(p >= 0) and np.all(p <= 1)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


# -- layer norm -----------------------------------------------------------


def test_layer_norm_constant():
    out = K.layer_norm(np.full((1, 4), 3.0, np.float32), np.ones(4, np.float32),
                       np.zeros(4, np.float32))
    np.testing.assert_array_equal(out, np.zeros((1, 4)))


def test_layer_norm_two_point():
    out = K.layer_norm(np.array([[1.0, 3.0]], np.float32), np.ones(2, np.float32),
                       np.zeros(2, np.float32), eps=0.0)
    np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-7)


def test_layer_norm_statistics(rng):
    x = rng.normal(3.0, 5.0, size=(1, 16)).astype(np.float32)
    out = K.layer_norm(x, np.ones(16, np.float32), np.zeros(16, np.float32)).astype(np.float64)
    assert abs(out.mean()) < 1e-6
    assert abs(out.var() - 1.0) < 1e-4


def test_layer_norm_degenerate():
    with pytest.raises(DimensionError):
        K.layer_norm(np.ones((2, 1), np.float32), np.ones(1, np.float32), np.zeros(1, np.float32))


# -- gelu -----------------------------------------------------------------


def test_gelu_values():
    assert K.gelu(np.array([0.0], np.float32))[0] == 0.0
    assert abs(K.gelu(np.array([12.0], np.float32))[0] - 12.0) < 1e-4
    ref = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
    assert abs(float(K.gelu(np.array([1.0], np.float32))[0]) - ref) < 1e-6


# -- attention ------------------------------------------------------------


def _attn_params(rng, d):
    return {k: rng.normal(size=(d, d)).astype(np.float32) for k in "qkvo"}


def test_attention_single_token(rng):
    _, maps = K.multi_head_attention(rng.normal(size=(1, 8)).astype(np.float32),
                                     _attn_params(rng, 8), heads=4)
    np.testing.assert_array_equal(maps, np.ones((4, 1, 1)))


def test_attention_identical_tokens_uniform(rng):
    row = rng.normal(size=8).astype(np.float32)
    for t in (2, 3, 5, 7):
        _, maps = K.multi_head_attention(np.tile(row, (t, 1)), _attn_params(rng, 8), heads=2)
        expected = np.float32(1.0) / np.float32(t)
        assert np.all(maps == expected)


def test_attention_rows_sum_to_one(rng):
    _, maps = K.multi_head_attention(rng.normal(size=(6, 8)).astype(np.float32),
                                     _attn_params(rng, 8), heads=2)
    np.testing.assert_allclose(maps.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_hand_oracle():
    x = [[1.0, 0.0], [0.0, 2.0], [1.0, -1.0]]
    wq = [[1.0, 0.5], [0.0, 1.0]]
    wk = [[0.5, 0.0], [1.0, 1.0]]
    wv = [[2.0, 0.0], [0.0, -1.0]]
    wo = [[1.0, 1.0], [0.0, 1.0]]

    def mm(a, b):
        return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))]
                for i in range(len(a))]

    q, k, v = mm(x, wq), mm(x, wk), mm(x, wv)
    attn = []
    for i in range(3):
        s = [sum(q[i][c] * k[j][c] for c in range(2)) / math.sqrt(2) for j in range(3)]
        e = [math.exp(z - max(s)) for z in s]
        attn.append([z / sum(e) for z in e])
    mixed = mm(attn, v)
    expected = mm(mixed, wo)

    f = lambda a: np.array(a, dtype=np.float32)  # noqa: E731
    out, maps = K.multi_head_attention(f(x), {"q": f(wq), "k": f(wk), "v": f(wv), "o": f(wo)},
                                       heads=1)
    np.testing.assert_allclose(maps[0], attn, atol=1e-6)
    np.testing.assert_allclose(out, expected, atol=1e-6)


def test_attention_heads_must_divide(rng):
    with pytest.raises(ConfigError):
        K.multi_head_attention(rng.normal(size=(3, 6)).astype(np.float32),
                               _attn_params(rng, 6), heads=4)


def test_ops_deterministic(rng):
    x = rng.normal(size=(5, 8)).astype(np.float32)
    p = _attn_params(rng, 8)
    a, _ = K.multi_head_attention(x, p, heads=2)
    b, _ = K.multi_head_attention(x.copy(), {k: v.copy() for k, v in p.items()}, heads=2)
    assert a.tobytes() == b.tobytes()


def test_float64_inputs_stay_float64(rng):
    x = rng.normal(size=(3, 4))
    assert K.matmul(x, x.T).dtype == np.float64
    assert K.mul(x.astype(np.float32), 0.5).dtype == np.float32
