"""Dense numeric primitives.

Tensors are plain C-ordered ``numpy`` arrays, float32 by default.  Every op
accumulates in float64 and casts the result back to the operands' float
type, so float32 inputs give float32 outputs and float64 inputs (used by the
gradient checks) stay float64.  Each op also accepts :class:`~gswa.autodiff.Var`
operands and then records itself on the operand's tape.
"""

from __future__ import annotations

import math
from typing import Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .autodiff import Var, record, value
from .errors import ConfigError, DimensionError

F64 = np.float64
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def tensor(data, dtype=np.float32) -> np.ndarray:
    """C-ordered copy of ``data`` as a float tensor."""
    return np.array(data, dtype=dtype, order="C")


_add_reduce = np.add.reduce
_F32 = np.dtype(np.float32)
_F64 = np.dtype(np.float64)


def _dtype(*xs):
    # float64 if any operand is float64, else float32
    for x in xs:
        v = x.value if isinstance(x, Var) else x
        if getattr(v, "dtype", None) is _F64:
            return _F64
    return _F32


def _f64(x) -> np.ndarray:
    if isinstance(x, Var):
        x = x.value
    if getattr(x, "dtype", None) is _F64:
        return x
    return np.asarray(x, dtype=F64)


def _finite(out: np.ndarray, op: str) -> np.ndarray:
    # the sum is finite unless some entry is non-finite or it overflows
    if not math.isfinite(_add_reduce(out, axis=None)) and not np.isfinite(out).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    return out


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    """``a @ b`` for ``a`` of shape (..., m, k) and ``b`` of shape (k, n)."""
    av, bv = value(a), value(b)
    if av.ndim < 2 or bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise DimensionError(
            f"matmul shape mismatch: {tuple(av.shape)} @ {tuple(bv.shape)}"
        )
    a64, b64 = _f64(av), _f64(bv)
    out = _finite(np.matmul(a64, b64).astype(_dtype(av, bv), copy=False), "matmul")

    def vjp(g):
        ga = np.matmul(g, b64.T)
        gb = np.matmul(a64.reshape(-1, a64.shape[-1]).T, g.reshape(-1, g.shape[-1]))
        return ga, gb

    return record(out, (a, b), vjp)


def transpose(a):
    av = value(a)
    if av.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {av.shape}")
    out = np.ascontiguousarray(av.T)
    return record(out, (a,), lambda g: (g.T,))


# -- elementwise ----------------------------------------------------------


def add(a, b):
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    out = _finite((_f64(av) + _f64(bv)).astype(_dtype(a, b), copy=False), "add")
    return record(
        out, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape))
    )


def sub(a, b):
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    out = _finite((_f64(av) - _f64(bv)).astype(_dtype(a, b), copy=False), "sub")
    return record(
        out, (a, b), lambda g: (_unbroadcast(g, av.shape), -_unbroadcast(g, bv.shape))
    )


def mul(a, b):
    """Elementwise product with numpy broadcasting (scalars allowed)."""
    av, bv = np.asarray(value(a)), np.asarray(value(b))
    a64, b64 = _f64(av), _f64(bv)
    out = _finite((a64 * b64).astype(_dtype(a, b), copy=False), "mul")
    return record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b64, av.shape), _unbroadcast(g * a64, bv.shape)),
    )


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF via erf."""
    x64 = _f64(x)
    cdf = 0.5 * (1.0 + erf(x64 * _INV_SQRT2))
    out = _finite((x64 * cdf).astype(_dtype(x), copy=False), "gelu")

    def vjp(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x64 * x64)
        return (g * (cdf + x64 * pdf),)

    return record(out, (x,), vjp)


# -- reductions / normalisation -------------------------------------------


def softmax_rows(x):
    """Softmax along the last axis, stabilised by subtracting the row max."""
    x64 = _f64(x)
    z = x64 - x64.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = _finite(p.astype(_dtype(x), copy=False), "softmax_rows")

    def vjp(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return record(out, (x,), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-6):
    """Normalise the last axis to zero mean / unit variance, then affine."""
    x64 = _f64(x)
    d = x64.shape[-1]
    if d < 2:
        raise DimensionError(f"layer_norm needs a feature dimension >= 2, got {d}")
    g64, b64 = _f64(gain), _f64(bias)
    if g64.shape != (d,) or b64.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {g64.shape}, {b64.shape} do not match ({d},)"
        )
    xc = x64 - x64.sum(axis=-1, keepdims=True) / d
    var = (xc * xc).sum(axis=-1, keepdims=True) / d
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = _finite((xhat * g64 + b64).astype(_dtype(x, gain, bias), copy=False), "layer_norm")

    def vjp(gy):
        gxhat = gy * g64
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        lead = tuple(range(gy.ndim - 1))
        return gx, (gy * xhat).sum(axis=lead), gy.sum(axis=lead)

    return record(out, (x, gain, bias), vjp)


def sum_all(x):
    xv = value(x)
    out = np.asarray(_f64(xv).sum(), dtype=_dtype(xv)).reshape(())
    return record(out, (x,), lambda g: (np.broadcast_to(g, xv.shape).copy(),))


# -- rearrangement --------------------------------------------------------


def reshape(x, shape):
    xv = value(x)
    out = xv.reshape(shape)
    return record(out, (x,), lambda g: (g.reshape(xv.shape),))


def take(x, key):
    """Basic (slice / integer) indexing; the gradient scatters back."""
    xv = value(x)
    out = np.ascontiguousarray(xv[key])

    def vjp(g):
        gx = np.zeros(xv.shape, dtype=F64)
        gx[key] = g
        return (gx,)

    return record(out, (x,), vjp)


def concat(xs: Sequence, axis: int = 0):
    vals = [value(x) for x in xs]
    out = np.concatenate(vals, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return record(out, tuple(xs), lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(xs: Sequence, axis: int = 0):
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    n = len(vals)
    return record(
        out,
        tuple(xs),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def mean_of(xs: Sequence):
    """Elementwise mean of equally shaped tensors."""
    total = xs[0]
    for x in xs[1:]:
        total = add(total, x)
    return mul(total, 1.0 / len(xs))


# -- layers ---------------------------------------------------------------


def linear(x, w, b=None):
    y = matmul(x, w)
    return y if b is None else add(y, b)


def bmm(a, b):
    """Batched product (B, m, k) @ (B, k, n)."""
    av, bv = value(a), value(b)
    if av.ndim != 3 or bv.ndim != 3 or av.shape[0] != bv.shape[0] or av.shape[2] != bv.shape[1]:
        raise DimensionError(f"bmm shape mismatch: {tuple(av.shape)} @ {tuple(bv.shape)}")
    a64, b64 = _f64(av), _f64(bv)
    out = _finite(np.matmul(a64, b64).astype(_dtype(av, bv), copy=False), "bmm")

    def vjp(g):
        return np.matmul(g, b64.transpose(0, 2, 1)), np.matmul(a64.transpose(0, 2, 1), g)

    return record(out, (a, b), vjp)


def swap_last(x):
    """Swap the last two axes of a 3-D tensor."""
    out = np.ascontiguousarray(value(x).transpose(0, 2, 1))
    return record(out, (x,), lambda g: (g.transpose(0, 2, 1),))


def split_heads(x, heads: int):
    """(t, d) -> (heads, t, d/heads)."""
    t, d = value(x).shape
    out = np.ascontiguousarray(value(x).reshape(t, heads, d // heads).transpose(1, 0, 2))
    return record(out, (x,), lambda g: (g.transpose(1, 0, 2).reshape(t, d),))


def merge_heads(x):
    """(heads, t, dh) -> (t, heads*dh)."""
    k, t, dh = value(x).shape
    out = np.ascontiguousarray(value(x).transpose(1, 0, 2).reshape(t, k * dh))
    return record(out, (x,), lambda g: (g.reshape(t, k, dh).transpose(1, 0, 2),))


def mean(x, axis: int = 0):
    xv = value(x)
    n = xv.shape[axis]
    out = _f64(xv).mean(axis=axis).astype(_dtype(xv), copy=False)
    return record(
        out, (x,), lambda g: (np.repeat(np.expand_dims(g, axis), n, axis=axis) / n,)
    )


def _check_heads(d: int, heads: int) -> int:
    if heads < 1 or d % heads:
        raise ConfigError(f"width {d} is not divisible by {heads} heads")
    return d // heads


def attention_maps(xq, xk, wq, wk, heads: int, scale: Optional[float] = None):
    """Row-softmaxed per-head scores ``softmax(Q_h K_h^T * scale)``, shape
    (heads, tq, tk).  ``scale`` defaults to ``1/sqrt(d_head)``."""
    dh = _check_heads(value(wq).shape[1], heads)
    if scale is None:
        scale = 1.0 / math.sqrt(dh)
    qh = split_heads(matmul(xq, wq), heads)
    kh = split_heads(matmul(xk, wk), heads)
    return softmax_rows(mul(bmm(qh, swap_last(kh)), scale))


def attention(xq, xkv, params: Mapping, heads: int, scale: Optional[float] = None):
    """Multi-head attention of queries ``xq`` over keys/values ``xkv``.

    ``params`` holds ``q``, ``k``, ``v`` and ``o`` matrices.  Returns the
    projected output (rows of ``xq``) and the (heads, tq, tk) attention maps.
    """
    maps = attention_maps(xq, xkv, params["q"], params["k"], heads, scale)
    vh = split_heads(matmul(xkv, params["v"]), heads)
    out = matmul(merge_heads(bmm(maps, vh)), params["o"])
    return out, maps


def multi_head_attention(x, params: Mapping, heads: int, scale: Optional[float] = None):
    """Self-attention over the rows of ``x`` (t, d).

    Returns ``(output (t, d), attn (heads, t, t))``.
    """
    _check_heads(value(x).shape[-1], heads)
    return attention(x, x, params, heads, scale)


def feed_forward(x, w1, b1, w2, b2):
    return linear(gelu(linear(x, w1, b1)), w2, b2)


def block_params(params: Mapping, prefix: str) -> dict:
    """Pull one transformer block's tensors out of a flat name mapping."""
    keys = ("ln1.g", "ln1.b", "attn.q", "attn.k", "attn.v", "attn.o",
            "ln2.g", "ln2.b", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2")
    return {k: params[f"{prefix}.{k}"] for k in keys}


def attention_sublayer(x, bp: Mapping, heads: int, eps: float = 1e-6, mixer=None):
    """``x + Attn(LN(x))``.

    ``mixer(h, attn_params, heads)`` replaces the default self-attention; it
    must return one output row per input row.
    """
    attn_p = {"q": bp["attn.q"], "k": bp["attn.k"], "v": bp["attn.v"], "o": bp["attn.o"]}
    h = layer_norm(x, bp["ln1.g"], bp["ln1.b"], eps)
    if mixer is None:
        a, _ = multi_head_attention(h, attn_p, heads)
    else:
        a = mixer(h, attn_p, heads)
    return add(x, a)


def ffn_sublayer(x, bp: Mapping, eps: float = 1e-6):
    """``x + FFN(LN(x))``."""
    h = layer_norm(x, bp["ln2.g"], bp["ln2.b"], eps)
    return add(x, feed_forward(h, bp["ffn.w1"], bp["ffn.b1"], bp["ffn.w2"], bp["ffn.b2"]))


def transformer_block(x, bp: Mapping, heads: int, eps: float = 1e-6, mixer=None):
    """Pre-norm block: attention sub-layer then feed-forward sub-layer, each
    with its own layer norm and residual connection."""
    return ffn_sublayer(attention_sublayer(x, bp, heads, eps, mixer), bp, eps)
