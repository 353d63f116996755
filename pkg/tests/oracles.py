"""Hand-evaluated references written with plain Python floats and ``math``.

Nothing here touches the package's kernel, so agreement is an independent
check rather than a self-comparison.
"""

import math

# One 2-wide block with a 2x2 feed-forward (mlp_ratio=1) and fixed numbers.
HAND_BLOCK = {
    "ln1.g": [1.0, 0.5],
    "ln1.b": [0.1, -0.2],
    "attn.q": [[1.0, 0.5], [-0.5, 1.0]],
    "attn.k": [[0.8, 0.0], [0.3, 1.2]],
    "attn.v": [[1.0, -1.0], [0.5, 2.0]],
    "attn.o": [[0.7, 0.2], [-0.1, 0.9]],
    "ln2.g": [0.9, 1.1],
    "ln2.b": [0.0, 0.3],
    "ffn.w1": [[1.0, -0.5], [0.25, 0.75]],
    "ffn.b1": [0.1, -0.1],
    "ffn.w2": [[0.6, 0.4], [-0.3, 1.0]],
    "ffn.b2": [0.05, 0.0],
}
HAND_ROWS = [[1.0, 2.0], [-1.0, 0.5], [0.3, -0.7]]


def mm(a, b):
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))]
            for i in range(len(a))]


def layer_norm(rows, g, b, eps=1e-6):
    out = []
    for r in rows:
        mu = sum(r) / len(r)
        var = sum((v - mu) ** 2 for v in r) / len(r)
        out.append([(v - mu) / math.sqrt(var + eps) * g[i] + b[i] for i, v in enumerate(r)])
    return out


def softmax(s):
    m = max(s)
    e = [math.exp(v - m) for v in s]
    return [v / sum(e) for v in e]


def single_head(xq, xkv, p):
    """One-head attention; scores scaled by 1/sqrt(width)."""
    q, k, v = mm(xq, p["attn.q"]), mm(xkv, p["attn.k"]), mm(xkv, p["attn.v"])
    d = len(q[0])
    mixed = []
    for qi in q:
        a = softmax([sum(qi[c] * kj[c] for c in range(d)) / math.sqrt(d) for kj in k])
        mixed.append([sum(a[j] * v[j][c] for j in range(len(v))) for c in range(d)])
    return mm(mixed, p["attn.o"])


def gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def ffn(rows, p):
    h = [[gelu(v + p["ffn.b1"][i]) for i, v in enumerate(r)] for r in mm(rows, p["ffn.w1"])]
    return [[v + p["ffn.b2"][i] for i, v in enumerate(r)] for r in mm(h, p["ffn.w2"])]


def block(rows, p, cross=False):
    h = layer_norm(rows, p["ln1.g"], p["ln1.b"])
    if cross:
        tiles, glob = h[:-1], h[-1:]
        a = single_head(tiles, glob, p) + single_head(glob, tiles, p)
    else:
        a = single_head(h, h, p)
    x = [[r[c] + a[i][c] for c in range(len(r))] for i, r in enumerate(rows)]
    f = ffn(layer_norm(x, p["ln2.g"], p["ln2.b"]), p)
    return [[r[c] + f[i][c] for c in range(len(r))] for i, r in enumerate(x)]


def extract_identity_weights(scale=3.0):
    """Global row of single-head attention with identity Q/K over rows
    s*e1, s*e2, s*(e1+e2)/sqrt2, D_g=2, scores divided by sqrt(2)."""
    rows = [[scale, 0.0], [0.0, scale], [scale / math.sqrt(2), scale / math.sqrt(2)]]
    g = rows[-1]
    scores = [(g[0] * r[0] + g[1] * r[1]) / math.sqrt(2) for r in rows]
    return rows, softmax(scores)
