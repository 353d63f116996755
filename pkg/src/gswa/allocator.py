"""Global-semantic weight allocation over per-image cls tokens.

Rows of every cls matrix are ordered tiles first, global thumbnail last.
The attention strategies map the cls tokens to the allocator width, run a
stack of pre-norm transformer blocks, and read the global row of a
head-averaged attention map as a weight per image.  The cosine strategy
skips all of that and softmaxes cosine similarities to the global cls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Tuple

import numpy as np

from . import kernel as K
from .autodiff import value
from .config import GswaConfig
from .encoder import ShuffledEmbeddingSet
from .errors import ConfigError, DimensionError, NumericInputError


@dataclass
class WeightedEmbeddings:
    """Patch tokens (images, M/4, 4D) scaled by their image weight; no cls."""

    tokens: np.ndarray
    weights: np.ndarray
    thumbnail: bool

    def token_count(self) -> int:
        return self.tokens.shape[0] * self.tokens.shape[1]


def project_cls(cls_rows, params: Mapping):
    """Affine map of each (images, 4D) cls row to the allocator width."""
    w = params["gswa.proj.w"]
    if value(cls_rows).shape[-1] != value(w).shape[0]:
        raise ConfigError(
            f"cls width {value(cls_rows).shape[-1]} does not match projection "
            f"input width {value(w).shape[0]}"
        )
    return K.linear(cls_rows, w, params["gswa.proj.b"])


def cross_mixer(h, attn_p: Mapping, heads: int):
    """Two-way cross-attention between the tile rows and the global row.

    The global row queries the tile rows and every tile row queries the
    global row, so each output row only mixes values from the other group.
    A lone global row (no tiles) attends to itself.
    """
    n = value(h).shape[0]
    if n == 1:
        out, _ = K.multi_head_attention(h, attn_p, heads)
        return out
    tiles = K.take(h, slice(0, n - 1))
    glob = K.take(h, slice(n - 1, n))
    tiles_out, _ = K.attention(tiles, glob, attn_p, heads)
    glob_out, _ = K.attention(glob, tiles, attn_p, heads)
    return K.concat([tiles_out, glob_out], axis=0)


def contextualize(m, params: Mapping, cfg: GswaConfig, eps: float = 1e-6):
    """Run the allocator's transformer blocks over the (images, D_g) rows."""
    if cfg.strategy == "self-attn":
        mixer = None
    elif cfg.strategy == "cross-attn":
        mixer = cross_mixer
    else:
        raise ConfigError(f"contextualize does not apply to strategy {cfg.strategy!r}")
    for i in range(cfg.blocks):
        bp = K.block_params(params, f"gswa.block{i}")
        m = K.transformer_block(m, bp, cfg.heads, eps, mixer=mixer)
    return m


def extract_weights(m, params: Mapping, cfg: GswaConfig):
    """Global row of the head-averaged attention map of the extraction layer.

    Scores are scaled by ``1/sqrt(D_g)`` (the full allocator width, not the
    per-head width).  Returns a vector of length ``images`` summing to 1.
    """
    if cfg.strategy not in ("self-attn", "cross-attn"):
        raise ConfigError(f"extract_weights does not apply to strategy {cfg.strategy!r}")
    d = value(m).shape[-1]
    maps = K.attention_maps(
        m, m, params["gswa.extract.q"], params["gswa.extract.k"], cfg.heads,
        scale=1.0 / math.sqrt(d),
    )
    avg = K.mean(maps, axis=0)
    n = value(avg).shape[0]
    return K.take(avg, n - 1)


def cosine_similarities(cls_rows) -> np.ndarray:
    """Cosine similarity of every cls row to the last (global) row, float64."""
    x = np.asarray(value(cls_rows), dtype=np.float64)
    norms = np.sqrt((x * x).sum(axis=1))
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise NumericInputError(f"cls vector {bad} has zero norm")
    sims = (x @ x[-1]) / (norms * norms[-1])
    sims[-1] = 1.0
    return np.clip(sims, -1.0, 1.0)


def cosine_weights(cls_rows) -> np.ndarray:
    """Softmax of cosine similarities to the global cls (itself included)."""
    dtype = K._dtype(cls_rows)
    sims = cosine_similarities(cls_rows)
    return K.softmax_rows(sims[None, :])[0].astype(dtype)


def _scale_blocks(patches, w):
    n = value(w).shape[0]
    if patches.shape[0] != n:
        raise DimensionError(f"{n} weights for {patches.shape[0]} images")
    return K.mul(patches.astype(value(w).dtype), K.reshape(w, (n, 1, 1)))


def apply_weights(e: ShuffledEmbeddingSet, w) -> WeightedEmbeddings:
    """Drop each image's cls slot and scale its patch tokens by its weight."""
    w = np.asarray(value(w))
    if w.ndim != 1:
        raise DimensionError(f"weights must be a vector, got shape {w.shape}")
    return WeightedEmbeddings(_scale_blocks(e.patches, w), w, e.thumbnail)


def allocate(cls_rows, params: Mapping, cfg: GswaConfig):
    """Weight vector for (images, 4D) cls rows under ``cfg.strategy``."""
    if cfg.strategy == "cosine-similarity":
        return cosine_weights(cls_rows)
    m = project_cls(cls_rows, params)
    m = contextualize(m, params, cfg)
    return extract_weights(m, params, cfg)


def gswa_forward_traced(e: ShuffledEmbeddingSet, params: Mapping, cfg: GswaConfig):
    """Weighted patch tokens and weights as raw values.

    When ``params`` holds tape variables the results are tape variables too,
    which is how the gradient checks drive this path.
    """
    proj = params.get("gswa.proj.w")
    dtype = value(proj).dtype if proj is not None else e.tokens.dtype
    w = allocate(e.cls.astype(dtype), params, cfg)
    return _scale_blocks(e.patches, w), w


def gswa_forward(
    e: ShuffledEmbeddingSet, params: Mapping, cfg: GswaConfig
) -> Tuple[WeightedEmbeddings, np.ndarray]:
    """Full allocator: cls rows -> weights -> weighted patch tokens."""
    tokens, w = gswa_forward_traced(e, params, cfg)
    w = np.asarray(value(w))
    return WeightedEmbeddings(np.asarray(value(tokens)), w, e.thumbnail), w
