"""Toy ViT tile encoder and the 2x2 pixel-shuffle token compactor."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kernel as K
from .config import EncoderConfig
from .errors import ConfigError, DimensionError
from .tiler import TileBatch


@dataclass
class EmbeddingSet:
    """Per-image token blocks, shape (images, tokens, width), cls at token 0.

    Images are the tiles in plan order followed by the thumbnail when
    ``thumbnail`` is true.  Without a thumbnail there is exactly one image and
    it doubles as the global view.
    """

    tokens: np.ndarray
    thumbnail: bool

    @property
    def num_images(self) -> int:
        return self.tokens.shape[0]

    @property
    def num_tiles(self) -> int:
        return self.num_images - 1 if self.thumbnail else self.num_images

    @property
    def global_index(self) -> int:
        return self.num_images - 1

    @property
    def cls(self) -> np.ndarray:
        """(images, width) cls rows."""
        return self.tokens[:, 0, :]

    @property
    def patches(self) -> np.ndarray:
        return self.tokens[:, 1:, :]

    def token_count(self) -> int:
        return self.tokens.shape[0] * self.tokens.shape[1]

    def select(self, indices: Sequence[int]) -> "EmbeddingSet":
        """Keep the given image blocks (in the given order)."""
        return type(self)(np.ascontiguousarray(self.tokens[list(indices)]), self.thumbnail)


class ShuffledEmbeddingSet(EmbeddingSet):
    """Tokens after pixel shuffle: (images, M/4 + 1, 4D)."""


def patchify(tile: np.ndarray, patch: int) -> np.ndarray:
    """(S, S, 3) -> (G*G, P*P*3); patches row-major, each flattened (y, x, c)."""
    s = tile.shape[0]
    g = s // patch
    t = tile.reshape(g, patch, g, patch, 3).transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(t.reshape(g * g, patch * patch * 3))


def normalize_pixels(tile: np.ndarray) -> np.ndarray:
    # mean 0.5 / std 0.5 per channel
    return ((tile.astype(np.float64) - 0.5) / 0.5).astype(np.float32)


def embed_tile(tile: np.ndarray, cfg: EncoderConfig, params: Mapping) -> np.ndarray:
    """Patch embedding + cls + positions, before any transformer block."""
    patches = patchify(normalize_pixels(tile), cfg.patch_size)
    x = K.linear(patches, params["enc.patch.w"], params["enc.patch.b"])
    x = np.concatenate([params["enc.cls"][None, :], x], axis=0)
    return K.add(x, params["enc.pos"])


def encode_tile(tile: np.ndarray, cfg: EncoderConfig, params: Mapping) -> np.ndarray:
    if tile.shape != (cfg.tile_size, cfg.tile_size, 3):
        raise ConfigError(
            f"tile shape {tile.shape} does not match encoder tile size {cfg.tile_size}"
        )
    x = embed_tile(tile, cfg, params)
    for i in range(cfg.depth):
        x = K.transformer_block(x, K.block_params(params, f"enc.block{i}"), cfg.heads)
    return x


def encode(batch: TileBatch, cfg: EncoderConfig, params: Mapping, jobs: int = 1) -> EmbeddingSet:
    """Encode every tile and the thumbnail into an (N+1, M+1, D) token set.

    Tiles are independent; with ``jobs > 1`` they run on a thread pool and
    are reassembled in plan order.
    """
    images = batch.images()
    if jobs > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            blocks = list(pool.map(lambda t: encode_tile(t, cfg, params), images))
    else:
        blocks = [encode_tile(t, cfg, params) for t in images]
    return EmbeddingSet(np.stack(blocks).astype(np.float32), batch.thumbnail is not None)


# -- pixel shuffle --------------------------------------------------------


def _grid_side(num_patches: int) -> int:
    g = int(round(np.sqrt(num_patches)))
    if g * g != num_patches:
        raise DimensionError(f"{num_patches} patch tokens do not form a square grid")
    if g % 2:
        raise ConfigError(f"pixel shuffle needs an even patch grid, got {g}x{g}")
    return g


def shuffle_grid(patches: np.ndarray) -> np.ndarray:
    """(..., G*G, D) -> (..., G*G/4, 4D).

    Each 2x2 neighbourhood is concatenated along features in the order
    (0,0), (0,1), (1,0), (1,1); output tokens are row-major over the G/2 grid.
    """
    *lead, m, d = patches.shape
    g = _grid_side(m)
    h = g // 2
    x = patches.reshape(*lead, h, 2, h, 2, d)
    nl = len(lead)
    order = list(range(nl)) + [nl, nl + 2, nl + 1, nl + 3, nl + 4]
    return np.ascontiguousarray(x.transpose(order).reshape(*lead, h * h, 4 * d))


def unshuffle_grid(tokens: np.ndarray) -> np.ndarray:
    """Inverse of :func:`shuffle_grid`."""
    *lead, m4, d4 = tokens.shape
    h = int(round(np.sqrt(m4)))
    if h * h != m4 or d4 % 4:
        raise DimensionError(f"cannot unshuffle token block of shape {tokens.shape}")
    d = d4 // 4
    x = tokens.reshape(*lead, h, h, 2, 2, d)
    nl = len(lead)
    order = list(range(nl)) + [nl, nl + 2, nl + 1, nl + 3, nl + 4]
    return np.ascontiguousarray(x.transpose(order).reshape(*lead, 4 * h * h, d))


def pixel_shuffle(e: EmbeddingSet) -> ShuffledEmbeddingSet:
    """(N+1, M+1, D) -> (N+1, M/4+1, 4D).

    The cls token has no spatial neighbours, so it is lifted to width 4D by
    repeating it four times.
    """
    cls = np.tile(e.tokens[:, :1, :], (1, 1, 4))
    patches = shuffle_grid(e.tokens[:, 1:, :])
    return ShuffledEmbeddingSet(np.concatenate([cls, patches], axis=1), e.thumbnail)


def pixel_unshuffle(e: ShuffledEmbeddingSet) -> EmbeddingSet:
    d = e.tokens.shape[2] // 4
    cls = e.tokens[:, :1, :d]
    patches = unshuffle_grid(e.tokens[:, 1:, :])
    return EmbeddingSet(np.concatenate([cls, patches], axis=1), e.thumbnail)


def cls_of(e: EmbeddingSet, index: int) -> np.ndarray:
    """cls vector of image ``index``; the last index is the global view."""
    if not 0 <= index < e.num_images:
        raise IndexError(f"image index {index} out of range 0..{e.num_images - 1}")
    return e.tokens[index, 0].copy()
