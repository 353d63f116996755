"""Dynamic cropping: aspect-ratio grid selection, tiling and the thumbnail."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, InputError
from .params import atomic_write

Ratio = Tuple[int, int]  # (cols, rows)


def as_image(arr) -> np.ndarray:
    """Validate an H x W x 3 float image with values in [0, 1]."""
    img = np.asarray(arr, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise InputError(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise InputError(f"zero-area image {img.shape[1]}x{img.shape[0]}")
    if not np.isfinite(img).all() or img.min() < 0.0 or img.max() > 1.0:
        raise InputError("pixel values must lie in [0, 1]")
    return np.ascontiguousarray(img)


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG file as an RGB float image in [0, 1]."""
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            data = np.asarray(rgb, dtype=np.uint8)
    except FileNotFoundError:
        raise InputError(f"{path}: no such file") from None
    except (UnidentifiedImageError, OSError) as exc:
        raise InputError(f"{path}: cannot decode image ({exc})") from None
    return as_image(data.astype(np.float32) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(img: np.ndarray, path) -> None:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="RGB").save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping.

    Interpolation is written as ``a + (b - a) * t`` so constant regions stay
    bitwise constant.
    """
    if out_h < 1 or out_w < 1:
        raise InputError(f"cannot resize to {out_w}x{out_h}")
    src = np.asarray(img, dtype=np.float64)
    in_h, in_w = src.shape[:2]

    def axis(n_out, n_in):
        x = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        x = np.clip(x, 0.0, n_in - 1)
        i0 = np.floor(x).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    y0, y1, ty = axis(out_h, in_h)
    x0, x1, tx = axis(out_w, in_w)
    top, bot = src[y0], src[y1]
    rows = top + (bot - top) * ty[:, None, None]
    left, right = rows[:, x0], rows[:, x1]
    out = left + (right - left) * tx[None, :, None]
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def candidate_ratios(min_tiles: int = 1, max_tiles: int = 8) -> List[Ratio]:
    """All (cols, rows) grids with ``min_tiles <= cols*rows <= max_tiles``,
    sorted by tile count then cols."""
    if not (isinstance(min_tiles, int) and isinstance(max_tiles, int)) or not (
        1 <= min_tiles <= max_tiles
    ):
        raise ConfigError(f"need 1 <= min_tiles <= max_tiles, got {min_tiles}, {max_tiles}")
    pairs = {
        (c, r)
        for c in range(1, max_tiles + 1)
        for r in range(1, max_tiles // c + 1)
        if c * r >= min_tiles
    }
    return sorted(pairs, key=lambda p: (p[0] * p[1], p[0]))


def match_ratio(
    width: int, height: int, candidates: Sequence[Ratio], tile_size: int = 448
) -> Ratio:
    """Grid whose cols/rows ratio is closest to ``width/height``.

    Candidates are scanned in order (tile count ascending).  On an exact tie a
    later, larger grid replaces the current choice only when the image area
    exceeds half of that grid's canvas area.
    """
    if not candidates:
        raise ConfigError("no candidate ratios")
    aspect = Fraction(width, height)
    area = width * height
    best = candidates[0]
    best_diff = abs(aspect - Fraction(*best))
    for cand in candidates[1:]:
        diff = abs(aspect - Fraction(*cand))
        if diff < best_diff:
            best, best_diff = cand, diff
        elif diff == best_diff and 2 * area > tile_size * tile_size * cand[0] * cand[1]:
            best = cand
    return best


@dataclass(frozen=True)
class CropPlan:
    ratio: Ratio
    tile_size: int
    include_thumbnail: bool

    @property
    def cols(self) -> int:
        return self.ratio[0]

    @property
    def rows(self) -> int:
        return self.ratio[1]

    @property
    def num_tiles(self) -> int:
        return self.cols * self.rows

    @property
    def canvas(self) -> Tuple[int, int]:
        """(width, height) of the resized image."""
        return self.cols * self.tile_size, self.rows * self.tile_size

    @property
    def tiles(self) -> List[Tuple[int, int, int, int]]:
        """Tile rectangles (x, y, w, h), row-major."""
        s = self.tile_size
        return [
            (c * s, r * s, s, s) for r in range(self.rows) for c in range(self.cols)
        ]

    def grid_position(self, index: int) -> Tuple[int, int]:
        """(row, col) of tile ``index``."""
        return divmod(index, self.cols)

    def to_json(self) -> dict:
        return {
            "ratio": [self.cols, self.rows],
            "canvas": list(self.canvas),
            "tiles": [{"x": x, "y": y, "w": w, "h": h} for x, y, w, h in self.tiles],
            "thumbnail": self.include_thumbnail,
        }


@dataclass
class TileBatch:
    tiles: List[np.ndarray]
    thumbnail: Optional[np.ndarray]
    plan: CropPlan
    canvas: np.ndarray = field(repr=False)

    def images(self) -> List[np.ndarray]:
        """Tiles in plan order, thumbnail last when present."""
        return self.tiles + ([self.thumbnail] if self.thumbnail is not None else [])

    def __len__(self) -> int:
        return len(self.tiles) + (self.thumbnail is not None)


def plan_crop(width: int, height: int, tile_size: int = 448, min_tiles: int = 1,
              max_tiles: int = 8) -> CropPlan:
    if width < 1 or height < 1:
        raise InputError(f"zero-area image {width}x{height}")
    ratio = match_ratio(width, height, candidate_ratios(min_tiles, max_tiles), tile_size)
    return CropPlan(ratio, tile_size, include_thumbnail=ratio[0] * ratio[1] > 1)


def crop(image, tile_size: int = 448, min_tiles: int = 1, max_tiles: int = 8) -> TileBatch:
    """Resize ``image`` onto the best grid canvas and cut it into tiles.

    The thumbnail (whole image resized to one tile) is added only when there
    is more than one tile.
    """
    if tile_size < 2 or tile_size % 2:
        raise ConfigError(f"tile_size must be even, got {tile_size}")
    img = as_image(image)
    h, w = img.shape[:2]
    plan = plan_crop(w, h, tile_size, min_tiles, max_tiles)
    cw, ch = plan.canvas
    canvas = resize_bilinear(img, ch, cw)
    tiles = [
        np.ascontiguousarray(canvas[y:y + th, x:x + tw]) for x, y, tw, th in plan.tiles
    ]
    thumb = resize_bilinear(img, tile_size, tile_size) if plan.include_thumbnail else None
    return TileBatch(tiles, thumb, plan, canvas)


def reassemble(tiles: Sequence[np.ndarray], plan: CropPlan) -> np.ndarray:
    """Inverse of the tile cut: paste tiles back onto the canvas."""
    cw, ch = plan.canvas
    out = np.empty((ch, cw, 3), dtype=np.float32)
    for tile, (x, y, tw, th) in zip(tiles, plan.tiles):
        out[y:y + th, x:x + tw] = tile
    return out
