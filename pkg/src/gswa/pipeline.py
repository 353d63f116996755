"""End-to-end composition and the sub-image ranking / removal harness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import kernel as K
from .allocator import cosine_similarities, gswa_forward
from .config import RunConfig
from .encoder import ShuffledEmbeddingSet, encode, pixel_shuffle
from .errors import ConfigError, InfeasibleRequest
from .params import ParamStore, encoder_shapes, gswa_shapes, init_params, projector_shapes
from .tiler import CropPlan, TileBatch, crop

REPORT_SCHEMA = "gswa-report/1"
ABLATION_SCHEMA = "gswa-ablation/1"
SETTINGS = ("top", "second-top", "bottom")


def fmt(x: float) -> float:
    """Round to 9 significant digits for stable serialisation."""
    return float(f"{float(x):.9g}")


# -- parameters -----------------------------------------------------------


def cls_width(cfg: RunConfig) -> int:
    return 4 * cfg.encoder.dim


def param_shapes(cfg: RunConfig) -> Dict[str, Tuple[int, ...]]:
    shapes = dict(encoder_shapes(cfg.encoder))
    shapes.update(gswa_shapes(cfg.gswa, cls_width(cfg)))
    shapes.update(projector_shapes(cfg.projector, cls_width(cfg)))
    return shapes


def build_params(cfg: RunConfig) -> ParamStore:
    """Deterministic parameters for every stage; each stage uses its own seed."""
    store = ParamStore()
    store.update(init_params(encoder_shapes(cfg.encoder), cfg.encoder.seed))
    store.update(init_params(gswa_shapes(cfg.gswa, cls_width(cfg)), cfg.gswa.seed))
    store.update(init_params(projector_shapes(cfg.projector, cls_width(cfg)), cfg.seed))
    return store


def project(tokens, params: Mapping):
    """Two-layer MLP (linear, GELU, linear) applied to every token."""
    h = K.gelu(K.linear(tokens, params["mlp.fc1.w"], params["mlp.fc1.b"]))
    return K.linear(h, params["mlp.fc2.w"], params["mlp.fc2.b"])


# -- ranking and removal --------------------------------------------------


def rank_by_global_similarity(e: ShuffledEmbeddingSet) -> List[Tuple[int, float]]:
    """Tiles sorted by cosine similarity of their cls to the global cls,
    highest first; ties keep ascending tile index."""
    sims = cosine_similarities(e.cls)
    return rank_scores(sims[: e.num_tiles])


def rank_scores(scores: Sequence[float]) -> List[Tuple[int, float]]:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return [(i, float(scores[i])) for i in order]


def select_removal(ranking: Sequence[Tuple[int, float]], setting: str, k: int) -> List[int]:
    """Tile indices a removal setting drops, given a best-first ranking.

    ``top`` drops ranks 1..k, ``second-top`` ranks k+1..2k, ``bottom`` the
    last k.
    """
    n = len(ranking)
    if setting not in SETTINGS:
        raise ConfigError(f"unknown removal setting {setting!r}; expected one of {SETTINGS}")
    if k < 0:
        raise InfeasibleRequest(f"cannot remove {k} tiles")
    need = 2 * k if setting == "second-top" else k
    if need > n:
        raise InfeasibleRequest(f"{setting}:{k} needs {need} removable tiles, image has {n}")
    order = [i for i, _ in ranking]
    if setting == "top":
        picked = order[:k]
    elif setting == "second-top":
        picked = order[k:2 * k]
    else:
        picked = order[n - k:]
    return sorted(picked)


def remove_tiles(
    e: ShuffledEmbeddingSet,
    setting: str,
    k: int,
    scores: Optional[Sequence[float]] = None,
) -> Tuple[ShuffledEmbeddingSet, List[int]]:
    """Drop ``k`` tile blocks chosen by ``setting``; the thumbnail always stays.

    Tiles are ranked by ``scores`` (one per tile, higher first) or, by
    default, by similarity to the global cls.  Returns the reduced set and
    the removed tile indices.
    """
    if scores is None:
        ranking = rank_by_global_similarity(e)
    else:
        if len(scores) != e.num_tiles:
            raise ConfigError(f"{len(scores)} scores for {e.num_tiles} tiles")
        ranking = rank_scores(scores)
    if not e.thumbnail and k > 0:
        raise InfeasibleRequest("a single-tile image has no removable tiles")
    removed = select_removal(ranking, setting, k)
    keep = [i for i in range(e.num_images) if i not in set(removed)]
    return e.select(keep), removed


# -- report ---------------------------------------------------------------


@dataclass
class AnalysisReport:
    strategy: str
    seed: int
    image_size: Tuple[int, int]
    plan: CropPlan
    similarities: np.ndarray
    weights: np.ndarray
    survivors: List[int]
    tokens: Dict[str, int]
    removal: Optional[dict] = None

    @property
    def tile_weights(self) -> Dict[int, float]:
        return {t: float(self.weights[j]) for j, t in enumerate(self.survivors)}

    @property
    def global_weight(self) -> Optional[float]:
        return float(self.weights[-1]) if self.plan.include_thumbnail else None

    def to_json(self) -> dict:
        tw = self.tile_weights
        tiles = []
        for i in range(self.plan.num_tiles):
            row, col = self.plan.grid_position(i)
            tiles.append({
                "index": i,
                "row": row,
                "col": col,
                "similarity": fmt(self.similarities[i]),
                "weight": fmt(tw[i]) if i in tw else None,
            })
        gw = self.global_weight
        return {
            "schema": REPORT_SCHEMA,
            "strategy": self.strategy,
            "seed": self.seed,
            "image": {"width": self.image_size[0], "height": self.image_size[1]},
            "plan": self.plan.to_json(),
            "num_tiles": self.plan.num_tiles,
            "tiles": tiles,
            "global_weight": fmt(gw) if gw is not None else None,
            "weights": [fmt(w) for w in self.weights],
            "tokens": dict(self.tokens),
            "removal": self.removal,
        }


def token_counts(num_images: int, num_patches: int) -> Dict[str, int]:
    m4 = num_patches // 4
    return {
        "encoded": num_images * (num_patches + 1),
        "shuffled": num_images * (m4 + 1),
        "weighted": num_images * m4,
        "projected": num_images * m4,
    }


@dataclass
class PipelineState:
    """Intermediate results of one image, reusable across removal settings."""

    batch: TileBatch
    shuffled: ShuffledEmbeddingSet
    similarities: np.ndarray
    image_size: Tuple[int, int]


def prepare(image, cfg: RunConfig, params: Mapping, jobs: int = 1) -> PipelineState:
    """Crop, encode and pixel-shuffle one image."""
    batch = crop(image, cfg.tiler.tile_size, cfg.tiler.min_tiles, cfg.tiler.max_tiles)
    shuffled = pixel_shuffle(encode(batch, cfg.encoder, params, jobs=jobs))
    h, w = np.shape(image)[:2]
    return PipelineState(batch, shuffled, cosine_similarities(shuffled.cls), (w, h))


def finish(
    state: PipelineState,
    cfg: RunConfig,
    params: Mapping,
    removal: Optional[Tuple[str, int]] = None,
    scores: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, AnalysisReport]:
    """Optional tile removal, then allocation and projection."""
    e = state.shuffled
    m = cfg.encoder.num_patches
    before = token_counts(e.num_images, m)
    removal_info = None
    survivors = list(range(state.batch.plan.num_tiles))
    if removal is not None:
        setting, k = removal
        e, removed = remove_tiles(e, setting, k, scores)
        survivors = [t for t in survivors if t not in set(removed)]
        removal_info = {
            "setting": setting,
            "k": k,
            "removed": removed,
            "tokens_before": before["shuffled"],
            "tokens_after": token_counts(e.num_images, m)["shuffled"],
        }
    weighted, w = gswa_forward(e, params, cfg.gswa)
    projected = np.asarray(project(weighted.tokens, params))
    report = AnalysisReport(
        strategy=cfg.gswa.strategy,
        seed=cfg.seed,
        image_size=state.image_size,
        plan=state.batch.plan,
        similarities=state.similarities,
        weights=w,
        survivors=survivors,
        tokens=token_counts(e.num_images, m),
        removal=removal_info,
    )
    return projected, report


def run_pipeline(
    image,
    cfg: RunConfig,
    params: Mapping,
    removal: Optional[Tuple[str, int]] = None,
    jobs: int = 1,
) -> Tuple[np.ndarray, AnalysisReport]:
    """Crop -> encode -> shuffle -> [remove] -> allocate -> project.

    Returns projected tokens of shape (images, M/4, D_t) and the report.
    """
    state = prepare(image, cfg, params, jobs)
    return finish(state, cfg, params, removal)


def compare_settings(
    image,
    cfg: RunConfig,
    params: Mapping,
    settings: Sequence[Tuple[str, int]] = (("top", 3), ("second-top", 3), ("bottom", 3)),
    rank_by: str = "similarity",
    jobs: int = 1,
) -> dict:
    """Run each removal setting against the unremoved baseline.

    For every setting reports the baseline weight mass of the removed tiles,
    the surviving tiles' new weights, token counts and the norm of the
    projected output.
    """
    if rank_by not in ("similarity", "weight"):
        raise ConfigError(f"rank_by must be 'similarity' or 'weight', got {rank_by!r}")
    state = prepare(image, cfg, params, jobs)
    base_out, base = finish(state, cfg, params)
    n = state.shuffled.num_tiles
    if rank_by == "weight":
        scores = [float(x) for x in base.weights[:n]]
    else:
        scores = [float(x) for x in state.similarities[:n]]

    rows = []
    for setting, k in settings:
        out, rep = finish(state, cfg, params, (setting, k), scores)
        removed = rep.removal["removed"]
        rows.append({
            "setting": setting,
            "k": k,
            "removed": removed,
            "survivors": rep.survivors,
            "removed_weight_mass": fmt(sum(base.weights[i] for i in removed)),
            "weights": [fmt(x) for x in rep.weights],
            "tokens_before": rep.removal["tokens_before"],
            "tokens_after": rep.removal["tokens_after"],
            "output_norm": fmt(np.linalg.norm(out.astype(np.float64))),
        })
    return {
        "schema": ABLATION_SCHEMA,
        "rank_by": rank_by,
        "baseline": {
            "report": base.to_json(),
            "output_norm": fmt(np.linalg.norm(base_out.astype(np.float64))),
        },
        "settings": rows,
    }
