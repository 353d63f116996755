"""Tape gradients of the allocator loss versus central finite differences.

The loss is ``sum(weighted patch tokens)``.  Checks run in float64 so the
finite-difference truncation error, not float32 rounding, bounds the
agreement.  To keep the numeric side affordable each perturbed evaluation
resumes the forward pass at the first stage the perturbed tensor feeds
(projection, block i, or extraction); earlier stages are unchanged by the
perturbation, so the cached activations are exactly what a full pass would
recompute.
"""

from __future__ import annotations

from typing import Dict, Mapping

import numpy as np

from . import kernel as K
from .allocator import (
    _scale_blocks,
    cross_mixer,
    extract_weights,
    gswa_forward_traced,
    project_cls,
)
from .autodiff import Tape, finite_diff_grad, relative_error
from .config import GswaConfig
from .encoder import ShuffledEmbeddingSet


def gswa_loss(e: ShuffledEmbeddingSet, params: Mapping, cfg: GswaConfig):
    tokens, _ = gswa_forward_traced(e, params, cfg)
    return K.sum_all(tokens)


def analytic_gradients(e: ShuffledEmbeddingSet, params: Mapping, cfg: GswaConfig) -> Dict[str, np.ndarray]:
    tape = Tape()
    leaves = tape.leaves_from(params)
    return tape.backward(gswa_loss(e, leaves, cfg))


_FFN_KEYS = ("ln2", "ffn")


def _stage_of(name: str) -> int:
    """Index of the first sub-layer a parameter feeds.

    Sub-layer 2*i is block i's attention half and 2*i+1 its feed-forward
    half; -1 is the input projection and a large value the extraction layer.
    """
    parts = name.split(".")
    if parts[1] == "proj":
        return -1
    if parts[1].startswith("block"):
        return 2 * int(parts[1][5:]) + (parts[2] in _FFN_KEYS)
    return 1 << 30


def _run_sublayers(m, params, cfg, start, stop=None):
    mixer = cross_mixer if cfg.strategy == "cross-attn" else None
    for j in range(start, 2 * cfg.blocks if stop is None else stop):
        bp = K.block_params(params, f"gswa.block{j // 2}")
        if j % 2 == 0:
            m = K.attention_sublayer(m, bp, cfg.heads, mixer=mixer)
        else:
            m = K.ffn_sublayer(m, bp)
    return m


def _resume(e, params, cfg, stage, cache):
    """Loss as a function of ``params``, starting at sub-layer ``stage``."""
    if stage < 0:
        return float(gswa_loss(e, params, cfg))
    stage = min(stage, 2 * cfg.blocks)
    m = _run_sublayers(cache[stage], params, cfg, stage)
    w = extract_weights(m, params, cfg)
    return float(K.sum_all(_scale_blocks(e.patches, w)))


def numeric_gradients(
    e: ShuffledEmbeddingSet, params: Mapping, cfg: GswaConfig, step: float = 1e-3
) -> Dict[str, np.ndarray]:
    params = dict(params)
    # cache[j] = input to sub-layer j; cache[-1] = input to extraction
    m = project_cls(e.cls.astype(np.float64), params)
    cache = [m]
    for j in range(2 * cfg.blocks):
        m = _run_sublayers(m, params, cfg, j, j + 1)
        cache.append(m)

    grads = {}
    for name, base in params.items():
        stage = _stage_of(name)

        def f(x, name=name, stage=stage):
            trial = dict(params)
            trial[name] = x
            return _resume(e, trial, cfg, stage, cache)

        grads[name] = finite_diff_grad(f, base, step)
    return grads


def check_gswa_gradients(
    e: ShuffledEmbeddingSet, params: Mapping, cfg: GswaConfig, step: float = 1e-3
) -> Dict[str, float]:
    """Per-tensor norm-wise relative error between tape and finite differences."""
    p64 = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    e64 = ShuffledEmbeddingSet(np.asarray(e.tokens, dtype=np.float64), e.thumbnail)
    ga = analytic_gradients(e64, p64, cfg)
    gn = numeric_gradients(e64, p64, cfg, step)
    return {name: relative_error(ga[name], gn[name]) for name in p64}
