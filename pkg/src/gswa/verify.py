"""Self-checks run by ``gswa verify``."""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from .allocator import allocate
from .config import STRATEGIES, GswaConfig
from .encoder import EmbeddingSet, ShuffledEmbeddingSet, pixel_shuffle, pixel_unshuffle
from .gradcheck import check_gswa_gradients
from .params import ParamStore, gswa_shapes, init_params

SUITES = ("gradient", "simplex", "symmetry", "shuffle", "params")


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _small_cfg(strategy: str, seed: int = 0) -> GswaConfig:
    return GswaConfig(dim=16, blocks=2, heads=2, strategy=strategy, seed=seed)


def gradient_checks(seeds: int = 2, tol: float = 1e-3) -> List[Check]:
    out = []
    for strategy in ("self-attn", "cross-attn"):
        for seed in range(seeds):
            cfg = _small_cfg(strategy, seed)
            rng = np.random.default_rng(seed)
            e = ShuffledEmbeddingSet(rng.normal(size=(4, 5, 8)).astype(np.float32), True)
            errs = check_gswa_gradients(e, init_params(gswa_shapes(cfg, 8), seed), cfg)
            worst = max(errs, key=errs.get)
            out.append(Check(
                f"gradient[{strategy},seed={seed}]",
                errs[worst] < tol,
                f"max rel err {errs[worst]:.3e} ({worst}) over {len(errs)} tensors",
            ))
    return out


def simplex_checks(seeds: int = 20, params: Optional[Mapping] = None,
                   cfg: Optional[GswaConfig] = None) -> List[Check]:
    out = []
    configs = [(s, _small_cfg(s)) for s in STRATEGIES]
    if params is not None and cfg is not None:
        configs.append((f"{cfg.strategy}/loaded", cfg))
    for label, c in configs:
        if label.endswith("/loaded"):
            p = params
            width = params["gswa.proj.w"].shape[0] if "gswa.proj.w" in params else 8
        else:
            width = 8
            p = init_params(gswa_shapes(c, width), 0)
        worst = 0.0
        ok = True
        for seed in range(seeds):
            rng = np.random.default_rng(seed)
            for n in (1, 3, 6, 8):
                w = np.asarray(allocate(rng.normal(size=(n + 1, width)).astype(np.float32), p, c),
                               dtype=np.float64)
                dev = abs(w.sum() - 1.0)
                worst = max(worst, dev)
                ok &= bool(dev < 1e-6 and w.min() >= 0.0 and w.max() <= 1.0)
        out.append(Check(f"simplex[{label}]", ok, f"max |sum(w)-1| = {worst:.2e}"))
    return out


def symmetry_checks() -> List[Check]:
    out = []
    for s in STRATEGIES:
        c = _small_cfg(s)
        p = init_params(gswa_shapes(c, 8), 0)
        row = np.random.default_rng(1).normal(size=8).astype(np.float32)
        worst = 0.0
        for n in (1, 3, 6, 8):
            w = np.asarray(allocate(np.tile(row, (n + 1, 1)), p, c), dtype=np.float64)
            worst = max(worst, float(np.abs(w - 1.0 / (n + 1)).max()))
        out.append(Check(f"symmetry[{s}]", worst < 1e-6, f"max deviation {worst:.2e}"))
    return out


def shuffle_checks(trials: int = 20) -> List[Check]:
    rng = np.random.default_rng(0)
    ok = True
    for _ in range(trials):
        g = int(rng.choice([2, 4, 6, 14]))
        d = int(rng.integers(1, 9))
        e = EmbeddingSet(rng.normal(size=(3, g * g + 1, d)).astype(np.float32), True)
        s = pixel_shuffle(e)
        back = pixel_unshuffle(s)
        ok &= s.tokens.shape == (3, g * g // 4 + 1, 4 * d)
        ok &= np.array_equal(back.tokens, e.tokens)
        ok &= np.array_equal(np.sort(s.tokens[:, 1:].ravel()), np.sort(e.tokens[:, 1:].ravel()))
    return [Check("shuffle[inverse+multiset]", bool(ok), f"{trials} random grids")]


def params_checks() -> List[Check]:
    cfg = _small_cfg("self-attn")
    store = init_params(gswa_shapes(cfg, 8), 7)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "params.json"
        store.save(path)
        back = ParamStore.load(path)
    ok = list(back) == list(store) and all(
        back[k].tobytes() == store[k].tobytes() for k in store
    )
    return [Check("params[roundtrip]", ok, f"{len(store)} tensors")]


def run_suites(suites=SUITES, seeds: int = 2, params: Optional[Mapping] = None,
               cfg: Optional[GswaConfig] = None) -> List[Check]:
    runners: Dict[str, Callable[[], List[Check]]] = {
        "gradient": lambda: gradient_checks(seeds),
        "simplex": lambda: simplex_checks(params=params, cfg=cfg),
        "symmetry": symmetry_checks,
        "shuffle": shuffle_checks,
        "params": params_checks,
    }
    checks: List[Check] = []
    for name in suites:
        checks.extend(runners[name]())
    return checks
