"""Command-line interface.

Exit codes: 0 success, 1 verification failure, 2 bad input image,
3 configuration error, 4 infeasible request, 5 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import __version__
from .config import STRATEGIES, RunConfig
from .errors import (
    ConfigError,
    DimensionError,
    InfeasibleRequest,
    InputError,
    NumericInputError,
    ParamFormatError,
)
from .params import ParamStore, atomic_write
from .pipeline import SETTINGS, build_params, compare_settings, param_shapes, prepare, finish
from .plotting import render_ablation, render_heatmap, write_png
from .tiler import crop, load_image, save_png
from .verify import SUITES, run_suites

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3, 4, 5
DEFAULT_SEED = 42


def dumps(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def write_json(obj, path: Path) -> None:
    atomic_write(path, dumps(obj).encode())


# -- configuration --------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model configuration")
    g.add_argument("--config", type=Path, help="RunConfig JSON; flags override it")
    g.add_argument("--tile-size", type=int)
    g.add_argument("--max-tiles", type=int)
    g.add_argument("--patch-size", type=int)
    g.add_argument("--depth", type=int, help="encoder transformer blocks")
    g.add_argument("--dim", type=int, help="encoder width D")
    g.add_argument("--gswa-dim", type=int)
    g.add_argument("--gswa-blocks", type=int)
    g.add_argument("--gswa-heads", type=int)
    g.add_argument("--strategy", choices=STRATEGIES)
    g.add_argument("--proj-dim", type=int)
    g.add_argument("--seed", type=int, help=f"default $GSWA_SEED or {DEFAULT_SEED}")
    g.add_argument("--params", type=Path, help="parameter manifest instead of seeded init")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--jobs", type=int, default=1)


def resolve_config(args) -> RunConfig:
    base = RunConfig.load(args.config) if args.config else RunConfig()
    seed = args.seed
    if seed is None and "GSWA_SEED" in os.environ:
        try:
            seed = int(os.environ["GSWA_SEED"])
        except ValueError:
            raise ConfigError(f"GSWA_SEED={os.environ['GSWA_SEED']!r} is not an integer") from None
    if seed is None and args.config is None:
        seed = DEFAULT_SEED

    tile = args.tile_size
    tiler = dataclasses.replace(
        base.tiler,
        **_given(tile_size=tile, max_tiles=args.max_tiles),
    )
    enc = dataclasses.replace(
        base.encoder,
        **_given(tile_size=tile, patch_size=args.patch_size, depth=args.depth,
                 dim=args.dim, seed=seed),
    )
    gswa = dataclasses.replace(
        base.gswa,
        **_given(dim=args.gswa_dim, blocks=args.gswa_blocks, heads=args.gswa_heads,
                 strategy=args.strategy, seed=seed),
    )
    proj = dataclasses.replace(base.projector, **_given(dim=args.proj_dim))
    return RunConfig(tiler, enc, gswa, proj, seed if seed is not None else base.seed)


def _given(**kw):
    return {k: v for k, v in kw.items() if v is not None}


def load_params(args, cfg: RunConfig) -> ParamStore:
    if args.params is None:
        return build_params(cfg)
    store = ParamStore.load(args.params)
    store.require(param_shapes(cfg))
    return store


def _outputs_for(out: Path, images: Sequence[Path]) -> List[Path]:
    if len(images) == 1:
        dirs = [out]
    else:
        dirs = [out / Path(p).stem for p in images]
    for d in dirs:
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _tsv(report) -> str:
    lines = ["index\trow\tcol\tsimilarity\tweight"]
    for t in report["tiles"]:
        w = "" if t["weight"] is None else f"{t['weight']:.9g}"
        lines.append(f"{t['index']}\t{t['row']}\t{t['col']}\t{t['similarity']:.9g}\t{w}")
    if report["global_weight"] is not None:
        lines.append(f"global\t\t\t1\t{report['global_weight']:.9g}")
    return "\n".join(lines) + "\n"


# -- commands -------------------------------------------------------------


def cmd_tile(args) -> int:
    cfg = resolve_config(args)
    image = load_image(args.image)
    batch = crop(image, cfg.tiler.tile_size, cfg.tiler.min_tiles, cfg.tiler.max_tiles)
    args.out.mkdir(parents=True, exist_ok=True)
    plan = batch.plan.to_json()
    write_json(plan, args.out / "plan.json")
    if args.emit_tiles:
        for i, tile in enumerate(batch.tiles):
            row, col = batch.plan.grid_position(i)
            save_png(tile, args.out / f"tile_{row}_{col}.png")
        if batch.thumbnail is not None:
            save_png(batch.thumbnail, args.out / "thumbnail.png")
    sys.stdout.write(dumps(plan))
    return EXIT_OK


def _weigh_one(path: Path, out: Path, cfg: RunConfig, params, jobs: int) -> dict:
    image = load_image(path)
    state = prepare(image, cfg, params, jobs)
    _, report = finish(state, cfg, params)
    rj = report.to_json()
    tile_w = [t["weight"] for t in rj["tiles"]]
    write_json(rj, out / "report.json")
    atomic_write(out / "weights.tsv", _tsv(rj).encode())
    write_png(render_heatmap(state.batch.canvas, state.batch.plan, tile_w), out / "heatmap.png")
    return rj


def cmd_weigh(args) -> int:
    cfg = resolve_config(args)
    params = load_params(args, cfg)
    dirs = _outputs_for(args.out, args.images)
    if len(args.images) > 1 and args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(
                lambda pd: _weigh_one(pd[0], pd[1], cfg, params, 1), zip(args.images, dirs)))
    else:
        reports = [_weigh_one(p, d, cfg, params, args.jobs) for p, d in zip(args.images, dirs)]
    for path, rj in zip(args.images, reports):
        if len(reports) > 1:
            sys.stdout.write(f"# {path}\n")
        sys.stdout.write(_tsv(rj))
    return EXIT_OK


def parse_removal(spec: str) -> Tuple[str, int]:
    setting, _, k = spec.rpartition(":")
    if setting not in SETTINGS:
        raise ConfigError(f"--remove {spec!r}: setting must be one of {SETTINGS}")
    try:
        k = int(k)
    except ValueError:
        raise ConfigError(f"--remove {spec!r}: k must be an integer") from None
    if k < 0:
        raise ConfigError(f"--remove {spec!r}: k must be >= 0")
    return setting, k


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    settings = [parse_removal(s) for s in (args.remove or ["top:3", "second-top:3", "bottom:3"])]
    params = load_params(args, cfg)
    image = load_image(args.image)
    result = compare_settings(image, cfg, params, settings, rank_by=args.rank_by, jobs=args.jobs)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(result, args.out / "ablation.json")
    write_png(render_ablation(result["settings"]), args.out / "ablation.png")
    lines = ["setting\tk\tremoved\tremoved_weight_mass\ttokens_after\toutput_norm"]
    for r in result["settings"]:
        lines.append(
            f"{r['setting']}\t{r['k']}\t{','.join(map(str, r['removed']))}\t"
            f"{r['removed_weight_mass']:.9g}\t{r['tokens_after']}\t{r['output_norm']:.9g}"
        )
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_init_params(args) -> int:
    cfg = resolve_config(args)
    out = args.out
    if out.suffix != ".json":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "params.json"
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
    store = build_params(cfg)
    manifest, blob = store.save(out)
    write_json(cfg.to_dict(), out.with_name(out.stem + ".config.json"))
    sys.stdout.write(f"{manifest}\t{blob}\t{len(store)} tensors\t{store.num_values()} values\n")
    return EXIT_OK


def cmd_verify(args) -> int:
    suites = SUITES if args.suite == "all" else (args.suite,)
    params = cfg = None
    if args.params is not None:
        run_cfg = resolve_config(args)
        params = ParamStore.load(args.params)
        params.require(param_shapes(run_cfg))
        cfg = run_cfg.gswa
    checks = run_suites(suites, seeds=args.seeds, params=params, cfg=cfg)
    for c in checks:
        sys.stdout.write(f"{'PASS' if c.passed else 'FAIL'}\t{c.name}\t{c.detail}\n")
    summary = {
        "passed": sum(c.passed for c in checks),
        "failed": sum(not c.passed for c in checks),
        "checks": [c.to_json() for c in checks],
    }
    sys.stdout.write(json.dumps(summary, separators=(",", ":")) + "\n")
    return EXIT_OK if summary["failed"] == 0 else EXIT_FAIL


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gswa", description="Sub-image weight allocation for tiled images.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tile", help="choose a tile grid and cut the image")
    p.add_argument("image", type=Path)
    p.add_argument("--emit-tiles", action="store_true", help="also write tile PNGs")
    _common(p)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("weigh", help="weights per tile, report JSON and heatmap")
    p.add_argument("images", type=Path, nargs="+")
    _common(p)
    p.set_defaults(func=cmd_weigh)

    p = sub.add_parser("ablate", help="sub-image removal comparison")
    p.add_argument("image", type=Path)
    p.add_argument("--remove", action="append", metavar="SETTING:K",
                   help="top:K, second-top:K or bottom:K; repeatable")
    p.add_argument("--rank-by", choices=("similarity", "weight"), default="similarity")
    _common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("init-params", help="write a seeded parameter file")
    _common(p)
    p.set_defaults(func=cmd_init_params)

    p = sub.add_parser("verify", help="run the built-in property checks")
    p.add_argument("--suite", choices=("all",) + SUITES, default="all")
    p.add_argument("--seeds", type=int, default=2, help="seeds for the gradient suite")
    _common(p)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        code = EXIT_INPUT
        msg = str(exc)
    except InfeasibleRequest as exc:
        code = EXIT_INFEASIBLE
        msg = str(exc)
    except (ConfigError, DimensionError, NumericInputError) as exc:
        code = EXIT_CONFIG
        msg = str(exc)
    except (ParamFormatError, OSError) as exc:
        code = EXIT_IO
        msg = str(exc)
    sys.stderr.write(f"gswa {args.command}: error: {msg}\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
