"""Configuration records for each stage of the pipeline."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Dict

from .errors import ConfigError

STRATEGIES = ("self-attn", "cross-attn", "cosine-similarity")


@dataclass(frozen=True)
class TilerConfig:
    tile_size: int = 448
    min_tiles: int = 1
    max_tiles: int = 8

    def __post_init__(self):
        if self.tile_size < 2 or self.tile_size % 2:
            raise ConfigError(f"tile_size must be an even integer >= 2, got {self.tile_size}")
        if not 1 <= self.min_tiles <= self.max_tiles:
            raise ConfigError(
                f"need 1 <= min_tiles <= max_tiles, got {self.min_tiles}, {self.max_tiles}"
            )


@dataclass(frozen=True)
class EncoderConfig:
    """Toy ViT tile encoder.  ``grid = tile_size / patch_size`` must be even."""

    tile_size: int = 448
    patch_size: int = 32
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    seed: int = 42

    def __post_init__(self):
        if self.patch_size < 1 or self.tile_size % self.patch_size:
            raise ConfigError(
                f"tile_size {self.tile_size} is not a multiple of patch_size {self.patch_size}"
            )
        if (self.tile_size // self.patch_size) % 2:
            raise ConfigError(
                f"patch grid side {self.tile_size // self.patch_size} must be even"
            )
        if self.depth < 0:
            raise ConfigError("depth must be >= 0")
        if self.dim < 2 or self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")

    @property
    def grid(self) -> int:
        return self.tile_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid * self.grid


@dataclass(frozen=True)
class GswaConfig:
    """Weight allocator.  Defaults follow the published configuration."""

    dim: int = 1024
    blocks: int = 4
    heads: int = 4
    strategy: str = "self-attn"
    mlp_ratio: int = 4
    seed: int = 42

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.dim < 2 or self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"GSWA dim {self.dim} is not divisible by heads {self.heads}")
        if self.blocks < 1 and self.strategy != "cosine-similarity":
            raise ConfigError("attention strategies need at least one block")
        if self.mlp_ratio < 1:
            raise ConfigError("mlp_ratio must be >= 1")


@dataclass(frozen=True)
class ProjectorConfig:
    dim: int = 256

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("projector dim must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    tiler: TilerConfig = field(default_factory=TilerConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    gswa: GswaConfig = field(default_factory=GswaConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    seed: int = 42

    def __post_init__(self):
        if self.tiler.tile_size != self.encoder.tile_size:
            raise ConfigError(
                f"tiler tile_size {self.tiler.tile_size} != encoder tile_size "
                f"{self.encoder.tile_size}"
            )

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        try:
            return cls(
                tiler=TilerConfig(**d.get("tiler", {})),
                encoder=EncoderConfig(**d.get("encoder", {})),
                gswa=GswaConfig(**d.get("gswa", {})),
                projector=ProjectorConfig(**d.get("projector", {})),
                seed=int(d.get("seed", 42)),
            )
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            try:
                return cls.from_dict(json.load(fh))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: not valid JSON ({exc})") from None
