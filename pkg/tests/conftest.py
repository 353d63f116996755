import numpy as np
import pytest
from PIL import Image

from gswa.config import EncoderConfig, GswaConfig, ProjectorConfig, RunConfig, TilerConfig
from gswa.pipeline import build_params

# Small shapes keep the full pipeline well under a second per image:
# 64px tiles, 16px patches -> G=4, M=16, M/4=4.
TOY_FLAGS = [
    "--tile-size", "64", "--patch-size", "16", "--depth", "1", "--dim", "8",
    "--gswa-dim", "16", "--gswa-blocks", "2", "--gswa-heads", "2", "--proj-dim", "16",
]


def toy_config(strategy="self-attn", seed=42, max_tiles=8):
    return RunConfig(
        TilerConfig(tile_size=64, max_tiles=max_tiles),
        EncoderConfig(tile_size=64, patch_size=16, depth=1, dim=8, heads=2, seed=seed),
        GswaConfig(dim=16, blocks=2, heads=2, strategy=strategy, seed=seed),
        ProjectorConfig(dim=16),
        seed=seed,
    )


def composite_image(width=800, height=600, seed=0):
    """Uniform grey background with random detail in the top-left quadrant."""
    img = np.full((height, width, 3), 0.5, dtype=np.float32)
    rng = np.random.default_rng(seed)
    img[: height // 2, : width // 2] = rng.random((height // 2, width // 2, 3))
    return img


def write_image(path, arr):
    Image.fromarray(np.round(np.asarray(arr) * 255).astype(np.uint8)).save(path)
    return path


@pytest.fixture
def toy_cfg():
    return toy_config()


@pytest.fixture
def toy_params(toy_cfg):
    return build_params(toy_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
