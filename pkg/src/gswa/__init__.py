"""Sub-image weight allocation for tiled high-resolution vision encoders."""

from .config import EncoderConfig, GswaConfig, ProjectorConfig, RunConfig, TilerConfig
from .params import ParamStore

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "GswaConfig",
    "ParamStore",
    "ProjectorConfig",
    "RunConfig",
    "TilerConfig",
]
