"""Named-tensor parameter store with seeded init and a manifest+blob file format.

On disk a store is two files: a JSON manifest (``params.json``) and a raw
blob of little-endian float32 values (``params.bin`` by default, named in the
manifest).  Each manifest entry gives ``name``, ``shape`` and the byte
``offset`` of the tensor inside the blob; tensors are packed back to back in
manifest order.
"""

from __future__ import annotations

import json
import os
import tempfile
import zlib
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Iterable, Iterator, Mapping, Tuple

import numpy as np

from .config import EncoderConfig, GswaConfig, ProjectorConfig
from .errors import ParamFormatError

FORMAT = "gswa-params/1"
_DTYPE = np.dtype("<f4")


class ParamStore(Mapping[str, np.ndarray]):
    """Ordered mapping from parameter name to float32 array."""

    def __init__(self, items: Iterable[Tuple[str, np.ndarray]] = ()):
        self._data: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, arr in items:
            self[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._data[name]
        except KeyError:
            raise KeyError(f"missing parameter {name!r}") from None

    def __setitem__(self, name: str, arr) -> None:
        self._data[name] = np.ascontiguousarray(arr, dtype=np.float32)

    def __iter__(self) -> Iterator[str]:
        return iter(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def update(self, other: Mapping[str, np.ndarray]) -> None:
        for k, v in other.items():
            self[k] = v

    def with_prefix(self, prefix: str) -> Dict[str, np.ndarray]:
        return {k: v for k, v in self._data.items() if k.startswith(prefix)}

    def num_values(self) -> int:
        return sum(v.size for v in self._data.values())

    def save(self, path) -> Tuple[Path, Path]:
        """Write manifest to ``path`` and blob next to it (``<stem>.bin``)."""
        path = Path(path)
        blob_path = path.with_suffix(".bin")
        entries = []
        chunks = []
        offset = 0
        for name, arr in self._data.items():
            raw = arr.astype(_DTYPE, copy=False).tobytes(order="C")
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        manifest = {
            "format": FORMAT,
            "dtype": "float32-le",
            "blob": blob_path.name,
            "size": offset,
            "tensors": entries,
        }
        atomic_write(blob_path, b"".join(chunks))
        atomic_write(path, (json.dumps(manifest, indent=1) + "\n").encode())
        return path, blob_path

    @classmethod
    def load(cls, path) -> "ParamStore":
        path = Path(path)
        try:
            manifest = json.loads(path.read_text())
        except (OSError, UnicodeDecodeError) as exc:
            raise ParamFormatError(f"cannot read manifest {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ParamFormatError(f"manifest {path} is not valid JSON: {exc}") from None
        if not isinstance(manifest, dict) or manifest.get("format") != FORMAT:
            raise ParamFormatError(f"{path}: not a {FORMAT} manifest")
        blob_path = path.parent / manifest.get("blob", path.with_suffix(".bin").name)
        try:
            blob = blob_path.read_bytes()
        except OSError as exc:
            raise ParamFormatError(f"cannot read blob {blob_path}: {exc}") from None

        entries = []
        for entry in manifest.get("tensors", []):
            name = entry.get("name", "?") if isinstance(entry, dict) else "?"
            try:
                shape = tuple(int(s) for s in entry["shape"])
                offset = int(entry["offset"])
            except (KeyError, TypeError, ValueError):
                raise ParamFormatError(f"tensor {name!r}: malformed manifest entry") from None
            if any(s < 1 for s in shape):
                raise ParamFormatError(f"tensor {name!r}: non-positive extent in {shape}")
            entries.append((name, shape, offset))

        sizes = [int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize for _, shape, _ in entries]
        starts = [int(x) for x in np.cumsum([0] + sizes[:-1])] if entries else []
        if sum(sizes) == len(blob):
            # sizes account for the blob exactly, so any mismatch is an offset
            for (name, shape, offset), start in zip(entries, starts):
                if offset != start:
                    raise ParamFormatError(
                        f"tensor {name!r}: offset {offset}, expected {start} from the "
                        f"shapes before it"
                    )
        else:
            # a declared shape is wrong: find the first tensor whose size does
            # not match the room up to the next offset (or the blob end)
            for i, ((name, shape, offset), size) in enumerate(zip(entries, sizes)):
                end = entries[i + 1][2] if i + 1 < len(entries) else len(blob)
                if offset + size != end:
                    raise ParamFormatError(
                        f"tensor {name!r}: shape {list(shape)} needs {size} bytes at offset "
                        f"{offset} but {end - offset} are available (blob {len(blob)} bytes)"
                    )
            raise ParamFormatError(
                f"{blob_path}: {len(blob) - sum(sizes)} bytes not covered by the manifest"
            )

        store = cls()
        for (name, shape, offset), size in zip(entries, sizes):
            if name in store:
                raise ParamFormatError(f"tensor {name!r}: duplicated")
            arr = np.frombuffer(blob, dtype=_DTYPE, count=size // 4, offset=offset)
            store[name] = arr.reshape(shape)
        return store

    def require(self, shapes: Mapping[str, Tuple[int, ...]]) -> None:
        """Check every name in ``shapes`` is present with that shape."""
        for name, shape in shapes.items():
            if name not in self._data:
                raise ParamFormatError(f"tensor {name!r}: missing")
            if self._data[name].shape != tuple(shape):
                raise ParamFormatError(
                    f"tensor {name!r}: shape {list(self._data[name].shape)}, "
                    f"expected {list(shape)}"
                )


def atomic_write(path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- shapes ---------------------------------------------------------------


def block_shapes(prefix: str, dim: int, mlp_ratio: int) -> Dict[str, Tuple[int, ...]]:
    hidden = dim * mlp_ratio
    return {
        f"{prefix}.ln1.g": (dim,),
        f"{prefix}.ln1.b": (dim,),
        f"{prefix}.attn.q": (dim, dim),
        f"{prefix}.attn.k": (dim, dim),
        f"{prefix}.attn.v": (dim, dim),
        f"{prefix}.attn.o": (dim, dim),
        f"{prefix}.ln2.g": (dim,),
        f"{prefix}.ln2.b": (dim,),
        f"{prefix}.ffn.w1": (dim, hidden),
        f"{prefix}.ffn.b1": (hidden,),
        f"{prefix}.ffn.w2": (hidden, dim),
        f"{prefix}.ffn.b2": (dim,),
    }


def encoder_shapes(cfg: EncoderConfig) -> Dict[str, Tuple[int, ...]]:
    patch_in = cfg.patch_size * cfg.patch_size * 3
    shapes = {
        "enc.patch.w": (patch_in, cfg.dim),
        "enc.patch.b": (cfg.dim,),
        "enc.cls": (cfg.dim,),
        "enc.pos": (cfg.num_patches + 1, cfg.dim),
    }
    for i in range(cfg.depth):
        shapes.update(block_shapes(f"enc.block{i}", cfg.dim, cfg.mlp_ratio))
    return shapes


def gswa_shapes(cfg: GswaConfig, cls_dim: int) -> Dict[str, Tuple[int, ...]]:
    """Allocator parameters; empty for the parameter-free cosine strategy."""
    if cfg.strategy == "cosine-similarity":
        return {}
    shapes = {"gswa.proj.w": (cls_dim, cfg.dim), "gswa.proj.b": (cfg.dim,)}
    for i in range(cfg.blocks):
        shapes.update(block_shapes(f"gswa.block{i}", cfg.dim, cfg.mlp_ratio))
    shapes["gswa.extract.q"] = (cfg.dim, cfg.dim)
    shapes["gswa.extract.k"] = (cfg.dim, cfg.dim)
    return shapes


def projector_shapes(cfg: ProjectorConfig, in_dim: int) -> Dict[str, Tuple[int, ...]]:
    return {
        "mlp.fc1.w": (in_dim, cfg.dim),
        "mlp.fc1.b": (cfg.dim,),
        "mlp.fc2.w": (cfg.dim, cfg.dim),
        "mlp.fc2.b": (cfg.dim,),
    }


# -- init -----------------------------------------------------------------


def _rng(seed: int, name: str) -> np.random.Generator:
    # per-tensor stream: values do not depend on which other tensors exist
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


def init_tensor(name: str, shape: Tuple[int, ...], seed: int, fan_in: int = 0) -> np.ndarray:
    parts = name.split(".")
    leaf, parent = parts[-1], parts[-2] if len(parts) > 1 else ""
    if parent.startswith("ln"):
        fill = 1.0 if leaf == "g" else 0.0
        return np.full(shape, fill, dtype=np.float32)
    rng = _rng(seed, name)
    if name.endswith((".pos", ".cls")):
        return rng.normal(0.0, 0.02, size=shape).astype(np.float32)
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def init_params(shapes: Mapping[str, Tuple[int, ...]], seed: int) -> ParamStore:
    """Seeded init: linear weights and biases uniform in +-1/sqrt(fan_in),
    layer-norm gains 1 and biases 0, cls/positional embeddings N(0, 0.02)."""
    store = ParamStore()
    fan_ins = {}
    for name, shape in shapes.items():
        if len(shape) == 2:
            fan_ins[name.rsplit(".", 1)[0]] = shape[0]
    for name, shape in shapes.items():
        stem = name.rsplit(".", 1)[0]
        fan_in = shape[0] if len(shape) == 2 else fan_ins.get(stem, shape[0])
        if name.endswith((".b1", ".b2")):
            w = name[:-2] + "w" + name[-1]
            fan_in = shapes[w][0]
        store[name] = init_tensor(name, shape, seed, fan_in)
    return store
