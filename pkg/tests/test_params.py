import json

import numpy as np
import pytest

from gswa.config import GswaConfig, RunConfig
from gswa.errors import ConfigError, ParamFormatError
from gswa.params import ParamStore, encoder_shapes, gswa_shapes, init_params
from gswa.pipeline import build_params, param_shapes

from conftest import toy_config


def test_roundtrip_bitwise(tmp_path, toy_params):
    toy_params.save(tmp_path / "p.json")
    back = ParamStore.load(tmp_path / "p.json")
    assert list(back) == list(toy_params)
    for k in toy_params:
        assert back[k].shape == toy_params[k].shape
        assert back[k].tobytes() == toy_params[k].tobytes()
    back.save(tmp_path / "q.json")
    assert (tmp_path / "q.bin").read_bytes() == (tmp_path / "p.bin").read_bytes()


def test_blob_is_little_endian_float32(tmp_path):
    store = ParamStore([("a", np.array([1.0, -2.5], np.float32))])
    store.save(tmp_path / "p.json")
    assert (tmp_path / "p.bin").read_bytes() == np.array([1.0, -2.5], "<f4").tobytes()
    manifest = json.loads((tmp_path / "p.json").read_text())
    assert manifest["tensors"] == [{"name": "a", "shape": [2], "offset": 0}]


def test_same_seed_same_bytes(tmp_path):
    cfg = toy_config(seed=9)
    build_params(cfg).save(tmp_path / "a.json")
    build_params(cfg).save(tmp_path / "b.json")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    build_params(toy_config(seed=10)).save(tmp_path / "c.json")
    assert (tmp_path / "a.bin").read_bytes() != (tmp_path / "c.bin").read_bytes()


def test_init_ranges():
    cfg = toy_config()
    p = build_params(cfg)
    assert set(p) == set(param_shapes(cfg))
    w = p["enc.patch.w"]
    bound = 1.0 / np.sqrt(w.shape[0])
    assert np.abs(w).max() <= bound
    assert np.all(p["gswa.block0.ln1.g"] == 1.0) and np.all(p["gswa.block0.ln1.b"] == 0.0)
    assert abs(float(p["enc.pos"].std()) - 0.02) < 0.01


def test_cosine_strategy_has_no_allocator_params():
    assert gswa_shapes(GswaConfig(strategy="cosine-similarity"), 32) == {}
    names = gswa_shapes(GswaConfig(dim=8, blocks=1, heads=2), 32)
    assert "gswa.extract.q" in names and "gswa.extract.k" in names
    assert "gswa.proj.w" in names and names["gswa.proj.w"] == (32, 8)


def _corrupt(tmp_path, store, edit):
    store.save(tmp_path / "p.json")
    m = json.loads((tmp_path / "p.json").read_text())
    edit(m)
    (tmp_path / "p.json").write_text(json.dumps(m))
    return tmp_path / "p.json"


def test_corrupt_shape_names_tensor(tmp_path):
    store = init_params(encoder_shapes(toy_config().encoder), 0)

    def edit(m):
        m["tensors"][2]["shape"] = [999]

    with pytest.raises(ParamFormatError, match=m_name(store, 2)):
        ParamStore.load(_corrupt(tmp_path, store, edit))


def test_corrupt_offset_names_tensor(tmp_path):
    store = init_params(encoder_shapes(toy_config().encoder), 0)

    def edit(m):
        m["tensors"][1]["offset"] += 4

    with pytest.raises(ParamFormatError, match=m_name(store, 1)):
        ParamStore.load(_corrupt(tmp_path, store, edit))


def test_bad_manifests(tmp_path):
    (tmp_path / "x.json").write_text("{nope")
    with pytest.raises(ParamFormatError):
        ParamStore.load(tmp_path / "x.json")
    (tmp_path / "y.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ParamFormatError):
        ParamStore.load(tmp_path / "y.json")
    with pytest.raises(ParamFormatError):
        ParamStore.load(tmp_path / "missing.json")


def test_require(toy_params):
    toy_params.require(param_shapes(toy_config()))
    with pytest.raises(ParamFormatError, match="gswa.proj.w"):
        toy_params.require({"gswa.proj.w": (1, 1)})
    with pytest.raises(ParamFormatError, match="nothing"):
        toy_params.require({"nothing": (1,)})


def test_run_config_roundtrip(tmp_path):
    cfg = toy_config(strategy="cross-attn", seed=5)
    (tmp_path / "c.json").write_text(json.dumps(cfg.to_dict()))
    assert RunConfig.load(tmp_path / "c.json") == cfg
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"gswa": {"bogus": 1}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"tiler": {"tile_size": 64}})


def m_name(store, i):
    return list(store)[i].replace(".", r"\.")
