"""Model assembly: configuration validation, resolution adaptation, the
hourglass forward pass, and the checkpoint container."""
import dataclasses

import numpy as np
import pytest

from hdit.costs import count_hdit
from hdit.model import (CheckpointError, HDiTModel, ModelConfig,
                        adapt_resolution, build_model, load_checkpoint,
                        preset_ffhq_1024, preset_imagenet_128,
                        preset_imagenet_128_global, preset_imagenet_256,
                        save_checkpoint)
from hdit.rng import INIT, NOISE, RngStream
from hdit.tensor import Tensor

from conftest import randn


def _param_count(model) -> int:
    return sum(p.data.size for _, p in model.named_parameters())


# ----------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------
def test_presets_validate():
    for preset in (preset_imagenet_128, preset_imagenet_128_global,
                   preset_ffhq_1024, preset_imagenet_256):
        cfg = preset()
        assert cfg.core_size() == 16


def test_validate_rejects_bad_configs(toy_cfg):
    bad = [
        dataclasses.replace(toy_cfg, widths=[32, 16]),        # decreasing
        dataclasses.replace(toy_cfg, depths=[1]),             # length mismatch
        dataclasses.replace(toy_cfg, depths=[0, 1]),          # depth < 1
        dataclasses.replace(toy_cfg, widths=[12, 32]),        # width % head_dim
        dataclasses.replace(toy_cfg, head_dim=6),             # head_dim % 4
        dataclasses.replace(toy_cfg, kernel_size=4),          # even kernel
        dataclasses.replace(toy_cfg, attn_kinds=["dense", "global"]),
        dataclasses.replace(toy_cfg, input_size=18),          # % stride
        dataclasses.replace(toy_cfg, allow_nonstandard_core=False),
    ]
    for cfg in bad:
        with pytest.raises(ValueError):
            cfg.validate()


def test_adapt_resolution_structure():
    base = preset_imagenet_128()
    up = adapt_resolution(base, 512)
    assert up.input_size == 512
    assert up.widths == [384, 384, 384, 768]
    assert up.depths == [2, 2, 2, 11]
    assert up.attn_kinds == ["neighborhood", "neighborhood",
                             "neighborhood", "global"]
    assert up.core_size() == 16
    same = adapt_resolution(base, 128)
    assert same.widths == base.widths and same.depths == base.depths


def test_adapt_resolution_rejects_bad_targets():
    base = preset_imagenet_128()
    with pytest.raises(ValueError):
        adapt_resolution(base, 64)       # downscale
    with pytest.raises(ValueError):
        adapt_resolution(base, 192)      # not a multiple
    with pytest.raises(ValueError):
        adapt_resolution(base, 384)      # multiple but not a power of two


# ----------------------------------------------------------------------
# builder vs cost model
# ----------------------------------------------------------------------
def test_imagenet_128_parameter_count_matches_cost_model():
    cfg = preset_imagenet_128()
    model = build_model(cfg, RngStream(0, INIT))
    assert _param_count(model) == count_hdit(cfg).params == 103_545_805


def test_toy_parameter_count_matches_cost_model(toy_cfg):
    model = build_model(toy_cfg, RngStream(1, INIT))
    assert _param_count(model) == count_hdit(toy_cfg).params


# ----------------------------------------------------------------------
# forward pass
# ----------------------------------------------------------------------
def test_forward_shape_and_dtype(toy_cfg):
    model = build_model(toy_cfg, RngStream(2, INIT))
    img = Tensor(randn(3, (2, 16, 16, 3), dtype=np.float32))
    out = model(img, np.array([1.0, 2.0]), np.array([0, 1]))
    assert out.shape == (2, 16, 16, 3)
    assert out.data.dtype == np.float32


def test_forward_rejects_wrong_stride(toy_cfg):
    model = build_model(toy_cfg, RngStream(4, INIT))
    img = Tensor(randn(5, (1, 18, 18, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        model(img, np.array([1.0]))


def test_output_zero_at_construction(toy_cfg):
    """Every residual branch and the output head are zero-initialized, so a
    fresh model maps any input to exactly zero."""
    model = build_model(toy_cfg, RngStream(6, INIT))
    img = Tensor(randn(7, (2, 16, 16, 3), dtype=np.float32))
    out = model(img, np.array([0.3, 30.0]), np.array([1, 0]))
    np.testing.assert_array_equal(out.data, 0.0)


def test_dense_and_windowed_forward_agree(toy_cfg):
    model = build_model(toy_cfg, RngStream(8, INIT), dtype=np.float64)
    s = RngStream(9, INIT)
    for _, p in model.named_parameters():
        p.data = p.data + 0.02 * s.normal(p.data.shape)
    img = Tensor(randn(10, (2, 16, 16, 3)))
    sig = np.array([0.5, 5.0])
    ids = np.array([0, 1])
    a = model(img, sig, ids, attn_mode="dense").data
    b = model(img, sig, ids, attn_mode="windowed").data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_forward_deterministic(toy_cfg):
    model = build_model(toy_cfg, RngStream(11, INIT))
    img = Tensor(randn(12, (1, 16, 16, 3), dtype=np.float32))
    a = model(img, np.array([1.0]), np.array([0])).data
    b = model(img, np.array([1.0]), np.array([0])).data
    np.testing.assert_array_equal(a, b)


def test_seed_changes_parameters(toy_cfg):
    m1 = build_model(toy_cfg, RngStream(13, INIT))
    m2 = build_model(toy_cfg, RngStream(14, INIT))
    diffs = sum(not np.array_equal(p.data, q.data)
                for (_, p), (_, q) in zip(m1.named_parameters(),
                                          m2.named_parameters()))
    assert diffs > 0


# ----------------------------------------------------------------------
# state round trips
# ----------------------------------------------------------------------
def test_state_dict_round_trip(toy_cfg):
    src = build_model(toy_cfg, RngStream(15, INIT))
    dst = build_model(toy_cfg, RngStream(16, INIT))
    dst.load_state_dict(src.state_dict())
    img = Tensor(randn(17, (1, 16, 16, 3), dtype=np.float32))
    np.testing.assert_array_equal(
        src(img, np.array([1.0]), np.array([1])).data,
        dst(img, np.array([1.0]), np.array([1])).data)


def test_load_state_dict_rejects_mismatch(toy_cfg):
    model = build_model(toy_cfg, RngStream(18, INIT))
    state = model.state_dict()
    first = next(iter(state))
    short = dict(state)
    del short[first]
    with pytest.raises(KeyError):
        model.load_state_dict(short)
    bad = dict(state)
    bad[first] = np.zeros((1, 1), dtype=np.float32)
    with pytest.raises(ValueError):
        model.load_state_dict(bad)


# ----------------------------------------------------------------------
# checkpoint container
# ----------------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    path = tmp_path / "ck.bin"
    sections = {
        "model": {"a": randn(19, (3, 4), dtype=np.float32),
                  "b.c": randn(20, (5,), dtype=np.float64)},
        "opt": {"step": np.array([7], dtype=np.int64),
                "bits": np.array([2 ** 63], dtype=np.uint64)},
    }
    save_checkpoint(path, sections)
    with open(path, "rb") as fh:
        assert fh.read(4) == b"HDIT"
    out = load_checkpoint(path)
    assert set(out) == {"model", "opt"}
    for sec in sections:
        assert set(out[sec]) == set(sections[sec])
        for name in sections[sec]:
            got, want = out[sec][name], sections[sec][name]
            assert got.dtype == want.dtype
            np.testing.assert_array_equal(got, want)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"notacheckpointatall")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_bad_version(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"model": {"x": np.zeros(2, dtype=np.float32)}})
    blob = bytearray(path.read_bytes())
    blob[4] = 99
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_corrupt_manifest(tmp_path):
    path = tmp_path / "ck.bin"
    save_checkpoint(path, {"model": {"x": np.zeros(2, dtype=np.float32)}})
    blob = bytearray(path.read_bytes())
    blob[20] = 0xFF  # stomp inside the JSON manifest
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.bin")


def test_checkpoint_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "ck.bin",
                        {"model": {"x": np.zeros(2, dtype=np.float16)}})


def test_model_checkpoint_bit_round_trip(toy_cfg, tmp_path):
    model = build_model(toy_cfg, RngStream(21, INIT))
    s = RngStream(22, NOISE)
    for _, p in model.named_parameters():
        p.data = p.data + 0.1 * s.normal(p.data.shape).astype(p.data.dtype)
    path = tmp_path / "model.bin"
    save_checkpoint(path, {"model": model.state_dict()})
    clone = build_model(toy_cfg, RngStream(23, INIT))
    clone.load_state_dict(load_checkpoint(path)["model"])
    for (_, p), (_, q) in zip(model.named_parameters(),
                              clone.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data)
