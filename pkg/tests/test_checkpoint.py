"""Checkpoint container tests: exact roundtrips, determinism, malformed files."""

import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ndbench.backbones import ModelConfig, init_params, param_shapes
from ndbench.checkpoint import (
    Checkpoint,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from ndbench.datapipe import NormStats
from ndbench.tensor import Tensor


def tiny_checkpoint(seed=0):
    cfg = ModelConfig(kind="gru", input_channels=3, embed=4, layers=1)
    params = init_params(cfg, seed=seed)
    stats = NormStats(
        count_mean=np.array([0.1, -0.2, 0.3]),
        count_std=np.array([1.0, 2.0, 0.5]),
        vel_mean=np.array([0.01, -0.02]),
        vel_std=np.array([0.4, 0.6]),
    )
    return Checkpoint(
        config=cfg,
        params=params,
        norm_stats={"sess-a": stats},
        provenance={"seed": seed, "data_hash": "abc123", "epochs_run": 7},
    )


def test_roundtrip_is_exact(tmp_path):
    ckpt = tiny_checkpoint()
    path = save_checkpoint(ckpt, tmp_path / "model.ckpt")
    loaded = load_checkpoint(path)
    assert loaded.config == ckpt.config
    assert set(loaded.params) == set(ckpt.params)
    for name in ckpt.params:
        assert loaded.params[name].data.dtype == np.float32
        assert loaded.params[name].requires_grad
        np.testing.assert_array_equal(loaded.params[name].data, ckpt.params[name].data)
    stats = loaded.norm_stats["sess-a"]
    np.testing.assert_array_equal(stats.count_mean, ckpt.norm_stats["sess-a"].count_mean)
    np.testing.assert_array_equal(stats.vel_std, ckpt.norm_stats["sess-a"].vel_std)
    assert loaded.provenance == ckpt.provenance


def test_save_is_byte_deterministic(tmp_path):
    ckpt = tiny_checkpoint()
    a = save_checkpoint(ckpt, tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(ckpt, tmp_path / "b.ckpt").read_bytes()
    assert a == b


def test_save_load_save_is_identity(tmp_path):
    ckpt = tiny_checkpoint(seed=5)
    first = save_checkpoint(ckpt, tmp_path / "a.ckpt").read_bytes()
    second = save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt").read_bytes()
    assert first == second


def test_missing_file_raises():
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint("/nonexistent/model.ckpt")


def test_wrong_format_field_raises(tmp_path):
    ckpt = tiny_checkpoint()
    path = save_checkpoint(ckpt, tmp_path / "model.ckpt")
    blob = path.read_bytes()
    (header_len,) = struct.unpack("<I", blob[:4])
    header = json.loads(blob[4 : 4 + header_len])
    header["format"] = "something-else"
    new_header = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    (tmp_path / "bad.ckpt").write_bytes(struct.pack("<I", len(new_header)) + new_header + blob[4 + header_len :])
    with pytest.raises(CheckpointError, match="expected format"):
        load_checkpoint(tmp_path / "bad.ckpt")


def test_truncated_payload_raises(tmp_path):
    ckpt = tiny_checkpoint()
    path = save_checkpoint(ckpt, tmp_path / "model.ckpt")
    blob = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")


def test_garbage_header_raises(tmp_path):
    payload = b"\xff\xff\xff"
    (tmp_path / "garbage.ckpt").write_bytes(struct.pack("<I", len(payload)) + payload)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "garbage.ckpt")


def test_validate_rejects_missing_and_misshapen_groups():
    ckpt = tiny_checkpoint()
    name = next(iter(ckpt.params))
    missing = dict(ckpt.params)
    del missing[name]
    with pytest.raises(CheckpointError, match="missing"):
        Checkpoint(ckpt.config, missing, ckpt.norm_stats).validate()
    wrong = dict(ckpt.params)
    wrong[name] = Tensor(np.zeros((2, 2), dtype=np.float32), requires_grad=True)
    with pytest.raises(CheckpointError, match="shape"):
        Checkpoint(ckpt.config, wrong, ckpt.norm_stats).validate()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_arbitrary_float32_values_survive_roundtrip(tmp_path_factory, seed):
    # extreme magnitudes included: the payload is raw float32, not text
    tmp = tmp_path_factory.mktemp("ckpt")
    cfg = ModelConfig(kind="gru", input_channels=2, embed=3, layers=1)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        scale = np.float32(10.0) ** rng.integers(-30, 30)
        params[name] = Tensor(
            (rng.standard_normal(shape) * scale).astype(np.float32), requires_grad=True
        )
    ckpt = Checkpoint(cfg, params, {}, {"seed": int(seed)})
    loaded = load_checkpoint(save_checkpoint(ckpt, tmp / "x.ckpt"))
    for name in params:
        np.testing.assert_array_equal(loaded.params[name].data, params[name].data)
