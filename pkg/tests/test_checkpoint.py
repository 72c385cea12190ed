"""Checkpoint container round-trips and version handling."""

import numpy as np
import pytest
import torch

from bamm.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_exact(tmp_path):
    path = tmp_path / "model.ckpt"
    rng = np.random.default_rng(3)
    tensors = {
        "weights": rng.normal(size=(4, 7)).astype(np.float32),
        "bias": rng.normal(size=(7,)).astype(np.float32),
        "scalar": np.float32(2.5),
        "torch_tensor": torch.randn(3, 2),
    }
    config = {"kind": "demo", "steps": 12, "nested": {"lr": 2e-4}}
    save_checkpoint(path, config, tensors)
    loaded_config, loaded = load_checkpoint(path)
    assert loaded_config == config
    np.testing.assert_array_equal(loaded["weights"], tensors["weights"])
    np.testing.assert_array_equal(loaded["bias"], tensors["bias"])
    assert loaded["scalar"] == np.float32(2.5)
    np.testing.assert_array_equal(loaded["torch_tensor"], tensors["torch_tensor"].numpy())


def test_float64_is_stored_as_f32(tmp_path):
    path = tmp_path / "m.ckpt"
    value = np.array([1.23456789012345], dtype=np.float64)
    save_checkpoint(path, {}, {"v": value})
    _, loaded = load_checkpoint(path)
    assert loaded["v"].dtype == np.float32
    np.testing.assert_array_equal(loaded["v"], value.astype(np.float32))


def test_missing_file_raises(tmp_path):
    with pytest.raises(CheckpointError, match="missing"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_bad_version_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b'{"format_version": 99, "config": {}, "tensors": {}}\n')
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(path)


def test_corrupt_header_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"not json at all\n")
    with pytest.raises(CheckpointError, match="header"):
        load_checkpoint(path)
