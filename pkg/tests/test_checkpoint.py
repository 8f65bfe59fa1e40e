import numpy as np
import pytest

from pxiq.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_roundtrip(tmp_path, rng):
    params = {
        "analysis.0.kernel": rng.normal(size=(4, 3, 5, 5)).astype(np.float32),
        "analysis.0.bias": rng.normal(size=4).astype(np.float32),
        "entropy.matrix.0": rng.normal(size=(4, 3, 1)).astype(np.float64),
        "scalar": np.float32(2.5).reshape(()),
    }
    path = tmp_path / "model.pxck"
    save_checkpoint(path, params)
    loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for name in params:
        got = loaded[name]
        assert got.dtype == params[name].dtype
        np.testing.assert_array_equal(got, params[name])


def test_rejects_wrong_magic(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "x.pxck", {"a": np.zeros(3, dtype=np.int32)})


def test_bytes_are_deterministic(tmp_path, rng):
    params = {"w": rng.normal(size=(3, 3)).astype(np.float32)}
    save_checkpoint(tmp_path / "a.pxck", params)
    save_checkpoint(tmp_path / "b.pxck", params)
    assert (tmp_path / "a.pxck").read_bytes() == (tmp_path / "b.pxck").read_bytes()
