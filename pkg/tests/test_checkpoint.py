import numpy as np
import pytest

from tar3d.backend.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from tar3d.backend.nn import ParameterStore


def test_roundtrip_bitexact(tmp_path):
    arrays = {
        "a.w": np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32),
        "b": np.random.default_rng(1).normal(size=(7,)),
        "counts": np.arange(5, dtype=np.int64),
    }
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays)
    back = load_checkpoint(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        assert np.array_equal(back[k], arrays[k])


def test_rewrite_is_deterministic(tmp_path):
    arrays = {"x": np.ones((2, 2), dtype=np.float32)}
    save_checkpoint(tmp_path / "a.ckpt", arrays)
    save_checkpoint(tmp_path / "b.ckpt", arrays)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_truncated(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, {"x": np.ones(100, dtype=np.float32)})
    raw = p.read_bytes()
    p.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(p)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_store_load_state_validates(tmp_path):
    store = ParameterStore()
    store.param("w", np.zeros((2, 2)))
    with pytest.raises(KeyError):
        store.load_state({})
    with pytest.raises(ValueError, match="shape"):
        store.load_state({"w": np.zeros((3, 3))})
