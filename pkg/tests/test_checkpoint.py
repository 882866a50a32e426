import numpy as np
import pytest

from evderain.checkpoint import load_checkpoint, save_checkpoint
from evderain.errors import ParseError


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "enc0/b0/out_w": rng.normal(size=(8, 8)),
        "head/b": rng.normal(size=2),
        "scalar": np.array(3.5),
    }
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, meta={"step": 7})
    loaded, meta = load_checkpoint(path)
    assert meta == {"step": 7}
    assert set(loaded) == set(tensors)
    for k in tensors:
        assert np.array_equal(loaded[k], np.asarray(tensors[k], dtype=np.float64))


def test_byte_determinism(tmp_path):
    tensors = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones(4)}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_checkpoint(p1, tensors, meta={"k": 1})
    save_checkpoint(p2, dict(reversed(list(tensors.items()))), meta={"k": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_little_endian_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"v": np.array([1.0])}, meta={})
    raw = path.read_bytes()
    assert raw[:4] == b"EVC1"
    hlen = int.from_bytes(raw[4:8], "little")
    assert raw[8 + hlen:8 + hlen + 8] == np.float64(1.0).tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ParseError, match="magic"):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, {"v": np.ones(8)}, meta={})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ParseError, match="past end"):
        load_checkpoint(path)
