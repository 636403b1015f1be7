import json
import struct

import numpy as np
import pytest

from scrl.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from scrl.errors import CheckpointError


@pytest.fixture
def params():
    rng = np.random.default_rng(0)
    return [("enc.w0", rng.standard_normal((3, 4))), ("bias", np.zeros((1, 4))),
            ("empty", np.zeros((0, 2)))]


def test_roundtrip(tmp_path, params):
    header = {"config": {"k": 7}, "num_nodes": 10, "num_features": 3, "num_classes": 2}
    save_checkpoint(tmp_path / "m.ckpt", header, params)
    got_header, got = load_checkpoint(tmp_path / "m.ckpt")
    assert got_header == header
    assert list(got) == [name for name, _ in params]
    for name, value in params:
        np.testing.assert_array_equal(got[name], value)
        assert got[name].flags.writeable


def test_byte_layout(tmp_path):
    save_checkpoint(tmp_path / "m.ckpt", {"a": 1}, [("w", np.array([[1.5, -2.0]]))])
    raw = (tmp_path / "m.ckpt").read_bytes()
    blob = json.dumps({"a": 1}).encode()
    expected = (MAGIC + struct.pack("<I", len(blob)) + blob + struct.pack("<I", 1)
                + struct.pack("<I", 1) + b"w" + struct.pack("<II", 1, 2)
                + struct.pack("<dd", 1.5, -2.0))
    assert raw == expected


def test_identical_inputs_identical_bytes(tmp_path, params):
    save_checkpoint(tmp_path / "a", {"y": 1, "x": 2}, params)
    save_checkpoint(tmp_path / "b", {"x": 2, "y": 1}, params)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


@pytest.mark.parametrize("cut", [3, 10, 40, -1])
def test_truncated(tmp_path, params, cut):
    save_checkpoint(tmp_path / "m.ckpt", {}, params)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "m.ckpt").write_bytes(raw[:cut])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "m.ckpt")


def test_bad_magic_and_trailing_bytes(tmp_path, params):
    save_checkpoint(tmp_path / "m.ckpt", {}, params)
    raw = (tmp_path / "m.ckpt").read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXX1" + raw[5:])
    with pytest.raises(CheckpointError, match="not an SCRL1"):
        load_checkpoint(tmp_path / "bad")
    (tmp_path / "long").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long")


def test_rejects_non_matrix(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.ckpt", {}, [("v", np.zeros(3))])
