import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from abmkit import checkpoint
from abmkit.checkpoint import CheckpointError


def test_header_layout(tmp_path):
    path = tmp_path / "t.abmt"
    checkpoint.write_tensor(path, np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == b"ABMT"
    assert struct.unpack_from("<HH", raw, 4) == (1, 2)
    assert struct.unpack_from("<2Q", raw, 8) == (2, 3)
    assert np.frombuffer(raw[24:], "<f8").tolist() == [0, 1, 2, 3, 4, 5]


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4),
                  elements=st.floats(-1e6, 1e6)))
def test_round_trip_f64(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("ck") / "t.abmt"
    checkpoint.write_tensor(path, arr)
    assert np.array_equal(checkpoint.read_tensor(path), arr)


def test_f32_payload(tmp_path):
    path = tmp_path / "t.abmt"
    checkpoint.write_tensor(path, [1.5, 2.25], dtype="f32")
    assert path.stat().st_size == 8 + 8 + 2 * 4
    np.testing.assert_array_equal(checkpoint.read_tensor(path, "f32"), [1.5, 2.25])


def test_manifest_round_trip(tmp_path):
    tensors = {"w": np.ones((2, 2)), "b": np.zeros(2)}
    path = checkpoint.save(tmp_path / "ck", tensors, extra={"epoch": 3})
    manifest = json.loads(path.read_text())
    assert manifest["tensors"]["w"] == {"file": "w.abmt", "shape": [2, 2], "dtype": "f64"}
    arrays, man = checkpoint.load(path)
    assert man["epoch"] == 3
    assert set(arrays) == {"w", "b"}


def test_missing_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        checkpoint.load(tmp_path / "manifest.json")


def test_bad_magic(tmp_path):
    path = tmp_path / "t.abmt"
    path.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        checkpoint.read_tensor(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.abmt"
    checkpoint.write_tensor(path, np.ones(4))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        checkpoint.read_tensor(path)
