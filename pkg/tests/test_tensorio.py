"""Round-trip and format checks for the binary tensor container."""

import numpy as np
import pytest

from melflow import tensorio


def test_roundtrip_preserves_values_and_dtypes(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a": rng.normal(size=(3, 4)).astype(np.float32),
        "b.weight": rng.normal(size=(2, 2, 2)),
        "scalarish": np.array([1.5], dtype=np.float64),
    }
    path = tmp_path / "t.bin"
    tensorio.save_tensors(path, tensors)
    out = tensorio.load_tensors(path)
    assert set(out) == set(tensors)
    for k in tensors:
        assert out[k].dtype == tensors[k].dtype
        np.testing.assert_array_equal(out[k], tensors[k])


def test_zero_rank_tensor(tmp_path):
    path = tmp_path / "s.bin"
    tensorio.save_tensors(path, {"s": np.array(2.5, dtype=np.float32)})
    out = tensorio.load_tensors(path)
    assert out["s"].shape == ()
    assert out["s"] == np.float32(2.5)


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(tensorio.TensorFormatError, match="magic"):
        tensorio.load_tensors(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.bin"
    tensorio.save_tensors(path, {"a": np.ones((4, 4), dtype=np.float32)})
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(tensorio.TensorFormatError, match="truncated"):
        tensorio.load_tensors(path)


def test_integer_input_rejected(tmp_path):
    with pytest.raises(tensorio.TensorFormatError, match="dtype"):
        tensorio.save_tensors(tmp_path / "i.bin", {"i": np.arange(4)})


def test_layout_is_little_endian_with_documented_header(tmp_path):
    path = tmp_path / "t.bin"
    arr = np.array([[1.0, 2.0]], dtype=np.float32)
    tensorio.save_tensors(path, {"x": arr})
    raw = path.read_bytes()
    assert raw[:8] == b"MFTENSR1"
    # count=1 | name_len=1 | 'x' | rank=2 | dims 1,2 | tag 0 | payload
    assert raw[8:12] == (1).to_bytes(4, "little")
    assert raw[12:14] == (1).to_bytes(2, "little")
    assert raw[14:15] == b"x"
    assert raw[15] == 2
    assert int.from_bytes(raw[16:20], "little") == 1
    assert int.from_bytes(raw[20:24], "little") == 2
    assert raw[24] == 0
    np.testing.assert_array_equal(np.frombuffer(raw[25:], dtype="<f4"), [1.0, 2.0])
