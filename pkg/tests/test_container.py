import struct

import numpy as np
import pytest

from segquant.container import (
    FLOAT_MAGIC,
    TYPED_MAGIC,
    decode_container,
    encode_container,
    read_container,
    write_container,
)
from segquant.errors import ArtifactIOError, ContainerFormatError


def test_float_container_layout_is_little_endian():
    data = encode_container({"w": np.array([[1.0, -2.0]], dtype=np.float32)})
    assert data[:4] == FLOAT_MAGIC
    assert struct.unpack("<I", data[4:8]) == (1,)
    assert struct.unpack("<H", data[8:10]) == (1,)
    assert data[10:11] == b"w"
    assert data[11] == 2
    assert struct.unpack("<2I", data[12:20]) == (1, 2)
    assert struct.unpack("<2f", data[20:28]) == (1.0, -2.0)
    assert len(data) == 28


def test_typed_container_keeps_dtypes(tmp_path):
    tensors = {
        "layer/codes": np.array([[127, -128], [0, 5]], dtype=np.int8),
        "layer/acc": np.array([1, -70000], dtype=np.int32),
        "layer/scale": np.array([0.5], dtype=np.float32),
    }
    path = write_container(tmp_path / "q.bin", tensors)
    assert path.read_bytes()[:4] == TYPED_MAGIC
    loaded = read_container(path)
    assert list(loaded) == list(tensors)
    assert loaded["layer/codes"].dtype == np.int8
    assert loaded["layer/codes"].tolist() == [[127, -128], [0, 5]]
    assert loaded["layer/acc"].dtype == np.int32
    assert loaded["layer/scale"].dtype == np.float32


def test_decode_rejects_malformed_payloads():
    good = encode_container({"a": np.ones((2, 2), dtype=np.float32)})
    with pytest.raises(ContainerFormatError):
        decode_container(b"NOPE" + good[4:])
    with pytest.raises(ContainerFormatError):
        decode_container(good[:-1])
    with pytest.raises(ContainerFormatError):
        decode_container(good + b"\x00")


def test_unsupported_dtype_is_rejected():
    with pytest.raises(ContainerFormatError):
        encode_container({"a": np.ones(2, dtype=np.float64), "b": np.ones(2, dtype=np.int16)})


def test_missing_file_names_the_path(tmp_path):
    missing = tmp_path / "nowhere.bin"
    with pytest.raises(ArtifactIOError) as excinfo:
        read_container(missing)
    assert str(missing) in str(excinfo.value)
    assert excinfo.value.exit_code == 5
