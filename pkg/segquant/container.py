"""Little-endian tensor container shared by weights, calibration and bundle files.

Layout (see docs/FORMATS.md)::

    magic  4 bytes   b"SQWT" (every payload f32) or b"SQWQ" (typed payloads)
    count  u32
    count x entry:
        name_len u16, name utf-8 bytes
        dtype    u8          (SQWQ only: 0=f32, 1=i32, 2=i8)
        rank     u8, rank x u32 extents
        payload  little-endian, row-major
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping

import numpy as np

from .errors import ArtifactIOError, ContainerFormatError
from .numerics import as_tensor, freeze

LOGGER = logging.getLogger(__name__)

FLOAT_MAGIC = b"SQWT"
TYPED_MAGIC = b"SQWQ"

_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<i4"), 2: np.dtype("<i1")}
_TAG_FOR_KIND = {np.dtype(np.float32): 0, np.dtype(np.int32): 1, np.dtype(np.int8): 2}


def encode_container(tensors: Mapping[str, np.ndarray]) -> bytes:
    """Serialise *tensors* in mapping order."""

    arrays = {name: np.asarray(value) for name, value in tensors.items()}
    typed = any(array.dtype != np.float32 for array in arrays.values())
    chunks = [TYPED_MAGIC if typed else FLOAT_MAGIC, struct.pack("<I", len(arrays))]
    for name, array in arrays.items():
        encoded_name = name.encode("utf-8")
        if array.ndim == 0:
            array = array.reshape(1)
        chunks.append(struct.pack("<H", len(encoded_name)))
        chunks.append(encoded_name)
        if typed:
            tag = _TAG_FOR_KIND.get(array.dtype)
            if tag is None:
                raise ContainerFormatError(f"unsupported dtype {array.dtype} for tensor {name!r}")
            chunks.append(struct.pack("<B", tag))
            payload_dtype = _DTYPE_TAGS[tag]
        else:
            payload_dtype = _DTYPE_TAGS[0]
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype=payload_dtype).tobytes())
    return b"".join(chunks)


def decode_container(data: bytes, *, source: str = "<bytes>") -> Dict[str, np.ndarray]:
    magic = data[:4]
    if magic not in (FLOAT_MAGIC, TYPED_MAGIC):
        raise ContainerFormatError(f"{source}: bad magic {magic!r}")
    typed = magic == TYPED_MAGIC
    offset = 4

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(data):
            raise ContainerFormatError(f"{source}: truncated at byte {offset}")
        chunk = data[offset : offset + size]
        offset += size
        return chunk

    (count,) = struct.unpack("<I", take(4))
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = take(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ContainerFormatError(f"{source}: tensor name is not utf-8") from exc
        tag = struct.unpack("<B", take(1))[0] if typed else 0
        if tag not in _DTYPE_TAGS:
            raise ContainerFormatError(f"{source}: unknown dtype tag {tag} for {name!r}")
        dtype = _DTYPE_TAGS[tag]
        (rank,) = struct.unpack("<B", take(1))
        if rank == 0:
            raise ContainerFormatError(f"{source}: tensor {name!r} has rank 0")
        extents = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(extents)) * dtype.itemsize
        array = np.frombuffer(take(size), dtype=dtype).reshape(extents)
        if name in tensors:
            raise ContainerFormatError(f"{source}: duplicate tensor {name!r}")
        if tag == 0:
            tensors[name] = as_tensor(array)
        else:
            tensors[name] = freeze(array.astype(dtype.newbyteorder("=")))
    if offset != len(data):
        raise ContainerFormatError(f"{source}: {len(data) - offset} trailing bytes")
    return tensors


def write_container(path: Path, tensors: Mapping[str, np.ndarray]) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(encode_container(tensors))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {target}: {exc}", code="io.write") from exc
    LOGGER.debug("Wrote %d tensors to %s", len(tensors), target)
    return target


def read_container(path: Path) -> Dict[str, np.ndarray]:
    source = Path(path)
    try:
        data = source.read_bytes()
    except FileNotFoundError as exc:
        raise ArtifactIOError(f"file not found: {source}") from exc
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {source}: {exc}") from exc
    return decode_container(data, source=str(source))


__all__ = [
    "FLOAT_MAGIC",
    "TYPED_MAGIC",
    "decode_container",
    "encode_container",
    "read_container",
    "write_container",
]
