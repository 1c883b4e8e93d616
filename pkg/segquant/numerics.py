"""Dense-tensor primitives, the seeded generator and rounding rules.

Tensors are plain numpy arrays: float32 for values, int32 for codes. Every
array handed out by this module is read-only; callers copy before mutating.
"""

from __future__ import annotations

import math
from typing import Sequence, Union

import numpy as np
import numpy.typing as npt

from .errors import NonFiniteError, ShapeMismatchError, ValidationError

Tensor = npt.NDArray[np.float32]
IntTensor = npt.NDArray[np.int32]
Shape = Union[int, Sequence[int]]

_MASK64 = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
_MIX_B = np.uint64(0x94D049BB133111EB)
_TWO_POW_53 = 9007199254740992.0


def _normalise_shape(shape: Shape) -> tuple[int, ...]:
    dims = (int(shape),) if isinstance(shape, (int, np.integer)) else tuple(int(d) for d in shape)
    if not dims or any(d <= 0 for d in dims):
        raise ShapeMismatchError(f"shape extents must be positive, got {dims}")
    return dims


def freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


def as_tensor(values: npt.ArrayLike, *, shape: Shape | None = None) -> Tensor:
    """Copy *values* into an immutable float32 tensor, rejecting NaN/Inf."""

    array = np.array(values, dtype=np.float32)
    if shape is not None:
        dims = _normalise_shape(shape)
        if array.size != math.prod(dims):
            raise ShapeMismatchError(f"{array.size} values cannot fill shape {dims}")
        array = array.reshape(dims)
    elif array.ndim == 0 or 0 in array.shape:
        raise ShapeMismatchError(f"tensor shape must have positive extents, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise NonFiniteError("tensor contains NaN or Inf values")
    return freeze(array)


def as_int_tensor(values: npt.ArrayLike) -> IntTensor:
    return freeze(np.array(values, dtype=np.int32))


class Rng:
    """Counter-based splitmix64 stream.

    Draw ``i`` (1-based, counting every 64-bit word ever produced) is
    ``mix(seed + i * 0x9E3779B97F4A7C15)`` with the splitmix64 finaliser.
    Uniforms take the top 53 bits; normals use the cosine branch of
    Box-Muller over consecutive uniform pairs. An Rng has a single owner;
    parallel work receives children from :meth:`spawn`.
    """

    def __init__(self, seed: int) -> None:
        self._seed = np.uint64(int(seed) & _MASK64)
        self._counter = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def next_u64(self, count: int) -> npt.NDArray[np.uint64]:
        index = np.arange(self._counter + 1, self._counter + 1 + count, dtype=np.uint64)
        self._counter += count
        return _splitmix(self._seed + index * _GOLDEN)

    def uniform(self, shape: Shape) -> npt.NDArray[np.float64]:
        dims = _normalise_shape(shape)
        bits = self.next_u64(math.prod(dims)) >> np.uint64(11)
        return (bits.astype(np.float64) / _TWO_POW_53).reshape(dims)

    def integers(self, low: int, high: int, shape: Shape = 1) -> npt.NDArray[np.int64]:
        """Uniform integers in ``[low, high)``."""

        if high <= low:
            raise ValidationError(f"empty integer range [{low}, {high})")
        draws = np.floor(self.uniform(shape) * (high - low)).astype(np.int64)
        return low + draws

    def normal(self, shape: Shape) -> Tensor:
        dims = _normalise_shape(shape)
        count = math.prod(dims)
        pairs = self.uniform((2 * count,))
        radius = np.sqrt(-2.0 * np.log(1.0 - pairs[0::2]))
        values = radius * np.cos(2.0 * math.pi * pairs[1::2])
        return freeze(values.astype(np.float32).reshape(dims))

    def spawn(self, key: int) -> "Rng":
        mixed = _splitmix(np.array([self._seed ^ np.uint64(int(key) & _MASK64)], dtype=np.uint64))
        return Rng(int(mixed[0]))


def _splitmix(state: npt.NDArray[np.uint64]) -> npt.NDArray[np.uint64]:
    z = state.copy()
    z = (z ^ (z >> np.uint64(30))) * _MIX_A
    z = (z ^ (z >> np.uint64(27))) * _MIX_B
    return z ^ (z >> np.uint64(31))


def gaussian(rng: Rng, shape: Shape) -> Tensor:
    """i.i.d. standard normal tensor drawn from *rng*."""

    return rng.normal(shape)


def matmul(a: npt.ArrayLike, b: npt.ArrayLike) -> Tensor:
    """FP32 product accumulated left-to-right over the inner dimension.

    Each step is a separate multiply then add, so the result matches a naive
    triple loop that accumulates ``acc = acc + a[i, j] * b[j, l]`` in float32.
    """

    lhs = np.asarray(a, dtype=np.float32)
    rhs = np.asarray(b, dtype=np.float32)
    if lhs.ndim != 2 or rhs.ndim != 2 or lhs.shape[1] != rhs.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {lhs.shape} by {rhs.shape}")
    out = np.zeros((lhs.shape[0], rhs.shape[1]), dtype=np.float32)
    for j in range(lhs.shape[1]):
        out += np.multiply.outer(lhs[:, j], rhs[j, :])
    return freeze(out)


def int_matmul(a: npt.ArrayLike, b: npt.ArrayLike) -> npt.NDArray[np.int64]:
    """Exact integer GEMM in int64."""

    lhs = np.asarray(a, dtype=np.int64)
    rhs = np.asarray(b, dtype=np.int64)
    if lhs.ndim != 2 or rhs.ndim != 2 or lhs.shape[1] != rhs.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {lhs.shape} by {rhs.shape}")
    return freeze(lhs @ rhs)


def round_ties_away(x: npt.ArrayLike):
    """Nearest integer, halves away from zero. Scalars give ``int``, arrays int64."""

    values = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("cannot round non-finite values")
    magnitude = np.abs(values)
    base = np.floor(magnitude)
    rounded = base + (magnitude - base >= 0.5)
    result = np.copysign(rounded, values).astype(np.int64)
    if result.ndim == 0:
        return int(result)
    return result


def clip(x, lo: float, hi: float):
    if lo > hi:
        raise ValidationError(f"clip bounds inverted: lo={lo} > hi={hi}")
    result = np.clip(x, lo, hi)
    if np.ndim(result) == 0:
        return result.item()
    return result


__all__ = [
    "IntTensor",
    "Rng",
    "Tensor",
    "as_int_tensor",
    "as_tensor",
    "clip",
    "freeze",
    "gaussian",
    "int_matmul",
    "matmul",
    "round_ties_away",
]
