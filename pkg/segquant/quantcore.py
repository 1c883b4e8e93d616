"""Quantization schemes, segment-aware encode/decode and integer GEMM recovery.

Conventions used throughout:

* asymmetric codes are ``x̂ = round(x / s) + z`` and decode as ``s · (x̂ − z)``;
* ``int_sym`` codes live in ``[−q_max, q_max]``, ``int_asym`` and
  ``dual_scale`` in ``[−2^(b−1), 2^(b−1) − 1]``;
* every scale is guarded by :data:`EPS` and held as a float32 value;
* recovery applies scales as ``s_x · (s_w · acc)`` in float64 over exact int64
  products and rounds the output to float32 once.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Sequence, Tuple

import numpy as np

from .errors import NonFiniteError, SchemeError, ShapeMismatchError, ValidationError
from .numerics import IntTensor, Tensor, as_tensor, freeze, int_matmul, matmul, round_ties_away
from .seginfer import SegmentPlan

LOGGER = logging.getLogger(__name__)

EPS = 1e-8
SCHEME_KINDS = ("int_sym", "int_asym", "dual_scale", "fp8_e4m3_sim", "float")
INTEGER_KINDS = ("int_sym", "int_asym", "dual_scale")
GRANULARITIES = ("per_tensor", "per_channel", "per_token_dynamic")
SUPPORTED_BITS = (4, 8)
FP8_E4M3_MAX = 448.0

Bounds = Tuple[Tuple[int, int], ...]


def _f32(value: float) -> float:
    return float(np.float32(value))


@dataclass(frozen=True)
class Scheme:
    kind: str = "int_sym"
    bits: int = 8
    granularity: str = "per_tensor"

    def validate(self, role: str | None = None) -> "Scheme":
        if self.kind not in SCHEME_KINDS:
            raise SchemeError(f"unknown scheme kind {self.kind!r}")
        if self.granularity not in GRANULARITIES:
            raise SchemeError(f"unknown granularity {self.granularity!r}")
        if self.is_integer and self.bits not in SUPPORTED_BITS:
            raise SchemeError(f"{self.kind} supports {SUPPORTED_BITS} bits, got {self.bits}")
        if role == "weight":
            if self.kind == "dual_scale":
                raise SchemeError("dual_scale applies to activations only")
            if self.granularity == "per_token_dynamic":
                raise SchemeError("per_token_dynamic applies to activations only")
        elif role == "activation":
            if self.granularity == "per_channel":
                raise SchemeError("per_channel applies to weights only")
        elif role is not None:
            raise SchemeError(f"unknown tensor role {role!r}")
        return self

    @property
    def is_integer(self) -> bool:
        return self.kind in INTEGER_KINDS

    @property
    def q_max(self) -> int:
        return 2 ** (self.bits - 1) - 1

    @property
    def q_min(self) -> int:
        if self.kind == "int_sym":
            return -self.q_max
        return -(2 ** (self.bits - 1))

    @property
    def group_axis(self) -> int | None:
        return {"per_tensor": None, "per_channel": 1, "per_token_dynamic": 0}[self.granularity]

    def with_kind(self, kind: str) -> "Scheme":
        return Scheme(kind=kind, bits=self.bits, granularity=self.granularity)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "bits": self.bits, "granularity": self.granularity}

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Scheme":
        return cls(
            kind=str(payload.get("kind", "int_sym")),
            bits=int(payload.get("bits", 8)),
            granularity=str(payload.get("granularity", "per_tensor")),
        )


@dataclass(frozen=True)
class QParams:
    """Affine parameters of one quantization group.

    For ``dual_scale`` ``scale`` is the positive step s₊ and ``neg_scale`` s₋.
    """

    scale: float
    q_min: int
    q_max: int
    zero_point: int = 0
    neg_scale: float | None = None

    def __post_init__(self) -> None:
        if not self.scale > 0 or (self.neg_scale is not None and not self.neg_scale > 0):
            raise ValidationError(f"scales must be positive: {self}")
        if not self.q_min < 0 < self.q_max:
            raise ValidationError(f"code range must straddle zero: [{self.q_min}, {self.q_max}]")
        if not self.q_min <= self.zero_point <= self.q_max:
            raise ValidationError(f"zero point {self.zero_point} outside [{self.q_min}, {self.q_max}]")

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {
            "scale": self.scale,
            "zero_point": self.zero_point,
            "q_min": self.q_min,
            "q_max": self.q_max,
        }
        if self.neg_scale is not None:
            payload["neg_scale"] = self.neg_scale
        return payload

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "QParams":
        neg = payload.get("neg_scale")
        return cls(
            scale=float(payload["scale"]),
            q_min=int(payload["q_min"]),
            q_max=int(payload["q_max"]),
            zero_point=int(payload.get("zero_point", 0)),
            neg_scale=None if neg is None else float(neg),
        )


def qparams_symmetric(amax: float, bits: int) -> QParams:
    if amax < 0:
        raise ValidationError(f"amax must be non-negative, got {amax}")
    q_max = 2 ** (bits - 1) - 1
    return QParams(scale=_f32(max(float(amax), EPS) / q_max), q_min=-q_max, q_max=q_max)


def qparams_asymmetric(minimum: float, maximum: float, bits: int) -> QParams:
    """Min/max affine parameters; the range is widened to contain zero."""

    if minimum > maximum:
        raise ValidationError(f"min {minimum} exceeds max {maximum}")
    lo, hi = min(float(minimum), 0.0), max(float(maximum), 0.0)
    q_min, q_max = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    scale = _f32(max(hi - lo, EPS) / (q_max - q_min))
    zero = q_min - round_ties_away(np.float32(lo) / np.float32(scale))
    return QParams(scale=scale, q_min=q_min, q_max=q_max, zero_point=int(min(max(zero, q_min), q_max)))


def qparams_dual(minimum: float, maximum: float, bits: int) -> QParams:
    """Separate steps for the negative (s₋) and non-negative (s₊) ranges."""

    lo, hi = min(float(minimum), 0.0), max(float(maximum), 0.0)
    q_min, q_max = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    return QParams(
        scale=_f32(max(hi, EPS) / q_max),
        q_min=q_min,
        q_max=q_max,
        neg_scale=_f32(max(abs(lo), EPS) / abs(q_min)),
    )


def params_for_range(scheme: Scheme, minimum: float, maximum: float) -> QParams:
    if scheme.kind == "int_sym":
        return qparams_symmetric(max(abs(float(minimum)), abs(float(maximum))), scheme.bits)
    if scheme.kind == "int_asym":
        return qparams_asymmetric(minimum, maximum, scheme.bits)
    if scheme.kind == "dual_scale":
        return qparams_dual(minimum, maximum, scheme.bits)
    raise SchemeError(f"{scheme.kind} carries no quantization parameters")


# ----------------------------------------------------------------------
# FP8 e4m3 simulation
# ----------------------------------------------------------------------
def _e4m3_positive_values() -> np.ndarray:
    codes = np.arange(127)
    exponent = codes >> 3
    mantissa = (codes & 7).astype(np.float64)
    values = np.where(
        exponent == 0,
        mantissa / 8.0 * 2.0**-6,
        (1.0 + mantissa / 8.0) * np.power(2.0, exponent - 7.0),
    )
    return freeze(values)


FP8_E4M3_VALUES = _e4m3_positive_values()


def fp8_sim(x: np.ndarray) -> Tensor:
    """Round to the nearest e4m3 value (ties to even mantissa), saturating at ±448."""

    values = np.asarray(x, dtype=np.float32).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("fp8_sim input contains NaN or Inf")
    magnitude = np.minimum(np.abs(values), FP8_E4M3_MAX)
    upper = np.clip(np.searchsorted(FP8_E4M3_VALUES, magnitude), 1, len(FP8_E4M3_VALUES) - 1)
    lower = upper - 1
    below = magnitude - FP8_E4M3_VALUES[lower]
    above = FP8_E4M3_VALUES[upper] - magnitude
    take_upper = (above < below) | ((above == below) & (upper % 2 == 0))
    chosen = FP8_E4M3_VALUES[np.where(take_upper, upper, lower)]
    return freeze(np.copysign(chosen, values).astype(np.float32))


# ----------------------------------------------------------------------
# Encode / decode on broadcast parameter arrays
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ParamArrays:
    scale: np.ndarray
    zero: np.ndarray
    neg_scale: np.ndarray | None


def param_arrays(params: Sequence[QParams], axis: int | None) -> ParamArrays:
    """Stack group parameters into arrays broadcastable over a 2-D block."""

    shape = (1, 1) if axis is None else ((1, -1) if axis == 1 else (-1, 1))
    scale = np.array([p.scale for p in params], dtype=np.float32).reshape(shape)
    zero = np.array([p.zero_point for p in params], dtype=np.int64).reshape(shape)
    neg = None
    if params and params[0].neg_scale is not None:
        neg = np.array([p.neg_scale for p in params], dtype=np.float32).reshape(shape)
    return ParamArrays(scale, zero, neg)


def encode(values: np.ndarray, scheme: Scheme, arrays: ParamArrays) -> Tuple[np.ndarray, np.ndarray | None]:
    """Codes for *values*; dual_scale returns the ``(X̂₊, X̂₋)`` pair."""

    values = np.asarray(values, dtype=np.float32)
    if scheme.kind == "int_sym":
        return np.clip(round_ties_away(values / arrays.scale), scheme.q_min, scheme.q_max), None
    if scheme.kind == "int_asym":
        codes = round_ties_away(values / arrays.scale) + arrays.zero
        return np.clip(codes, scheme.q_min, scheme.q_max), None
    if scheme.kind == "dual_scale":
        assert arrays.neg_scale is not None
        positive = np.maximum(values, np.float32(0.0))
        negative = np.minimum(values, np.float32(0.0))
        pos_codes = np.clip(round_ties_away(positive / arrays.scale), 0, scheme.q_max)
        neg_codes = np.clip(round_ties_away(negative / arrays.neg_scale), scheme.q_min, 0)
        return pos_codes, neg_codes
    raise SchemeError(f"{scheme.kind} has no integer codes")


def decode(codes: np.ndarray, neg_codes: np.ndarray | None, scheme: Scheme, arrays: ParamArrays) -> np.ndarray:
    if scheme.kind == "int_sym":
        return arrays.scale * codes.astype(np.float32)
    if scheme.kind == "int_asym":
        return arrays.scale * (codes.astype(np.int64) - arrays.zero).astype(np.float32)
    if scheme.kind == "dual_scale":
        assert neg_codes is not None and arrays.neg_scale is not None
        return arrays.scale * codes.astype(np.float32) + arrays.neg_scale * neg_codes.astype(np.float32)
    raise SchemeError(f"{scheme.kind} has no integer codes")


def derive_params(block: np.ndarray, scheme: Scheme) -> Tuple[QParams, ...]:
    """Data-driven parameters for one block at the scheme's granularity."""

    axis = scheme.group_axis
    if axis is None:
        return (params_for_range(scheme, float(block.min()), float(block.max())),)
    reduce_axis = 1 - axis
    lows = block.min(axis=reduce_axis)
    highs = block.max(axis=reduce_axis)
    return tuple(params_for_range(scheme, float(lo), float(hi)) for lo, hi in zip(lows, highs))


# ----------------------------------------------------------------------
# Quantized tensors
# ----------------------------------------------------------------------
def _single(extent: int) -> Bounds:
    return ((0, int(extent)),)


def bounds_from_widths(widths: Sequence[int]) -> Bounds:
    bounds: List[Tuple[int, int]] = []
    start = 0
    for width in widths:
        bounds.append((start, start + int(width)))
        start += int(width)
    return tuple(bounds)


def _check_bounds(bounds: Bounds, extent: int, label: str) -> None:
    if not bounds or bounds[0][0] != 0 or bounds[-1][1] != extent:
        raise ShapeMismatchError(f"{label} segments {list(bounds)} do not cover extent {extent}")
    for (_, stop), (start, end) in zip(bounds, bounds[1:]):
        if stop != start or end <= start:
            raise ShapeMismatchError(f"{label} segments {list(bounds)} are not contiguous")


@dataclass(frozen=True)
class QuantizedTensor:
    """Codes plus per-block parameters over a (row segments × column segments) grid.

    ``params`` is row-major over blocks; each entry holds one QParams per group
    (one for per_tensor, per column for per_channel, per row for per_token_dynamic).
    fp8 and float schemes keep a float payload instead of codes.
    """

    scheme: Scheme
    shape: Tuple[int, int]
    row_bounds: Bounds
    col_bounds: Bounds
    params: Tuple[Tuple[QParams, ...], ...] = ()
    codes: IntTensor | None = None
    neg_codes: IntTensor | None = None
    payload: Tensor | None = None

    def __post_init__(self) -> None:
        if self.scheme.is_integer:
            if self.codes is None or len(self.params) != len(self.row_bounds) * len(self.col_bounds):
                raise ValidationError("integer quantized tensor needs codes and one parameter set per block")
            low = 0 if self.scheme.kind == "dual_scale" else self.scheme.q_min
            if self.codes.min() < low or self.codes.max() > self.scheme.q_max:
                raise ValidationError("codes outside the scheme range")
            if self.neg_codes is not None and (self.neg_codes.min() < self.scheme.q_min or self.neg_codes.max() > 0):
                raise ValidationError("negative-branch codes outside [q_min, 0]")
        elif self.payload is None:
            raise ValidationError(f"{self.scheme.kind} tensor needs a float payload")

    def blocks(self) -> Iterator[Tuple[int, Tuple[int, int], Tuple[int, int]]]:
        index = 0
        for rows in self.row_bounds:
            for cols in self.col_bounds:
                yield index, rows, cols
                index += 1

    def block_arrays(self, index: int) -> ParamArrays:
        return param_arrays(self.params[index], self.scheme.group_axis)

    def block_index(self, row: int, col: int) -> int:
        return row * len(self.col_bounds) + col


def quantize(
    x: np.ndarray,
    scheme: Scheme,
    params: QParams | Sequence[Sequence[QParams]] | None = None,
    *,
    row_bounds: Bounds | None = None,
    col_bounds: Bounds | None = None,
) -> QuantizedTensor:
    """Quantize a 2-D tensor block-wise.

    *params* may be one QParams shared by every block, one sequence of group
    parameters per block, or ``None`` to derive them from *x* itself.
    """

    values = as_tensor(np.atleast_2d(np.asarray(x, dtype=np.float32)))
    if values.ndim != 2:
        raise ShapeMismatchError(f"quantize expects a 2-D tensor, got shape {values.shape}")
    rows, cols = int(values.shape[0]), int(values.shape[1])
    row_bounds = row_bounds or _single(rows)
    col_bounds = col_bounds or _single(cols)
    _check_bounds(row_bounds, rows, "row")
    _check_bounds(col_bounds, cols, "column")

    if scheme.kind == "fp8_e4m3_sim":
        return QuantizedTensor(scheme, (rows, cols), row_bounds, col_bounds, payload=fp8_sim(values))
    if scheme.kind == "float":
        return QuantizedTensor(scheme, (rows, cols), row_bounds, col_bounds, payload=values)
    if scheme.granularity == "per_token_dynamic" and params is not None:
        raise SchemeError("per_token_dynamic parameters are computed at quantization time")

    codes = np.zeros((rows, cols), dtype=np.int32)
    neg_codes = np.zeros((rows, cols), dtype=np.int32) if scheme.kind == "dual_scale" else None
    block_params: List[Tuple[QParams, ...]] = []
    block_count = len(row_bounds) * len(col_bounds)
    if isinstance(params, QParams):
        params = [(params,)] * block_count
    if params is not None and len(params) != block_count:
        raise SchemeError(f"expected parameters for {block_count} blocks, got {len(params)}")

    index = 0
    for r0, r1 in row_bounds:
        for c0, c1 in col_bounds:
            block = values[r0:r1, c0:c1]
            group = tuple(params[index]) if params is not None else derive_params(block, scheme)
            expected = {None: 1, 1: c1 - c0, 0: r1 - r0}[scheme.group_axis]
            if len(group) != expected:
                raise SchemeError(
                    f"{scheme.granularity} block {index} needs {expected} parameter groups, got {len(group)}"
                )
            _check_group_kind(group, scheme)
            pos, neg = encode(block, scheme, param_arrays(group, scheme.group_axis))
            codes[r0:r1, c0:c1] = pos
            if neg_codes is not None:
                neg_codes[r0:r1, c0:c1] = neg
            block_params.append(group)
            index += 1
    return QuantizedTensor(
        scheme,
        (rows, cols),
        row_bounds,
        col_bounds,
        tuple(block_params),
        freeze(codes),
        None if neg_codes is None else freeze(neg_codes),
    )


def _check_group_kind(group: Sequence[QParams], scheme: Scheme) -> None:
    for p in group:
        if (p.neg_scale is not None) != (scheme.kind == "dual_scale"):
            raise SchemeError(f"parameters {p} do not match scheme {scheme.kind}")
        if p.q_min != scheme.q_min or p.q_max != scheme.q_max:
            raise SchemeError(f"code range [{p.q_min}, {p.q_max}] does not match {scheme.kind}/{scheme.bits}")


def dequantize(q: QuantizedTensor) -> Tensor:
    if not q.scheme.is_integer:
        assert q.payload is not None
        return q.payload
    assert q.codes is not None
    out = np.zeros(q.shape, dtype=np.float32)
    for index, (r0, r1), (c0, c1) in q.blocks():
        neg = None if q.neg_codes is None else q.neg_codes[r0:r1, c0:c1]
        out[r0:r1, c0:c1] = decode(q.codes[r0:r1, c0:c1], neg, q.scheme, q.block_arrays(index))
    return freeze(out)


def segmented_quantize_weight(w: np.ndarray, plan: SegmentPlan, scheme: Scheme) -> QuantizedTensor:
    """Independent parameters for every (input segment × output segment) block of *w*."""

    weight = as_tensor(w)
    scheme.validate("weight")
    if weight.ndim != 2 or weight.shape != (plan.in_features, plan.out_features):
        raise ShapeMismatchError(
            f"plan {plan.layer_id} widths {list(plan.in_segments)}x{list(plan.out_segments)} "
            f"do not match weight {weight.shape}"
        )
    return quantize(weight, scheme, row_bounds=plan.in_bounds(), col_bounds=plan.out_bounds())


# ----------------------------------------------------------------------
# GEMM recovery
# ----------------------------------------------------------------------
def _check_pair(x_scheme: Scheme, w_scheme: Scheme) -> None:
    if w_scheme.kind == "dual_scale":
        raise SchemeError("dual_scale weights are not supported")
    fp8_pair = {x_scheme.kind, w_scheme.kind} & {"fp8_e4m3_sim"}
    if fp8_pair and (x_scheme.is_integer or w_scheme.is_integer):
        raise SchemeError(f"cannot multiply {x_scheme.kind} activations by {w_scheme.kind} weights")


def _refine(a: Bounds, b: Bounds) -> List[Tuple[int, int]]:
    cuts = sorted({edge for pair in a + b for edge in pair})
    return list(zip(cuts, cuts[1:]))


def _locate(bounds: Bounds, start: int, stop: int) -> int:
    for index, (lo, hi) in enumerate(bounds):
        if lo <= start and stop <= hi:
            return index
    raise ShapeMismatchError(f"span [{start}, {stop}) crosses a segment boundary")


def _shifted(acc: np.ndarray, x_codes: np.ndarray, w_codes: np.ndarray, z_x: Any, z_w: Any) -> np.ndarray:
    """``(X̂ − z_x)(Ŵ − z_w)`` via the rowsum expansion, exact in int64."""

    k = x_codes.shape[1]
    result = acc
    if np.any(z_x != 0):
        result = result - z_x * w_codes.astype(np.int64).sum(axis=0, keepdims=True)
    if np.any(z_w != 0):
        result = result - z_w * x_codes.astype(np.int64).sum(axis=1, keepdims=True)
        if np.any(z_x != 0):
            result = result + k * z_x * z_w
    return result


def _recover_piece(
    xq: QuantizedTensor,
    wq: QuantizedTensor,
    x_arrays: ParamArrays,
    w_arrays: ParamArrays,
    inner: Tuple[int, int],
    cols: Tuple[int, int],
) -> np.ndarray:
    assert xq.codes is not None and wq.codes is not None
    x_codes = xq.codes[:, inner[0] : inner[1]]
    w_codes = wq.codes[inner[0] : inner[1], cols[0] : cols[1]]
    z_w = w_arrays.zero if wq.scheme.kind == "int_asym" else 0
    if xq.scheme.kind == "dual_scale":
        assert xq.neg_codes is not None and x_arrays.neg_scale is not None
        neg_codes = xq.neg_codes[:, inner[0] : inner[1]]
        acc_pos = _shifted(int_matmul(x_codes, w_codes), x_codes, w_codes, 0, z_w)
        acc_neg = _shifted(int_matmul(neg_codes, w_codes), neg_codes, w_codes, 0, z_w)
        w_scale = w_arrays.scale.astype(np.float64)
        return x_arrays.scale.astype(np.float64) * (w_scale * acc_pos) + x_arrays.neg_scale.astype(np.float64) * (
            w_scale * acc_neg
        )
    z_x = x_arrays.zero if xq.scheme.kind == "int_asym" else 0
    acc = _shifted(int_matmul(x_codes, w_codes), x_codes, w_codes, z_x, z_w)
    return x_arrays.scale.astype(np.float64) * (w_arrays.scale.astype(np.float64) * acc)


def qgemm(xq: QuantizedTensor, wq: QuantizedTensor) -> Tensor:
    """``Y ≈ X·W`` from codes, summing over input segments and concatenating output segments."""

    _check_pair(xq.scheme, wq.scheme)
    if xq.shape[1] != wq.shape[0]:
        raise ShapeMismatchError(f"cannot multiply {xq.shape} by {wq.shape}")
    if not (xq.scheme.is_integer and wq.scheme.is_integer):
        return matmul(dequantize(xq), dequantize(wq))

    out = np.zeros((xq.shape[0], wq.shape[1]), dtype=np.float64)
    for start, stop in _refine(xq.col_bounds, wq.row_bounds):
        x_block = _locate(xq.col_bounds, start, stop)
        w_row = _locate(wq.row_bounds, start, stop)
        x_arrays = xq.block_arrays(x_block)
        for w_col, cols in enumerate(wq.col_bounds):
            w_arrays = wq.block_arrays(wq.block_index(w_row, w_col))
            out[:, cols[0] : cols[1]] += _recover_piece(xq, wq, x_arrays, w_arrays, (start, stop), cols)
    return freeze(out.astype(np.float32))


def weight_error(w: np.ndarray, q: QuantizedTensor) -> float:
    """Frobenius norm of the weight round-trip error."""

    diff = np.asarray(w, dtype=np.float64) - dequantize(q).astype(np.float64)
    return float(np.linalg.norm(diff))


# ----------------------------------------------------------------------
# Quantized layers
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class QuantizedLayer:
    """Persisted quantized linear: weight codes, activation rule and optional side branches."""

    layer_id: str
    plan: SegmentPlan
    weight: QuantizedTensor
    act_scheme: Scheme
    act_params: Tuple[QParams, ...] | None = None
    bias: Tensor | None = None
    smooth: Tensor | None = None
    lowrank: Tuple[Tensor, Tensor] | None = None
    method: str = "amax"
    notes: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        static = self.act_scheme.is_integer and self.act_scheme.granularity != "per_token_dynamic"
        if static and (self.act_params is None or len(self.act_params) != len(self.plan.in_segments)):
            raise ValidationError(
                f"layer {self.layer_id}: static {self.act_scheme.kind} activations need one parameter set "
                f"per input segment"
            )

    def quantize_input(self, x: np.ndarray) -> QuantizedTensor:
        bounds = self.plan.in_bounds()
        if not self.act_scheme.is_integer or self.act_scheme.granularity == "per_token_dynamic":
            return quantize(x, self.act_scheme, col_bounds=bounds)
        assert self.act_params is not None
        return quantize(x, self.act_scheme, [(p,) for p in self.act_params], col_bounds=bounds)

    def prepare_input(self, x: np.ndarray) -> Tensor:
        values = as_tensor(x)
        if self.smooth is not None:
            values = freeze(values / self.smooth)
        return values

    def forward(self, x: np.ndarray) -> Tensor:
        values = self.prepare_input(x)
        y = qgemm(self.quantize_input(values), self.weight)
        if self.lowrank is not None:
            y = y + matmul(matmul(values, self.lowrank[0]), self.lowrank[1])
        if self.bias is not None:
            y = y + self.bias
        return freeze(np.asarray(y, dtype=np.float32))

    def dequantized_weight(self) -> Tensor:
        """Effective full weight (including any low-rank branch), in the smoothed input basis."""

        weight = dequantize(self.weight)
        if self.lowrank is not None:
            weight = weight + matmul(self.lowrank[0], self.lowrank[1])
        return freeze(np.asarray(weight, dtype=np.float32))


__all__ = [
    "EPS",
    "FP8_E4M3_MAX",
    "FP8_E4M3_VALUES",
    "GRANULARITIES",
    "INTEGER_KINDS",
    "ParamArrays",
    "QParams",
    "QuantizedLayer",
    "QuantizedTensor",
    "SCHEME_KINDS",
    "Scheme",
    "bounds_from_widths",
    "decode",
    "dequantize",
    "derive_params",
    "encode",
    "fp8_sim",
    "param_arrays",
    "params_for_range",
    "qgemm",
    "qparams_asymmetric",
    "qparams_dual",
    "qparams_symmetric",
    "quantize",
    "segmented_quantize_weight",
    "weight_error",
]
