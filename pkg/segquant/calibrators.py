"""AMax and GPTQ-style calibrators producing segment-aware QuantizedLayers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .calibstats import CalibStats, observe
from .errors import ConfigError, MissingStatsError, ShapeMismatchError, SingularHessianError
from .numerics import as_tensor, freeze
from .quantcore import (
    ParamArrays,
    QParams,
    QuantizedLayer,
    QuantizedTensor,
    Scheme,
    decode,
    derive_params,
    encode,
    param_arrays,
    params_for_range,
    segmented_quantize_weight,
)
from .seginfer import SegmentPlan

LOGGER = logging.getLogger(__name__)

CALIBRATION_METHODS = ("amax", "gptq")


@dataclass(frozen=True)
class SchemePair:
    weights: Scheme
    activations: Scheme


@dataclass(frozen=True)
class CalibConfig:
    method: str = "amax"
    block_size: int = 16
    damping: float = 0.01
    samples: int = 0

    def validate(self) -> "CalibConfig":
        if self.method not in CALIBRATION_METHODS:
            raise ConfigError(f"calibration.method must be one of {CALIBRATION_METHODS}, got {self.method!r}")
        if self.block_size <= 0:
            raise ConfigError(f"calibration.block_size must be positive, got {self.block_size}")
        if not self.damping > 0:
            raise ConfigError(f"calibration.damping must be positive, got {self.damping}")
        if self.samples < 0:
            raise ConfigError(f"calibration.samples must be >= 0, got {self.samples}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "block_size": self.block_size,
            "damping": self.damping,
            "samples": self.samples,
        }


def activation_params(
    stats: CalibStats | None, plan: SegmentPlan, scheme: Scheme
) -> Tuple[QParams, ...] | None:
    """Static per-input-segment activation parameters; ``None`` when the scheme needs none."""

    if not scheme.is_integer or scheme.granularity == "per_token_dynamic":
        return None
    if stats is None or stats.count == 0:
        raise MissingStatsError(f"layer {plan.layer_id}: static {scheme.kind} activations need calibration stats")
    if stats.channels != plan.in_features:
        raise ShapeMismatchError(
            f"layer {plan.layer_id}: stats cover {stats.channels} channels, layer takes {plan.in_features}"
        )
    return tuple(params_for_range(scheme, *stats.range(start, stop)) for start, stop in plan.in_bounds())


def amax_calibrate(
    w: np.ndarray,
    stats: CalibStats | None,
    plan: SegmentPlan,
    scheme: SchemePair,
    *,
    bias: np.ndarray | None = None,
) -> QuantizedLayer:
    """Round-to-nearest weights with AMax (or min/max) parameters per segment block."""

    weight = segmented_quantize_weight(w, plan, scheme.weights)
    return QuantizedLayer(
        layer_id=plan.layer_id,
        plan=plan,
        weight=weight,
        act_scheme=scheme.activations,
        act_params=activation_params(stats, plan, scheme.activations),
        bias=None if bias is None else as_tensor(bias),
        method="amax",
    )


def build_hessian(calib_inputs: Sequence[np.ndarray], in_features: int) -> np.ndarray:
    """``H = Σ XᵀX`` in float64 over every calibration batch."""

    hessian = np.zeros((in_features, in_features), dtype=np.float64)
    for batch in calib_inputs:
        x = np.atleast_2d(np.asarray(batch, dtype=np.float64))
        if x.shape[1] != in_features:
            raise ShapeMismatchError(f"calibration input has {x.shape[1]} features, layer takes {in_features}")
        hessian += x.T @ x
    return hessian


def _inverse_hessian_factor(hessian: np.ndarray, damping: float) -> Tuple[np.ndarray, np.ndarray]:
    """Upper Cholesky factor of the damped inverse Hessian, plus the dead-column mask."""

    h = hessian.copy()
    dead = np.diag(h) == 0
    h[dead, dead] = 1.0
    h[np.diag_indices_from(h)] += damping * float(np.mean(np.diag(h)))
    try:
        lower = np.linalg.cholesky(h)
        inverse = np.linalg.inv(lower)
        h_inv = inverse.T @ inverse
        upper = np.linalg.cholesky(h_inv).T
    except np.linalg.LinAlgError as exc:
        raise SingularHessianError(f"Hessian is not positive definite after damping: {exc}") from exc
    if not np.all(np.isfinite(upper)):
        raise SingularHessianError("inverse Hessian factor is not finite")
    return upper, dead


def _row_arrays(
    groups: Sequence[Tuple[QParams, ...]], plan: SegmentPlan, scheme: Scheme, in_seg: int
) -> ParamArrays:
    """Parameters for one input segment expanded to full-width ``(1, n)`` arrays."""

    scales, zeros = [], []
    for out_seg, (c0, c1) in enumerate(plan.out_bounds()):
        arrays = param_arrays(groups[in_seg * len(plan.out_segments) + out_seg], scheme.group_axis)
        scales.append(np.broadcast_to(arrays.scale, (1, c1 - c0)))
        zeros.append(np.broadcast_to(arrays.zero, (1, c1 - c0)))
    return ParamArrays(
        scale=np.concatenate(scales, axis=1).astype(np.float32),
        zero=np.concatenate(zeros, axis=1).astype(np.int64),
        neg_scale=None,
    )


def _gptq_blocks(plan: SegmentPlan, block_size: int) -> List[Tuple[int, int, int]]:
    """``(start, stop, input segment)`` spans; blocks never cross an input-segment boundary."""

    spans = []
    for index, (start, stop) in enumerate(plan.in_bounds()):
        for block_start in range(start, stop, block_size):
            spans.append((block_start, min(block_start + block_size, stop), index))
    return spans


def gptq_quantize_weight(
    w: np.ndarray,
    calib_inputs: Sequence[np.ndarray],
    plan: SegmentPlan,
    scheme: Scheme,
    cfg: CalibConfig,
) -> QuantizedTensor:
    """Sequential input-dimension quantization with inverse-Hessian error feedback.

    Parameters come from the original weight, one set per segment block; every
    output column is updated independently, so output segments never interact.
    """

    weight = as_tensor(w)
    scheme.validate("weight")
    if weight.shape != (plan.in_features, plan.out_features):
        raise ShapeMismatchError(f"plan {plan.layer_id} does not match weight {weight.shape}")
    if not calib_inputs:
        raise MissingStatsError(f"layer {plan.layer_id}: gptq needs calibration inputs")
    k, n = weight.shape
    groups = tuple(
        derive_params(weight[r0:r1, c0:c1], scheme) for r0, r1 in plan.in_bounds() for c0, c1 in plan.out_bounds()
    )
    upper, dead = _inverse_hessian_factor(build_hessian(calib_inputs, k), cfg.damping)

    work = weight.astype(np.float64)
    work[dead, :] = 0.0
    codes = np.zeros((k, n), dtype=np.int32)
    row_arrays = [_row_arrays(groups, plan, scheme, index) for index in range(len(plan.in_segments))]

    for start, stop, in_seg in _gptq_blocks(plan, min(cfg.block_size, k)):
        arrays = row_arrays[in_seg]
        errors = np.zeros((stop - start, n), dtype=np.float64)
        for i in range(start, stop):
            row = work[i : i + 1, :].astype(np.float32)
            row_codes, _ = encode(row, scheme, arrays)
            codes[i, :] = row_codes[0]
            quantized = decode(row_codes, None, scheme, arrays).astype(np.float64)
            err = (work[i, :] - quantized[0]) / upper[i, i]
            errors[i - start, :] = err
            for j in range(i + 1, stop):
                work[j, :] -= upper[i, j] * err
        for i in range(start, stop):
            for j in range(stop, k):
                work[j, :] -= upper[i, j] * errors[i - start, :]

    return QuantizedTensor(
        scheme,
        (k, n),
        plan.in_bounds(),
        plan.out_bounds(),
        groups,
        freeze(codes),
    )


def gptq_calibrate(
    w: np.ndarray,
    calib_inputs: Sequence[np.ndarray],
    plan: SegmentPlan,
    scheme: SchemePair,
    cfg: CalibConfig,
    *,
    stats: CalibStats | None = None,
    bias: np.ndarray | None = None,
    logger: logging.Logger | None = None,
) -> QuantizedLayer:
    """GPTQ weights; a singular Hessian falls back to AMax and the fallback is recorded."""

    log = logger or LOGGER
    if stats is None and calib_inputs:
        stats = CalibStats.empty(plan.layer_id, plan.in_features)
        for batch in calib_inputs:
            stats = observe(stats, batch)
    try:
        weight = gptq_quantize_weight(w, calib_inputs, plan, scheme.weights, cfg)
    except SingularHessianError as exc:
        log.warning("GPTQ fallback to amax | layer=%s | reason=%s", plan.layer_id, exc)
        layer = amax_calibrate(w, stats, plan, scheme, bias=bias)
        return QuantizedLayer(
            layer_id=layer.layer_id,
            plan=layer.plan,
            weight=layer.weight,
            act_scheme=layer.act_scheme,
            act_params=layer.act_params,
            bias=layer.bias,
            method="amax",
            notes=(f"gptq-fallback: {exc}",),
        )
    return QuantizedLayer(
        layer_id=plan.layer_id,
        plan=plan,
        weight=weight,
        act_scheme=scheme.activations,
        act_params=activation_params(stats, plan, scheme.activations),
        bias=None if bias is None else as_tensor(bias),
        method="gptq",
    )


def calibrate_layer(
    w: np.ndarray,
    calib_inputs: Sequence[np.ndarray],
    stats: CalibStats | None,
    plan: SegmentPlan,
    scheme: SchemePair,
    cfg: CalibConfig,
    *,
    bias: np.ndarray | None = None,
    logger: logging.Logger | None = None,
) -> QuantizedLayer:
    log = logger or LOGGER
    log.debug("Calibrating layer | layer=%s | method=%s | weights=%s", plan.layer_id, cfg.method, scheme.weights.kind)
    if cfg.method == "gptq" and scheme.weights.is_integer:
        return gptq_calibrate(w, calib_inputs, plan, scheme, cfg, stats=stats, bias=bias, logger=log)
    return amax_calibrate(w, stats, plan, scheme, bias=bias)


__all__ = [
    "CALIBRATION_METHODS",
    "CalibConfig",
    "SchemePair",
    "activation_params",
    "amax_calibrate",
    "build_hessian",
    "calibrate_layer",
    "gptq_calibrate",
    "gptq_quantize_weight",
]
