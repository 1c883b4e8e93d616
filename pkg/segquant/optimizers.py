"""Pre-calibration transforms: segment-aware smoothing sweep and SVD low-rank split."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .errors import ConfigError, ShapeMismatchError, SvdConvergenceError
from .graphir import Edge, Graph, Node
from .numerics import Tensor, as_tensor, freeze
from .quantcore import EPS, Scheme, qgemm, quantize
from .seginfer import SegmentPlan

LOGGER = logging.getLogger(__name__)

ALPHA_GRID = tuple(round(0.1 * step, 1) for step in range(11))
SVD_PRECISIONS = ("float64", "float32")


@dataclass(frozen=True)
class SmoothConfig:
    enabled: bool = False
    grid: Tuple[float, ...] = ALPHA_GRID
    per_segment: bool = True

    def validate(self) -> "SmoothConfig":
        if not self.grid:
            raise ConfigError("smooth.grid must not be empty")
        if any(not 0.0 <= alpha <= 1.0 for alpha in self.grid):
            raise ConfigError(f"smooth.grid values must lie in [0, 1], got {list(self.grid)}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"enabled": self.enabled, "grid": list(self.grid), "per_segment": self.per_segment}


@dataclass(frozen=True)
class LowRankConfig:
    enabled: bool = False
    rank: int = 8
    precision: str = "float64"

    def validate(self, shape: Tuple[int, int] | None = None) -> "LowRankConfig":
        if self.rank <= 0:
            raise ConfigError(f"lowrank.rank must be positive, got {self.rank}")
        if self.precision not in SVD_PRECISIONS:
            raise ConfigError(f"lowrank.precision must be one of {SVD_PRECISIONS}, got {self.precision!r}")
        if shape is not None and self.rank >= min(shape):
            raise ConfigError(f"lowrank.rank {self.rank} must be below min{tuple(shape)}")
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {"enabled": self.enabled, "rank": self.rank, "precision": self.precision}


@dataclass(frozen=True)
class SegmentChoice:
    start: int
    stop: int
    alpha: float
    mse: float
    errors: Tuple[Tuple[float, float], ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {"start": self.start, "stop": self.stop, "alpha": self.alpha, "mse": self.mse}


@dataclass(frozen=True)
class SmoothResult:
    """Chosen α per input segment, the full smoothing vector and the folded weight."""

    segments: Tuple[SegmentChoice, ...]
    factors: Tensor
    weight: Tensor

    @property
    def mse(self) -> float:
        return float(sum(choice.mse for choice in self.segments))

    @property
    def alphas(self) -> Tuple[float, ...]:
        return tuple(choice.alpha for choice in self.segments)

    def to_dict(self) -> Dict[str, Any]:
        return {"segments": [choice.to_dict() for choice in self.segments], "mse": self.mse}


def smooth_factors(act_amax: npt.ArrayLike, w_amax: npt.ArrayLike, alpha: float) -> Tensor:
    """``s_j = act_amax_j^α / w_amax_j^(1−α)``, both inputs guarded by EPS."""

    act = np.maximum(np.asarray(act_amax, dtype=np.float64), EPS)
    weight = np.maximum(np.asarray(w_amax, dtype=np.float64), EPS)
    if act.shape != weight.shape:
        raise ShapeMismatchError(f"amax vectors differ in length: {act.shape} vs {weight.shape}")
    factors = np.power(act, alpha) / np.power(weight, 1.0 - alpha)
    return freeze(np.maximum(factors, EPS).astype(np.float32))


def _stack_inputs(calib_inputs: Sequence[np.ndarray], in_features: int) -> np.ndarray:
    if not calib_inputs:
        raise ConfigError("smoothing sweep needs calibration inputs")
    stacked = np.concatenate([np.atleast_2d(np.asarray(batch, dtype=np.float32)) for batch in calib_inputs], axis=0)
    if stacked.shape[1] != in_features:
        raise ShapeMismatchError(f"calibration inputs have {stacked.shape[1]} features, layer takes {in_features}")
    return stacked


def smoothed_output_error(
    x: np.ndarray,
    w: np.ndarray,
    factors: np.ndarray,
    weight_scheme: Scheme,
    act_scheme: Scheme,
    out_bounds: Tuple[Tuple[int, int], ...],
) -> float:
    """MSE between ``X·W`` and the quantized product of the smoothed pair."""

    x_smooth = x / factors
    w_smooth = factors[:, None] * w
    xq = quantize(x_smooth, act_scheme)
    wq = quantize(w_smooth, weight_scheme, col_bounds=out_bounds)
    approx = qgemm(xq, wq).astype(np.float64)
    reference = x.astype(np.float64) @ w.astype(np.float64)
    return float(np.mean((approx - reference) ** 2))


def sweep_alpha(
    w: np.ndarray,
    calib_inputs: Sequence[np.ndarray],
    plan: SegmentPlan,
    weight_scheme: Scheme,
    act_scheme: Scheme,
    cfg: SmoothConfig,
    *,
    logger: logging.Logger | None = None,
) -> SmoothResult:
    """Grid search of α per input segment (or one shared α when ``per_segment`` is off).

    Ties go to the smaller α.
    """

    log = logger or LOGGER
    weight = as_tensor(w)
    if weight.shape != (plan.in_features, plan.out_features):
        raise ShapeMismatchError(f"plan {plan.layer_id} does not match weight {weight.shape}")
    x = _stack_inputs(calib_inputs, plan.in_features)
    grid = sorted(set(cfg.grid))
    act_amax = np.abs(x).max(axis=0)
    w_amax = np.abs(weight).max(axis=1)
    out_bounds = plan.out_bounds()

    table: List[List[Tuple[float, float, Tensor]]] = []
    for start, stop in plan.in_bounds():
        rows = []
        for alpha in grid:
            factors = smooth_factors(act_amax[start:stop], w_amax[start:stop], alpha)
            error = smoothed_output_error(
                x[:, start:stop], weight[start:stop], factors, weight_scheme, act_scheme, out_bounds
            )
            rows.append((alpha, error, factors))
        table.append(rows)

    picks: List[int]
    if cfg.per_segment:
        picks = [_argmin([error for _, error, _ in rows]) for rows in table]
    else:
        totals = [sum(rows[index][1] for rows in table) for index in range(len(grid))]
        shared = _argmin(totals)
        picks = [shared] * len(table)

    choices = []
    vectors = []
    for (start, stop), rows, pick in zip(plan.in_bounds(), table, picks):
        alpha, error, factors = rows[pick]
        choices.append(SegmentChoice(start, stop, alpha, error, tuple((a, e) for a, e, _ in rows)))
        vectors.append(factors)
    factors = freeze(np.concatenate(vectors).astype(np.float32))
    folded = as_tensor(factors[:, None] * weight)
    result = SmoothResult(tuple(choices), factors, folded)
    log.debug("Smoothing sweep | layer=%s | alphas=%s | mse=%.6g", plan.layer_id, list(result.alphas), result.mse)
    return result


def _argmin(errors: Sequence[float]) -> int:
    best = 0
    for index, error in enumerate(errors):
        if error < errors[best]:
            best = index
    return best


def fold_smoothing(g: Graph, layer: str, factors: np.ndarray) -> Graph:
    """Graph form of smoothing: a per-channel ``mul`` by 1/s ahead of *layer*, s folded into its weight."""

    node = g.node(layer)
    weight_name = str(node.attrs["weight"])
    scale = np.asarray(factors, dtype=np.float32)
    if scale.shape != (g.linear_weight(layer).shape[0],):
        raise ShapeMismatchError(f"smoothing vector {scale.shape} does not match {layer} inputs")
    mul_id = f"{layer}.smooth"
    vector_name = f"{layer}.smooth.weight"
    nodes = list(g.nodes) + [Node(id=mul_id, kind="mul", attrs={"weight": vector_name})]
    edges: List[Edge] = []
    for edge in g.edges:
        if edge.dst == layer:
            edges.append(Edge(edge.src, edge.src_port, mul_id, 0))
            edges.append(Edge(mul_id, 0, layer, 0))
        else:
            edges.append(edge)
    weights = dict(g.weights)
    weights[vector_name] = (np.float32(1.0) / scale).astype(np.float32)
    weights[weight_name] = scale[:, None] * g.weight(weight_name)
    return Graph(nodes, edges, weights, g.inputs, g.outputs)


def svd_lowrank(w: np.ndarray, cfg: LowRankConfig) -> Tuple[Tensor, Tensor, Tensor]:
    """Truncated SVD ``w ≈ L1·L2`` plus the residual ``w − L1·L2``."""

    weight = as_tensor(w)
    cfg.validate(weight.shape)
    dtype = np.float64 if cfg.precision == "float64" else np.float32
    work = weight.astype(dtype)
    try:
        u, sigma, vt = np.linalg.svd(work, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(f"SVD did not converge: {exc}") from exc
    r = cfg.rank
    left = u[:, :r] * sigma[:r]
    right = vt[:r, :]
    residual = work - left @ right
    return as_tensor(left), as_tensor(right), as_tensor(residual)


__all__ = [
    "ALPHA_GRID",
    "LowRankConfig",
    "SVD_PRECISIONS",
    "SegmentChoice",
    "SmoothConfig",
    "SmoothResult",
    "fold_smoothing",
    "smooth_factors",
    "smoothed_output_error",
    "svd_lowrank",
    "sweep_alpha",
]
