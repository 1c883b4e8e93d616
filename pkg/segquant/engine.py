"""Quantization pipeline: plan, optimize, calibrate, then evaluate against the FP32 executor."""

from __future__ import annotations

import fnmatch
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from ._version import project_version
from .calibrators import SchemePair, calibrate_layer
from .calibstats import CalibStats, ErrorReportRow, metric_rows, mse, observe
from .config import EngineConfig
from .errors import MissingStatsError, SegQuantError, ShapeMismatchError, ValidationError
from .graphir import Graph, Port, execute, linear_forward
from .numerics import Tensor, freeze
from .optimizers import svd_lowrank, sweep_alpha
from .quantcore import QuantizedLayer, Scheme, weight_error
from .seginfer import QuantPlan, SegmentPlan, build_plan

LOGGER = logging.getLogger(__name__)

CalibSample = Mapping[str, np.ndarray]

SMOOTHING_DUALSCALE_NOTE = (
    "smoothing runs on the eligibility-annotated path: dual-scale layers are swept with dual-scale "
    "activation quantization, so the chosen alpha also rescales the negative range"
)


@dataclass(frozen=True)
class LayerOutcome:
    """Everything the pipeline learned about one linear layer."""

    layer_id: str
    plan: SegmentPlan
    layer: QuantizedLayer | None
    stats: CalibStats | None = None
    smooth: Dict[str, Any] | None = None
    lowrank: Dict[str, Any] | None = None
    weight_fro: float | None = None
    calib_mse: float | None = None
    notes: Tuple[str, ...] = ()

    @property
    def status(self) -> str:
        return "skipped" if self.layer is None else "quantized"

    def to_dict(self) -> Dict[str, Any]:
        entry: Dict[str, Any] = {"id": self.layer_id, "status": self.status, "plan": self.plan.to_dict()}
        if self.layer is not None:
            layer = self.layer
            scales = [p.scale for group in layer.weight.params for p in group]
            entry.update(
                {
                    "method": layer.method,
                    "weights": layer.weight.scheme.to_dict(),
                    "activations": layer.act_scheme.to_dict(),
                    "weight_params": {
                        "blocks": len(layer.weight.params),
                        "scale_min": min(scales) if scales else None,
                        "scale_max": max(scales) if scales else None,
                    },
                    "activation_params": (
                        None if layer.act_params is None else [p.to_dict() for p in layer.act_params]
                    ),
                    "smooth": self.smooth,
                    "lowrank": self.lowrank,
                    "errors": [row.to_dict() for row in self.error_rows()],
                }
            )
        if self.stats is not None and self.stats.count:
            entry["stats"] = self.stats.to_dict()
        entry["notes"] = list(self.notes + (() if self.layer is None else self.layer.notes))
        return entry

    def error_rows(self) -> List[ErrorReportRow]:
        rows = []
        if self.weight_fro is not None:
            rows.append(ErrorReportRow(self.layer_id, "frobenius", self.weight_fro))
        if self.calib_mse is not None:
            rows.append(ErrorReportRow(self.layer_id, "mse", self.calib_mse))
        return rows


@dataclass
class QuantReport:
    """Per-layer outcomes in topological order plus global metrics and the config echo."""

    config: Dict[str, Any]
    plan: QuantPlan
    version: str = field(default_factory=project_version)
    layers: List[LayerOutcome] = field(default_factory=list)
    metrics: List[ErrorReportRow] = field(default_factory=list)
    quantized: int = 0
    skipped: int = 0
    fallbacks: int = 0

    def record_layer(self, outcome: LayerOutcome) -> None:
        self.layers.append(outcome)
        if outcome.layer is None:
            self.skipped += 1
            return
        self.quantized += 1
        if any(note.startswith("gptq-fallback") for note in outcome.layer.notes):
            self.fallbacks += 1

    def record_metrics(self, rows: Sequence[ErrorReportRow]) -> None:
        self.metrics.extend(rows)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": self.version,
            "config": self.config,
            "optimizer_order": list(self.config.get("optimizer_order", [])),
            "notes": {"smoothing_dualscale": SMOOTHING_DUALSCALE_NOTE},
            "plan": self.plan.to_dict(),
            "layers": [outcome.to_dict() for outcome in self.layers],
            "metrics": [row.to_dict() for row in self.metrics],
            "summary": {
                "layers": len(self.layers),
                "quantized": self.quantized,
                "skipped": self.skipped,
                "fallbacks": self.fallbacks,
            },
        }


class QuantizedModel:
    """The source graph with selected linear layers replaced by quantized simulations."""

    def __init__(self, graph: Graph, plan: QuantPlan, layers: Mapping[str, QuantizedLayer]) -> None:
        for layer_id, layer in layers.items():
            if graph.node(layer_id).kind != "linear":
                raise ValidationError(f"quantized layer {layer_id!r} is not a linear node of the graph")
            if layer.weight.shape != tuple(graph.linear_weight(layer_id).shape):
                raise ShapeMismatchError(f"quantized layer {layer_id!r} does not match the graph weight shape")
        self.graph = graph
        self.plan = plan
        self.layers: Dict[str, QuantizedLayer] = dict(layers)

    def run(self, inputs: CalibSample) -> Dict[str, Tensor]:
        overrides = {layer_id: layer.forward for layer_id, layer in self.layers.items()}
        return execute(self.graph, inputs, linear_overrides=overrides)


def capture_linear_inputs(g: Graph, calib: Sequence[CalibSample]) -> Dict[str, List[Tensor]]:
    """Full-precision input of every linear layer, one tensor per calibration sample."""

    sources = {layer: g.producers(layer)[0] for layer in g.linear_ids()}
    wanted = set(sources.values())
    captured: Dict[str, List[Tensor]] = {layer: [] for layer in sources}
    for sample in calib:
        seen: Dict[Port, Tensor] = {}

        def observer(node_id: str, outputs: Tuple[Tensor, ...]) -> None:
            for index, tensor in enumerate(outputs):
                port = Port(node_id, index)
                if port in wanted:
                    seen[port] = tensor

        execute(g, sample, observer=observer)
        for layer, port in sources.items():
            captured[layer].append(seen[port])
    return captured


def resolve_activation_scheme(cfg: EngineConfig, plan: SegmentPlan) -> Scheme:
    scheme = cfg.activations
    if not scheme.is_integer:
        return scheme
    if plan.dualscale_eligible:
        return scheme.with_kind("dual_scale")
    if scheme.kind == "dual_scale":
        return scheme.with_kind("int_sym")
    return scheme


def _selected(cfg: EngineConfig, layer_id: str) -> bool:
    return not cfg.layers or any(fnmatch.fnmatchcase(layer_id, pattern) for pattern in cfg.layers)


def _quantize_layer(
    g: Graph,
    plan: SegmentPlan,
    inputs: Sequence[Tensor],
    cfg: EngineConfig,
    log: logging.Logger,
) -> LayerOutcome:
    layer_id = plan.layer_id
    if not _selected(cfg, layer_id):
        return LayerOutcome(layer_id, plan, None, notes=("not selected by layers filter",))

    weight = g.linear_weight(layer_id)
    bias = g.linear_bias(layer_id)
    act_scheme = resolve_activation_scheme(cfg, plan)
    work = np.asarray(weight, dtype=np.float32)
    factors: Tensor | None = None
    lowrank: Tuple[Tensor, Tensor] | None = None
    smooth_info: Dict[str, Any] | None = None
    lowrank_info: Dict[str, Any] | None = None
    notes: List[str] = []

    for stage in cfg.optimizer_order:
        if stage == "smooth" and cfg.smooth.enabled:
            if not (cfg.weights.is_integer and act_scheme.is_integer):
                notes.append("smooth skipped: needs integer weights and activations")
                continue
            shifted = inputs if factors is None else [freeze(x / factors) for x in inputs]
            result = sweep_alpha(work, shifted, plan, cfg.weights, act_scheme, cfg.smooth, logger=log)
            work = np.asarray(result.weight, dtype=np.float32)
            if lowrank is not None:
                lowrank = (freeze(result.factors[:, None] * lowrank[0]), lowrank[1])
            factors = result.factors if factors is None else freeze(factors * result.factors)
            smooth_info = result.to_dict()
        elif stage == "svd" and cfg.lowrank.enabled:
            if cfg.lowrank.rank >= min(work.shape):
                notes.append(f"lowrank skipped: rank {cfg.lowrank.rank} >= min{tuple(work.shape)}")
                continue
            left, right, residual = svd_lowrank(work, cfg.lowrank)
            work = np.asarray(residual, dtype=np.float32)
            lowrank = (left, right)
            lowrank_info = {
                "rank": cfg.lowrank.rank,
                "precision": cfg.lowrank.precision,
                "residual_fro": float(np.linalg.norm(residual.astype(np.float64))),
            }

    layer_inputs = list(inputs) if factors is None else [freeze(x / factors) for x in inputs]
    stats = CalibStats.empty(layer_id, plan.in_features)
    for batch in layer_inputs:
        stats = observe(stats, batch)

    quantized = calibrate_layer(
        work,
        layer_inputs,
        stats,
        plan,
        SchemePair(cfg.weights, act_scheme),
        cfg.calibration,
        bias=bias,
        logger=log,
    )
    quantized = replace(quantized, smooth=factors, lowrank=lowrank)
    calib_mse = float(
        np.mean([mse(linear_forward(x, weight, bias), quantized.forward(x)) for x in inputs])
    )
    outcome = LayerOutcome(
        layer_id,
        plan,
        quantized,
        stats=stats,
        smooth=smooth_info,
        lowrank=lowrank_info,
        weight_fro=weight_error(work, quantized.weight),
        calib_mse=calib_mse,
        notes=tuple(notes),
    )
    log.debug(
        "Quantized layer | layer=%s | method=%s | act=%s | calib_mse=%.6g",
        layer_id,
        quantized.method,
        act_scheme.kind,
        calib_mse,
    )
    return outcome


def _guarded(
    g: Graph, plan: SegmentPlan, inputs: Sequence[Tensor], cfg: EngineConfig, log: logging.Logger
) -> LayerOutcome:
    try:
        return _quantize_layer(g, plan, inputs, cfg, log)
    except SegQuantError as exc:
        raise exc.__class__(f"layer {plan.layer_id}: {exc}", code=exc.code) from exc


def quantize_model(
    g: Graph,
    calib: Sequence[CalibSample],
    cfg: EngineConfig,
    *,
    logger: logging.Logger | None = None,
) -> Tuple[QuantizedModel, QuantReport]:
    """Quantize every (selected) linear layer of *g*; deterministic for a given config."""

    log = logger or LOGGER
    cfg.validate()
    samples = list(calib)
    if cfg.calibration.samples:
        samples = samples[: cfg.calibration.samples]
    if not samples:
        raise MissingStatsError("calibration set is empty")

    plan = build_plan(g, cfg, logger=log)
    captured = capture_linear_inputs(g, samples)
    layer_ids = list(plan)
    log.info(
        "Quantizing model | layers=%d | samples=%d | weights=%s/%d | activations=%s/%d | method=%s | workers=%d",
        len(layer_ids),
        len(samples),
        cfg.weights.kind,
        cfg.weights.bits,
        cfg.activations.kind,
        cfg.activations.bits,
        cfg.calibration.method,
        cfg.workers,
    )

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(
                pool.map(lambda layer_id: _guarded(g, plan[layer_id], captured[layer_id], cfg, log), layer_ids)
            )
    else:
        outcomes = [_guarded(g, plan[layer_id], captured[layer_id], cfg, log) for layer_id in layer_ids]

    report = QuantReport(config=cfg.as_flat(), plan=plan)
    for outcome in outcomes:
        report.record_layer(outcome)
    model = QuantizedModel(
        g, plan, {outcome.layer_id: outcome.layer for outcome in outcomes if outcome.layer is not None}
    )
    report.record_metrics(evaluate(g, model, samples))
    log.info(
        "Quantization finished | quantized=%d | skipped=%d | fallbacks=%d",
        report.quantized,
        report.skipped,
        report.fallbacks,
    )
    return model, report


def evaluate(g: Graph, model: QuantizedModel, eval_inputs: Sequence[CalibSample]) -> List[ErrorReportRow]:
    """MSE, Frobenius, PSNR and SSIM per graph output, rows of all samples stacked."""

    if model.graph is not g and [n.id for n in model.graph.nodes] != [n.id for n in g.nodes]:
        raise ValidationError("quantized model was built for a different graph")
    if not eval_inputs:
        raise MissingStatsError("evaluation needs at least one input binding")
    reference: Dict[str, List[np.ndarray]] = {name: [] for name in g.outputs}
    candidate: Dict[str, List[np.ndarray]] = {name: [] for name in g.outputs}
    for sample in eval_inputs:
        fp = execute(g, sample)
        quant = model.run(sample)
        for name in g.outputs:
            if fp[name].shape != quant[name].shape:
                raise ShapeMismatchError(f"output {name}: {fp[name].shape} vs {quant[name].shape}")
            reference[name].append(fp[name])
            candidate[name].append(quant[name])
    rows: List[ErrorReportRow] = []
    for name in g.outputs:
        rows.extend(metric_rows(name, np.concatenate(reference[name]), np.concatenate(candidate[name])))
    return rows


__all__ = [
    "CalibSample",
    "LayerOutcome",
    "QuantReport",
    "QuantizedModel",
    "capture_linear_inputs",
    "evaluate",
    "quantize_model",
    "resolve_activation_scheme",
]
