"""Output bundle: qmodel.json, qweights.bin and report.json under one directory."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

import numpy as np

from .container import read_container, write_container
from .engine import QuantizedModel, QuantReport
from .errors import ArtifactIOError, GraphParseError, ValidationError
from .graphir import FORMAT_VERSION, Graph
from .numerics import as_tensor, freeze
from .quantcore import QParams, QuantizedLayer, QuantizedTensor, Scheme
from .seginfer import PlanToggles, QuantPlan, SegmentPlan

LOGGER = logging.getLogger(__name__)

QMODEL_FILE = "qmodel.json"
QWEIGHTS_FILE = "qweights.bin"
REPORT_FILE = "report.json"
BUNDLE_FILES = (QMODEL_FILE, QWEIGHTS_FILE, REPORT_FILE)

LAYER_STATUSES = ("quantized", "skipped")
REPORT_KEYS = ("version", "config", "optimizer_order", "notes", "plan", "layers", "metrics", "summary")


def dumps(payload: Any) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""

    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}", code="io.write") from exc


def _read_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ArtifactIOError(f"file not found: {path}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{path}: invalid JSON ({exc})") from exc


def _layer_entry(layer: QuantizedLayer, tensors: Dict[str, np.ndarray]) -> Dict[str, Any]:
    weight = layer.weight
    refs: Dict[str, str] = {}

    def put(suffix: str, array: np.ndarray) -> None:
        name = f"{layer.layer_id}/{suffix}"
        tensors[name] = array
        refs[suffix] = name

    if weight.codes is not None:
        put("codes", weight.codes.astype(np.int8))
    if weight.neg_codes is not None:
        put("neg_codes", weight.neg_codes.astype(np.int8))
    if weight.payload is not None:
        put("payload", np.asarray(weight.payload, dtype=np.float32))
    if layer.bias is not None:
        put("bias", np.asarray(layer.bias, dtype=np.float32))
    if layer.smooth is not None:
        put("smooth", np.asarray(layer.smooth, dtype=np.float32))
    if layer.lowrank is not None:
        put("lowrank_left", np.asarray(layer.lowrank[0], dtype=np.float32))
        put("lowrank_right", np.asarray(layer.lowrank[1], dtype=np.float32))
    return {
        "method": layer.method,
        "plan": layer.plan.to_dict(),
        "weights": {
            "scheme": weight.scheme.to_dict(),
            "shape": list(weight.shape),
            "row_bounds": [list(b) for b in weight.row_bounds],
            "col_bounds": [list(b) for b in weight.col_bounds],
            "params": [[p.to_dict() for p in group] for group in weight.params],
        },
        "activations": {
            "scheme": layer.act_scheme.to_dict(),
            "params": None if layer.act_params is None else [p.to_dict() for p in layer.act_params],
        },
        "tensors": refs,
        "notes": list(layer.notes),
    }


def checked_report(report: QuantReport) -> Dict[str, Any]:
    """Report payload, raising ValidationError when it breaks the report schema."""

    payload = report.to_dict()
    problems = validate_report(payload)
    if problems:
        raise ValidationError(f"report failed validation: {problems[0]}")
    return payload


def save_bundle(model: QuantizedModel, report: QuantReport, out_dir: Path) -> Tuple[Path, ...]:
    """Write the three bundle files; the report is checked before anything is written."""

    report_payload = checked_report(report)
    target = Path(out_dir)
    tensors: Dict[str, np.ndarray] = {}
    layers = {layer_id: _layer_entry(layer, tensors) for layer_id, layer in model.layers.items()}
    qmodel = {
        "format_version": FORMAT_VERSION,
        "version": report.version,
        "toggles": {"seglinear": model.plan.toggles.seglinear, "dualscale": model.plan.toggles.dualscale},
        "plan": model.plan.to_dict(),
        "layers": layers,
    }
    paths = (target / QMODEL_FILE, target / QWEIGHTS_FILE, target / REPORT_FILE)
    _write_text(paths[0], dumps(qmodel))
    write_container(paths[1], tensors)
    _write_text(paths[2], dumps(report_payload))
    LOGGER.info("Wrote bundle | out=%s | layers=%d | tensors=%d", target, len(layers), len(tensors))
    return paths


def _bounds(payload: Any) -> Tuple[Tuple[int, int], ...]:
    return tuple((int(lo), int(hi)) for lo, hi in payload)


def _restore_layer(layer_id: str, entry: Mapping[str, Any], tensors: Mapping[str, np.ndarray]) -> QuantizedLayer:
    refs = entry.get("tensors", {})

    def get(suffix: str, dtype: Any) -> np.ndarray | None:
        name = refs.get(suffix)
        if name is None:
            return None
        if name not in tensors:
            raise ValidationError(f"{layer_id}: tensor {name!r} missing from {QWEIGHTS_FILE}")
        return freeze(np.asarray(tensors[name]).astype(dtype))

    w = entry["weights"]
    scheme = Scheme.from_dict(w["scheme"])
    weight = QuantizedTensor(
        scheme,
        (int(w["shape"][0]), int(w["shape"][1])),
        _bounds(w["row_bounds"]),
        _bounds(w["col_bounds"]),
        tuple(tuple(QParams.from_dict(p) for p in group) for group in w["params"]),
        get("codes", np.int32),
        get("neg_codes", np.int32),
        get("payload", np.float32),
    )
    act = entry["activations"]
    left, right = get("lowrank_left", np.float32), get("lowrank_right", np.float32)
    bias = get("bias", np.float32)
    smooth = get("smooth", np.float32)
    return QuantizedLayer(
        layer_id=layer_id,
        plan=SegmentPlan.from_dict(layer_id, entry["plan"]),
        weight=weight,
        act_scheme=Scheme.from_dict(act["scheme"]),
        act_params=None if act.get("params") is None else tuple(QParams.from_dict(p) for p in act["params"]),
        bias=None if bias is None else as_tensor(bias),
        smooth=None if smooth is None else as_tensor(smooth),
        lowrank=None if left is None or right is None else (as_tensor(left), as_tensor(right)),
        method=str(entry.get("method", "amax")),
        notes=tuple(entry.get("notes", ())),
    )


def load_bundle(out_dir: Path, graph: Graph) -> QuantizedModel:
    """Rebuild a QuantizedModel over *graph* from a bundle directory."""

    source = Path(out_dir)
    payload = _read_json(source / QMODEL_FILE)
    if payload.get("format_version") != FORMAT_VERSION:
        raise GraphParseError(f"{source / QMODEL_FILE}: unsupported format_version {payload.get('format_version')!r}")
    tensors = read_container(source / QWEIGHTS_FILE)
    toggles = PlanToggles(**payload.get("toggles", {}))
    plan = QuantPlan(
        {layer_id: SegmentPlan.from_dict(layer_id, entry) for layer_id, entry in payload["plan"].items()},
        toggles,
    )
    missing = [layer_id for layer_id in graph.linear_ids() if layer_id not in plan.layers]
    if missing:
        raise ValidationError(f"bundle plan does not cover linear layers {missing}")
    layers = {layer_id: _restore_layer(layer_id, entry, tensors) for layer_id, entry in payload["layers"].items()}
    return QuantizedModel(graph, plan, layers)


def validate_report(payload: Any) -> List[str]:
    """Structural check of a report payload; returns violations (empty when valid)."""

    problems: List[str] = []
    if not isinstance(payload, Mapping):
        return ["report must be a JSON object"]
    for key in REPORT_KEYS:
        if key not in payload:
            problems.append(f"missing key {key!r}")
    if problems:
        return problems
    if not isinstance(payload["version"], str):
        problems.append("version must be a string")
    if not isinstance(payload["config"], Mapping):
        problems.append("config must be an object")
    plan = payload["plan"]
    layers = payload["layers"]
    if not isinstance(layers, list):
        return problems + ["layers must be a list"]
    ids = [entry.get("id") for entry in layers if isinstance(entry, Mapping)]
    if isinstance(plan, Mapping) and sorted(ids) != sorted(plan):
        problems.append("layers must hold exactly one entry per planned linear layer")
    for index, entry in enumerate(layers):
        problems.extend(_check_layer(index, entry))
    problems.extend(_check_rows("metrics", payload["metrics"]))
    summary = payload["summary"]
    if not isinstance(summary, Mapping):
        problems.append("summary must be an object")
    else:
        quantized = sum(1 for entry in layers if isinstance(entry, Mapping) and entry.get("status") == "quantized")
        if summary.get("layers") != len(layers):
            problems.append("summary.layers does not match the layer list")
        if summary.get("quantized") != quantized:
            problems.append("summary.quantized does not match the layer list")
        if summary.get("skipped") != len(layers) - quantized:
            problems.append("summary.skipped does not match the layer list")
    return problems


def _check_layer(index: int, entry: Any) -> List[str]:
    where = f"layers[{index}]"
    if not isinstance(entry, Mapping):
        return [f"{where} must be an object"]
    problems = []
    if not isinstance(entry.get("id"), str):
        problems.append(f"{where}.id must be a string")
    status = entry.get("status")
    if status not in LAYER_STATUSES:
        problems.append(f"{where}.status must be one of {LAYER_STATUSES}")
    if not isinstance(entry.get("plan"), Mapping):
        problems.append(f"{where}.plan must be an object")
    if not isinstance(entry.get("notes"), list):
        problems.append(f"{where}.notes must be a list")
    if status == "quantized":
        for key in ("method", "weights", "activations", "weight_params", "errors"):
            if key not in entry:
                problems.append(f"{where} is missing {key!r}")
        problems.extend(_check_rows(f"{where}.errors", entry.get("errors", [])))
    return problems


def _check_rows(where: str, rows: Any) -> List[str]:
    if not isinstance(rows, list):
        return [f"{where} must be a list"]
    problems = []
    for index, row in enumerate(rows):
        if not isinstance(row, Mapping) or set(row) != {"layer", "metric", "value"}:
            problems.append(f"{where}[{index}] must have keys layer, metric, value")
        elif not isinstance(row["value"], (int, float)) or not np.isfinite(row["value"]):
            problems.append(f"{where}[{index}].value must be a finite number")
    return problems


__all__ = [
    "BUNDLE_FILES",
    "QMODEL_FILE",
    "QWEIGHTS_FILE",
    "REPORT_FILE",
    "checked_report",
    "dumps",
    "load_bundle",
    "save_bundle",
    "validate_report",
]
