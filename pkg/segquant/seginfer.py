"""Segment-plan inference: SegLinear boundaries and DualScale eligibility from graph patterns."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Protocol, Sequence, Tuple

from .errors import ValidationError
from .graphir import POLARITY_ASYMMETRIC, Graph, Node, Port

LOGGER = logging.getLogger(__name__)

OUTPUT_PATTERNS = ("chunk", "split")
INPUT_PATTERNS = ("concat", "stack")


class SupportsToggles(Protocol):
    seglinear: bool
    dualscale: bool


@dataclass(frozen=True)
class PlanToggles:
    seglinear: bool = True
    dualscale: bool = True


@dataclass(frozen=True)
class Provenance:
    """Which pattern produced each side of a plan, with the matching node ids."""

    output_pattern: str = "none"
    output_node: str | None = None
    input_pattern: str = "none"
    input_node: str | None = None
    activation: str | None = None
    grid: bool = False
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "output": {"pattern": self.output_pattern, "node": self.output_node},
            "input": {"pattern": self.input_pattern, "node": self.input_node},
            "activation": self.activation,
            "grid": self.grid,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Provenance":
        output = payload.get("output", {})
        inputs = payload.get("input", {})
        return cls(
            output_pattern=str(output.get("pattern", "none")),
            output_node=output.get("node"),
            input_pattern=str(inputs.get("pattern", "none")),
            input_node=inputs.get("node"),
            activation=payload.get("activation"),
            grid=bool(payload.get("grid", False)),
            notes=tuple(payload.get("notes", ())),
        )


@dataclass(frozen=True)
class SegmentPlan:
    layer_id: str
    out_segments: Tuple[int, ...]
    in_segments: Tuple[int, ...]
    dualscale_eligible: bool = False
    provenance: Provenance = field(default_factory=Provenance)

    @property
    def in_features(self) -> int:
        return sum(self.in_segments)

    @property
    def out_features(self) -> int:
        return sum(self.out_segments)

    @property
    def is_segmented(self) -> bool:
        return len(self.out_segments) > 1 or len(self.in_segments) > 1

    def in_bounds(self) -> Tuple[Tuple[int, int], ...]:
        return _bounds(self.in_segments)

    def out_bounds(self) -> Tuple[Tuple[int, int], ...]:
        return _bounds(self.out_segments)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "out_segments": list(self.out_segments),
            "in_segments": list(self.in_segments),
            "dualscale": self.dualscale_eligible,
            "provenance": self.provenance.to_dict(),
        }

    @classmethod
    def from_dict(cls, layer_id: str, payload: Mapping[str, Any]) -> "SegmentPlan":
        return cls(
            layer_id,
            tuple(int(width) for width in payload["out_segments"]),
            tuple(int(width) for width in payload["in_segments"]),
            bool(payload.get("dualscale", False)),
            Provenance.from_dict(payload.get("provenance", {})),
        )

    @classmethod
    def singleton(cls, layer_id: str, in_features: int, out_features: int) -> "SegmentPlan":
        return cls(layer_id, (int(out_features),), (int(in_features),))


def _bounds(widths: Sequence[int]) -> Tuple[Tuple[int, int], ...]:
    bounds: List[Tuple[int, int]] = []
    start = 0
    for width in widths:
        bounds.append((start, start + width))
        start += width
    return tuple(bounds)


@dataclass(frozen=True)
class QuantPlan:
    """One SegmentPlan per linear node, in topological order."""

    layers: Mapping[str, SegmentPlan]
    toggles: PlanToggles = field(default_factory=PlanToggles)

    def __getitem__(self, layer_id: str) -> SegmentPlan:
        return self.layers[layer_id]

    def __iter__(self) -> Iterator[str]:
        return iter(self.layers)

    def __len__(self) -> int:
        return len(self.layers)

    def to_dict(self) -> Dict[str, Any]:
        return {layer_id: plan.to_dict() for layer_id, plan in self.layers.items()}


def _segment_traversable(node: Node) -> bool:
    if node.kind == "activation":
        return node.activation != "geglu"
    return node.kind == "layernorm" or node.is_unary_constant


def _eligibility_traversable(node: Node) -> bool:
    return node.is_unary_constant


def _require_linear(g: Graph, layer: str) -> Node:
    node = g.node(layer)
    if node.kind != "linear":
        raise ValidationError(f"{layer!r} is a {node.kind} node, not linear")
    return node


def _match_output(g: Graph, layer: str) -> Tuple[Tuple[int, ...], Provenance]:
    width = g.features(layer)
    current = Port(layer, 0)
    while True:
        consumers = g.consumers(current.node, current.port)
        if len(consumers) != 1:
            note = ("fan-out",) if len(consumers) > 1 else ()
            return (width,), Provenance(notes=note)
        dst, _ = consumers[0]
        node = g.node(dst)
        if node.kind == "chunk":
            count = int(node.attrs["count"])
            return (width // count,) * count, Provenance(output_pattern="chunk", output_node=dst)
        if node.kind == "split":
            sizes = tuple(int(size) for size in node.attrs["sizes"])
            return sizes, Provenance(output_pattern="split", output_node=dst)
        if not _segment_traversable(node):
            return (width,), Provenance()
        current = Port(dst, 0)


def _match_input(g: Graph, layer: str) -> Tuple[Tuple[int, ...], Provenance]:
    source = g.producers(layer)[0]
    width = g.features(source.node, source.port)
    while True:
        node = g.node(source.node)
        if node.kind in INPUT_PATTERNS:
            widths = tuple(g.features(port.node, port.port) for port in g.producers(node.id))
            return widths, Provenance(input_pattern=node.kind, input_node=node.id)
        if not _segment_traversable(node):
            return (width,), Provenance()
        source = g.producers(node.id)[0]


def infer_output_segments(g: Graph, layer: str) -> Tuple[int, ...]:
    """Widths of the output-feature segments of *layer* (singleton when no pattern fires)."""

    _require_linear(g, layer)
    return _match_output(g, layer)[0]


def infer_input_segments(g: Graph, layer: str) -> Tuple[int, ...]:
    _require_linear(g, layer)
    return _match_input(g, layer)[0]


def _upstream_activation(g: Graph, layer: str) -> str | None:
    source = g.producers(layer)[0]
    while True:
        node = g.node(source.node)
        if node.kind == "activation":
            return node.id if node.activation in POLARITY_ASYMMETRIC else None
        if not _eligibility_traversable(node):
            return None
        source = g.producers(node.id)[0]


def find_act_to_linear(g: Graph) -> Tuple[Tuple[str, str], ...]:
    """``(activation id, linear id)`` pairs, ordered by the linear's topological position."""

    pairs: List[Tuple[str, str]] = []
    for layer in g.linear_ids():
        activation = _upstream_activation(g, layer)
        if activation is not None:
            pairs.append((activation, layer))
    return tuple(pairs)


def plan_layer(g: Graph, layer: str, toggles: SupportsToggles) -> SegmentPlan:
    node = _require_linear(g, layer)
    weight = g.linear_weight(node.id)
    in_features, out_features = int(weight.shape[0]), int(weight.shape[1])
    activation = _upstream_activation(g, layer)
    eligible = bool(toggles.dualscale and activation is not None)
    if not toggles.seglinear:
        return SegmentPlan(
            layer,
            (out_features,),
            (in_features,),
            eligible,
            Provenance(activation=activation),
        )
    out_segments, out_prov = _match_output(g, layer)
    in_segments, in_prov = _match_input(g, layer)
    grid = len(out_segments) > 1 and len(in_segments) > 1
    if grid:
        LOGGER.debug("Layer %s matches both input and output patterns | grid=true", layer)
    provenance = Provenance(
        output_pattern=out_prov.output_pattern,
        output_node=out_prov.output_node,
        input_pattern=in_prov.input_pattern,
        input_node=in_prov.input_node,
        activation=activation,
        grid=grid,
        notes=out_prov.notes + in_prov.notes,
    )
    return SegmentPlan(layer, out_segments, in_segments, eligible, provenance)


def build_plan(g: Graph, cfg: SupportsToggles | None = None, *, logger: logging.Logger | None = None) -> QuantPlan:
    log = logger or LOGGER
    toggles = PlanToggles(
        seglinear=bool(getattr(cfg, "seglinear", True)),
        dualscale=bool(getattr(cfg, "dualscale", True)),
    )
    layers = {layer: plan_layer(g, layer, toggles) for layer in g.linear_ids()}
    segmented = sum(1 for plan in layers.values() if plan.is_segmented)
    eligible = sum(1 for plan in layers.values() if plan.dualscale_eligible)
    log.info(
        "Built quant plan | layers=%d | segmented=%d | dualscale=%d | seglinear=%s | dualscale_toggle=%s",
        len(layers),
        segmented,
        eligible,
        toggles.seglinear,
        toggles.dualscale,
    )
    return QuantPlan(layers=layers, toggles=toggles)


__all__ = [
    "INPUT_PATTERNS",
    "OUTPUT_PATTERNS",
    "PlanToggles",
    "Provenance",
    "QuantPlan",
    "SegmentPlan",
    "build_plan",
    "find_act_to_linear",
    "infer_input_segments",
    "infer_output_segments",
    "plan_layer",
]
