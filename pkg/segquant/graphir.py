"""Computation-graph model, on-disk format, validation and the FP32 executor."""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Dict, Iterable, List, Mapping, MutableMapping, NamedTuple, Sequence, Tuple

import numpy as np

from .container import read_container, write_container
from .errors import (
    ArtifactIOError,
    DanglingWeightError,
    GraphCycleError,
    GraphParseError,
    MissingInputError,
    ShapeConflictError,
    ShapeMismatchError,
)
from .numerics import Tensor, as_tensor, freeze, matmul

LOGGER = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_LAYERNORM_EPS = 1e-5

# tanh-approximate GELU: 0.5 * x * (1 + tanh(GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x**3)))
GELU_SQRT_2_OVER_PI = np.float32(0.7978845608028654)
GELU_CUBIC = np.float32(0.044715)

NODE_KINDS = frozenset(
    {
        "input",
        "linear",
        "chunk",
        "split",
        "concat",
        "stack",
        "activation",
        "add",
        "mul",
        "layernorm",
        "scale_shift",
        "output",
    }
)
ACTIVATION_FNS = ("silu", "gelu", "geglu", "relu")
POLARITY_ASYMMETRIC = frozenset({"silu", "gelu", "geglu"})
_FEATURE_AXES = (-1, 1)


class Port(NamedTuple):
    """A node output: ``(node id, output index)``."""

    node: str
    port: int = 0


@dataclass(frozen=True)
class Node:
    """Typed operator with kind-specific attributes."""

    id: str
    kind: str
    attrs: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "Node":
        try:
            node_id = str(payload["id"])
            kind = str(payload["kind"])
        except KeyError as exc:
            raise GraphParseError(f"node entry missing {exc.args[0]!r}: {dict(payload)}") from exc
        attrs = payload.get("attrs", {})
        if not isinstance(attrs, Mapping):
            raise GraphParseError(f"node {node_id}: attrs must be an object")
        return cls(id=node_id, kind=kind, attrs=dict(attrs))

    def to_dict(self) -> Dict[str, Any]:
        return {"id": self.id, "kind": self.kind, "attrs": dict(self.attrs)}

    @property
    def activation(self) -> str | None:
        return str(self.attrs["fn"]) if self.kind == "activation" else None

    @property
    def is_unary_constant(self) -> bool:
        """add/mul with a scalar or weight-vector operand instead of a second input."""

        return self.kind in ("add", "mul") and ("scalar" in self.attrs or "weight" in self.attrs)

    def arity(self) -> int | None:
        """Number of tensor inputs; ``None`` means variadic."""

        if self.kind == "input":
            return 0
        if self.kind in ("concat", "stack"):
            return None
        if self.kind in ("add", "mul"):
            return 1 if self.is_unary_constant else 2
        if self.kind == "scale_shift":
            return 3
        return 1

    def output_count(self) -> int:
        if self.kind == "chunk":
            return int(self.attrs["count"])
        if self.kind == "split":
            return len(self.attrs["sizes"])
        if self.kind == "output":
            return 0
        return 1


@dataclass(frozen=True)
class Edge:
    src: str
    src_port: int
    dst: str
    dst_port: int

    @classmethod
    def from_list(cls, payload: Sequence[Any]) -> "Edge":
        if not isinstance(payload, Sequence) or isinstance(payload, str) or len(payload) != 4:
            raise GraphParseError(f"edge must be [src, srcport, dst, dstport], got {payload!r}")
        try:
            return cls(str(payload[0]), int(payload[1]), str(payload[2]), int(payload[3]))
        except (TypeError, ValueError) as exc:
            raise GraphParseError(f"malformed edge {payload!r}") from exc

    def to_list(self) -> List[Any]:
        return [self.src, self.src_port, self.dst, self.dst_port]


class Graph:
    """Immutable, validated DAG with its weights."""

    def __init__(
        self,
        nodes: Iterable[Node],
        edges: Iterable[Edge],
        weights: Mapping[str, np.ndarray],
        inputs: Sequence[str],
        outputs: Sequence[str],
    ) -> None:
        self._nodes: Tuple[Node, ...] = tuple(nodes)
        self._edges: Tuple[Edge, ...] = tuple(edges)
        self._weights: Mapping[str, Tensor] = MappingProxyType(
            {name: as_tensor(value) for name, value in weights.items()}
        )
        self._inputs = tuple(inputs)
        self._outputs = tuple(outputs)
        self._by_id: Dict[str, Node] = {}
        self._producers: Dict[str, Dict[int, Port]] = {}
        self._consumers: Dict[Port, List[Tuple[str, int]]] = {}
        self._order: Tuple[str, ...] = ()
        self._features: Dict[Port, int] = {}
        self._validate()

    # ------------------------------------------------------------------
    # Accessors
    # ------------------------------------------------------------------
    @property
    def nodes(self) -> Tuple[Node, ...]:
        return self._nodes

    @property
    def edges(self) -> Tuple[Edge, ...]:
        return self._edges

    @property
    def weights(self) -> Mapping[str, Tensor]:
        return self._weights

    @property
    def inputs(self) -> Tuple[str, ...]:
        return self._inputs

    @property
    def outputs(self) -> Tuple[str, ...]:
        return self._outputs

    def node(self, node_id: str) -> Node:
        try:
            return self._by_id[node_id]
        except KeyError:
            raise KeyError(f"unknown node {node_id!r}") from None

    def producers(self, node_id: str) -> Tuple[Port, ...]:
        bound = self._producers.get(node_id, {})
        return tuple(bound[index] for index in sorted(bound))

    def consumers(self, node_id: str, port: int = 0) -> Tuple[Tuple[str, int], ...]:
        return tuple(sorted(self._consumers.get(Port(node_id, port), ())))

    def features(self, node_id: str, port: int = 0) -> int:
        return self._features[Port(node_id, port)]

    def feature_ports(self) -> Tuple[Port, ...]:
        return tuple(self._features)

    def weight(self, name: str) -> Tensor:
        return self._weights[name]

    def topo_order(self) -> Tuple[str, ...]:
        return self._order

    def linear_ids(self) -> Tuple[str, ...]:
        return tuple(node_id for node_id in self._order if self._by_id[node_id].kind == "linear")

    def linear_weight(self, node_id: str) -> Tensor:
        return self._weights[str(self.node(node_id).attrs["weight"])]

    def linear_bias(self, node_id: str) -> Tensor | None:
        name = self.node(node_id).attrs.get("bias")
        return None if name is None else self._weights[str(name)]

    def replace_weights(self, updates: Mapping[str, np.ndarray]) -> "Graph":
        merged = dict(self._weights)
        for name, value in updates.items():
            if name not in merged:
                raise DanglingWeightError(f"cannot replace unknown weight {name!r}")
            merged[name] = value
        return Graph(self._nodes, self._edges, merged, self._inputs, self._outputs)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "version": FORMAT_VERSION,
            "nodes": [node.to_dict() for node in self._nodes],
            "edges": [edge.to_list() for edge in self._edges],
            "inputs": list(self._inputs),
            "outputs": list(self._outputs),
        }

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------
    def _validate(self) -> None:
        for node in self._nodes:
            if node.id in self._by_id:
                raise GraphParseError(f"duplicate node id {node.id!r}")
            if node.kind not in NODE_KINDS:
                raise GraphParseError(f"node {node.id}: unknown kind {node.kind!r}")
            _check_attrs(node)
            self._by_id[node.id] = node
        self._index_edges()
        self._check_ports()
        self._order = _kahn(self._by_id, self._producers)
        self._check_weights()
        self._infer_features()

    def _index_edges(self) -> None:
        for edge in self._edges:
            for endpoint in (edge.src, edge.dst):
                if endpoint not in self._by_id:
                    raise GraphParseError(f"edge {edge.to_list()} references unknown node {endpoint!r}")
            src_node = self._by_id[edge.src]
            if not 0 <= edge.src_port < src_node.output_count():
                raise GraphParseError(f"edge {edge.to_list()}: {edge.src} has no output port {edge.src_port}")
            bound = self._producers.setdefault(edge.dst, {})
            if edge.dst_port in bound:
                raise GraphParseError(f"input port {edge.dst_port} of {edge.dst} bound twice")
            bound[edge.dst_port] = Port(edge.src, edge.src_port)
            self._consumers.setdefault(Port(edge.src, edge.src_port), []).append((edge.dst, edge.dst_port))

    def _check_ports(self) -> None:
        for node in self._nodes:
            bound = sorted(self._producers.get(node.id, {}))
            arity = node.arity()
            expected = list(range(len(bound))) if arity is None else list(range(arity))
            if bound != expected or (arity is None and not bound):
                raise GraphParseError(f"node {node.id} ({node.kind}) has input ports {bound}, expected {expected}")
        declared_inputs = sorted(node.id for node in self._nodes if node.kind == "input")
        declared_outputs = sorted(node.id for node in self._nodes if node.kind == "output")
        if sorted(self._inputs) != declared_inputs:
            raise GraphParseError(f"inputs {list(self._inputs)} do not match input nodes {declared_inputs}")
        if sorted(self._outputs) != declared_outputs:
            raise GraphParseError(f"outputs {list(self._outputs)} do not match output nodes {declared_outputs}")

    def _check_weights(self) -> None:
        for node in self._nodes:
            for key in ("weight", "bias"):
                name = node.attrs.get(key)
                if name is not None and str(name) not in self._weights:
                    raise DanglingWeightError(f"node {node.id}: weight {name!r} not present in weights file")

    def _infer_features(self) -> None:
        for node_id in self._order:
            node = self._by_id[node_id]
            widths = [self._features[port] for port in self.producers(node_id)]
            for index, width in enumerate(_node_features(node, widths, self._weights)):
                self._features[Port(node_id, index)] = width
            if node.kind == "output":
                self._features[Port(node_id, 0)] = widths[0]


def _check_attrs(node: Node) -> None:
    attrs = node.attrs
    try:
        if node.kind == "input":
            if int(attrs["features"]) <= 0:
                raise GraphParseError(f"node {node.id}: features must be positive")
        elif node.kind == "linear":
            str(attrs["weight"])
        elif node.kind == "chunk":
            if int(attrs["count"]) < 2:
                raise GraphParseError(f"node {node.id}: chunk count must be >= 2")
        elif node.kind == "split":
            sizes = [int(size) for size in attrs["sizes"]]
            if not sizes or any(size <= 0 for size in sizes):
                raise GraphParseError(f"node {node.id}: split sizes must be positive")
        elif node.kind == "activation":
            if attrs["fn"] not in ACTIVATION_FNS:
                raise GraphParseError(f"node {node.id}: unknown activation {attrs['fn']!r}")
        elif node.kind == "layernorm":
            if float(attrs.get("eps", DEFAULT_LAYERNORM_EPS)) <= 0:
                raise GraphParseError(f"node {node.id}: layernorm eps must be positive")
    except (KeyError, TypeError, ValueError) as exc:
        raise GraphParseError(f"node {node.id} ({node.kind}): malformed attrs {dict(attrs)}") from exc
    if node.kind in ("chunk", "split", "concat", "stack", "layernorm"):
        axis = int(attrs.get("axis", -1))
        if axis not in _FEATURE_AXES:
            raise GraphParseError(f"node {node.id}: only the feature axis (-1) is supported, got {axis}")


def _node_features(node: Node, widths: Sequence[int], weights: Mapping[str, Tensor]) -> List[int]:
    kind = node.kind
    if kind == "input":
        return [int(node.attrs["features"])]
    if kind == "output":
        return []
    if kind == "linear":
        weight = weights[str(node.attrs["weight"])]
        if weight.ndim != 2 or weight.shape[0] != widths[0]:
            raise ShapeConflictError(
                f"linear {node.id}: weight {weight.shape} does not accept {widths[0]} input features"
            )
        bias_name = node.attrs.get("bias")
        if bias_name is not None and weights[str(bias_name)].shape != (weight.shape[1],):
            raise ShapeConflictError(f"linear {node.id}: bias shape must be ({weight.shape[1]},)")
        return [int(weight.shape[1])]
    if kind == "chunk":
        count = int(node.attrs["count"])
        if widths[0] % count:
            raise ShapeConflictError(f"chunk {node.id}: {widths[0]} features not divisible by {count}")
        return [widths[0] // count] * count
    if kind == "split":
        sizes = [int(size) for size in node.attrs["sizes"]]
        if sum(sizes) != widths[0]:
            raise ShapeConflictError(f"split {node.id}: sizes {sizes} do not sum to {widths[0]}")
        return sizes
    if kind == "concat":
        return [sum(widths)]
    if kind == "stack":
        if len(set(widths)) != 1:
            raise ShapeConflictError(f"stack {node.id}: operands differ in width {list(widths)}")
        return [sum(widths)]
    if kind == "activation":
        if node.attrs["fn"] == "geglu":
            if widths[0] % 2:
                raise ShapeConflictError(f"geglu {node.id}: odd width {widths[0]}")
            return [widths[0] // 2]
        return [widths[0]]
    if kind in ("add", "mul"):
        if "weight" in node.attrs:
            vector = weights[str(node.attrs["weight"])]
            if vector.shape != (widths[0],):
                raise ShapeConflictError(f"{kind} {node.id}: operand shape {vector.shape} != ({widths[0]},)")
        if len(set(widths)) != 1:
            raise ShapeConflictError(f"{kind} {node.id}: operand widths differ {list(widths)}")
        return [widths[0]]
    if kind in ("layernorm", "scale_shift"):
        if len(set(widths)) != 1:
            raise ShapeConflictError(f"{kind} {node.id}: operand widths differ {list(widths)}")
        return [widths[0]]
    raise GraphParseError(f"node {node.id}: unknown kind {kind!r}")


def _kahn(nodes: Mapping[str, Node], producers: Mapping[str, Mapping[int, Port]]) -> Tuple[str, ...]:
    indegree = {node_id: 0 for node_id in nodes}
    dependents: Dict[str, List[str]] = {node_id: [] for node_id in nodes}
    for dst, bound in producers.items():
        for port in bound.values():
            indegree[dst] += 1
            dependents[port.node].append(dst)
    ready = [node_id for node_id, degree in indegree.items() if degree == 0]
    heapq.heapify(ready)
    order: List[str] = []
    while ready:
        current = heapq.heappop(ready)
        order.append(current)
        for dst in dependents[current]:
            indegree[dst] -= 1
            if indegree[dst] == 0:
                heapq.heappush(ready, dst)
    if len(order) != len(nodes):
        stuck = sorted(node_id for node_id, degree in indegree.items() if degree > 0)
        raise GraphCycleError(f"graph contains a cycle through {stuck}")
    return tuple(order)


def topo_order(g: Graph) -> Tuple[str, ...]:
    """Producers before consumers; ties broken by node id."""

    return g.topo_order()


def infer_shapes(g: Graph) -> Dict[Port, int]:
    """Feature width of every produced tensor, keyed by ``(node, port)``."""

    return {Port(node_id, port): g.features(node_id, port) for node_id, port in g.feature_ports()}


# ----------------------------------------------------------------------
# Activations
# ----------------------------------------------------------------------
def silu(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return x / (np.float32(1.0) + np.exp(-x))


def gelu(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)
        return np.float32(0.5) * x * (np.float32(1.0) + np.tanh(inner))


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def geglu(x: np.ndarray) -> np.ndarray:
    value, gate = np.split(x, 2, axis=-1)
    return value * gelu(gate)


ACTIVATIONS: Mapping[str, Callable[[np.ndarray], np.ndarray]] = MappingProxyType(
    {"silu": silu, "gelu": gelu, "geglu": geglu, "relu": relu}
)


# ----------------------------------------------------------------------
# Execution
# ----------------------------------------------------------------------
LinearFn = Callable[[Tensor], Tensor]
Observer = Callable[[str, Tuple[Tensor, ...]], None]


def linear_forward(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    out = matmul(x, weight)
    if bias is not None:
        out = out + bias
    return freeze(np.asarray(out, dtype=np.float32))


def execute(
    g: Graph,
    inputs: Mapping[str, np.ndarray],
    *,
    linear_overrides: Mapping[str, LinearFn] | None = None,
    observer: Observer | None = None,
) -> Dict[str, Tensor]:
    """Run *g* in topological order at FP32; returns output tensors by output id.

    *linear_overrides* substitutes the implementation of individual linear
    nodes; *observer* sees every node's outputs as they are produced.
    """

    overrides = linear_overrides or {}
    values: MutableMapping[Port, Tensor] = {}
    for name in g.inputs:
        if name not in inputs:
            raise MissingInputError(f"graph input {name!r} is not bound")
        tensor = as_tensor(inputs[name])
        if tensor.ndim != 2 or tensor.shape[1] != g.features(name):
            raise ShapeMismatchError(f"input {name!r}: expected [rows, {g.features(name)}], got {tensor.shape}")
        values[Port(name, 0)] = tensor

    results: Dict[str, Tensor] = {}
    for node_id in g.topo_order():
        node = g.node(node_id)
        if node.kind == "input":
            produced: Tuple[Tensor, ...] = (values[Port(node_id, 0)],)
        else:
            args = [values[port] for port in g.producers(node_id)]
            if node.kind == "output":
                results[node_id] = args[0]
                continue
            if node.kind == "linear" and node_id in overrides:
                produced = (overrides[node_id](args[0]),)
            else:
                produced = _evaluate(g, node, args)
        for index, tensor in enumerate(produced):
            values[Port(node_id, index)] = freeze(np.asarray(tensor, dtype=np.float32))
        if observer is not None:
            observer(node_id, tuple(values[Port(node_id, index)] for index in range(len(produced))))
    return results


def _evaluate(g: Graph, node: Node, args: Sequence[Tensor]) -> Tuple[np.ndarray, ...]:
    kind = node.kind
    attrs = node.attrs
    try:
        if kind == "linear":
            return (linear_forward(args[0], g.linear_weight(node.id), g.linear_bias(node.id)),)
        if kind == "chunk":
            return tuple(np.split(args[0], int(attrs["count"]), axis=1))
        if kind == "split":
            cuts = np.cumsum([int(size) for size in attrs["sizes"]])[:-1]
            return tuple(np.split(args[0], cuts, axis=1))
        if kind in ("concat", "stack"):
            return (np.concatenate(args, axis=1),)
        if kind == "activation":
            return (ACTIVATIONS[str(attrs["fn"])](args[0]),)
        if kind in ("add", "mul"):
            operand = _constant_operand(g, node) if node.is_unary_constant else args[1]
            op = np.add if kind == "add" else np.multiply
            return (op(args[0], operand, dtype=np.float32),)
        if kind == "layernorm":
            eps = np.float32(attrs.get("eps", DEFAULT_LAYERNORM_EPS))
            x = args[0]
            mean = x.mean(axis=1, keepdims=True, dtype=np.float32)
            centred = x - mean
            var = (centred * centred).mean(axis=1, keepdims=True, dtype=np.float32)
            return (centred / np.sqrt(var + eps),)
        if kind == "scale_shift":
            x, scale, shift = args
            return (x * (np.float32(1.0) + scale) + shift,)
    except ValueError as exc:
        raise ShapeMismatchError(f"node {node.id} ({kind}): {exc}") from exc
    raise GraphParseError(f"node {node.id}: cannot execute kind {kind!r}")


def _constant_operand(g: Graph, node: Node) -> np.ndarray:
    if "weight" in node.attrs:
        return g.weight(str(node.attrs["weight"]))
    return np.float32(node.attrs["scalar"])


# ----------------------------------------------------------------------
# Construction and persistence
# ----------------------------------------------------------------------
class GraphBuilder:
    """Incremental graph construction; linear weights are named ``<id>.weight``."""

    def __init__(self) -> None:
        self._nodes: List[Node] = []
        self._edges: List[Edge] = []
        self._weights: Dict[str, np.ndarray] = {}
        self._inputs: List[str] = []
        self._outputs: List[str] = []

    def _add(self, node_id: str, kind: str, sources: Sequence[Port], attrs: Mapping[str, Any] | None = None) -> Node:
        node = Node(id=node_id, kind=kind, attrs=dict(attrs or {}))
        self._nodes.append(node)
        for index, source in enumerate(sources):
            self._edges.append(Edge(source.node, source.port, node_id, index))
        return node

    def input(self, node_id: str, features: int) -> Port:
        self._add(node_id, "input", (), {"features": int(features)})
        self._inputs.append(node_id)
        return Port(node_id)

    def linear(self, node_id: str, x: Port, weight: np.ndarray, bias: np.ndarray | None = None) -> Port:
        attrs: Dict[str, Any] = {"weight": f"{node_id}.weight"}
        self._weights[attrs["weight"]] = np.asarray(weight, dtype=np.float32)
        if bias is not None:
            attrs["bias"] = f"{node_id}.bias"
            self._weights[attrs["bias"]] = np.asarray(bias, dtype=np.float32)
        self._add(node_id, "linear", (x,), attrs)
        return Port(node_id)

    def chunk(self, node_id: str, x: Port, count: int) -> Tuple[Port, ...]:
        self._add(node_id, "chunk", (x,), {"count": int(count), "axis": -1})
        return tuple(Port(node_id, index) for index in range(count))

    def split(self, node_id: str, x: Port, sizes: Sequence[int]) -> Tuple[Port, ...]:
        self._add(node_id, "split", (x,), {"sizes": [int(size) for size in sizes], "axis": -1})
        return tuple(Port(node_id, index) for index in range(len(sizes)))

    def concat(self, node_id: str, parts: Sequence[Port]) -> Port:
        self._add(node_id, "concat", parts, {"axis": -1})
        return Port(node_id)

    def stack(self, node_id: str, parts: Sequence[Port]) -> Port:
        self._add(node_id, "stack", parts, {"axis": -1})
        return Port(node_id)

    def activation(self, node_id: str, x: Port, fn: str) -> Port:
        self._add(node_id, "activation", (x,), {"fn": fn})
        return Port(node_id)

    def add(self, node_id: str, a: Port, b: Port | None = None, *, scalar: float | None = None) -> Port:
        return self._binary(node_id, "add", a, b, scalar=scalar)

    def mul(
        self,
        node_id: str,
        a: Port,
        b: Port | None = None,
        *,
        scalar: float | None = None,
        vector: np.ndarray | None = None,
    ) -> Port:
        return self._binary(node_id, "mul", a, b, scalar=scalar, vector=vector)

    def _binary(
        self,
        node_id: str,
        kind: str,
        a: Port,
        b: Port | None,
        *,
        scalar: float | None = None,
        vector: np.ndarray | None = None,
    ) -> Port:
        if b is not None:
            self._add(node_id, kind, (a, b))
        elif vector is not None:
            name = f"{node_id}.weight"
            self._weights[name] = np.asarray(vector, dtype=np.float32)
            self._add(node_id, kind, (a,), {"weight": name})
        else:
            self._add(node_id, kind, (a,), {"scalar": float(scalar if scalar is not None else 0.0)})
        return Port(node_id)

    def layernorm(self, node_id: str, x: Port, eps: float = DEFAULT_LAYERNORM_EPS) -> Port:
        self._add(node_id, "layernorm", (x,), {"axis": -1, "eps": float(eps)})
        return Port(node_id)

    def scale_shift(self, node_id: str, x: Port, scale: Port, shift: Port) -> Port:
        self._add(node_id, "scale_shift", (x, scale, shift))
        return Port(node_id)

    def output(self, node_id: str, x: Port) -> None:
        self._add(node_id, "output", (x,))
        self._outputs.append(node_id)

    def build(self) -> Graph:
        return Graph(self._nodes, self._edges, self._weights, self._inputs, self._outputs)


def graph_from_dict(payload: Mapping[str, Any], weights: Mapping[str, np.ndarray]) -> Graph:
    if not isinstance(payload, Mapping):
        raise GraphParseError("graph document must be a JSON object")
    version = payload.get("version")
    if version != FORMAT_VERSION:
        raise GraphParseError(f"unsupported graph version {version!r}")
    try:
        nodes = [Node.from_dict(entry) for entry in payload["nodes"]]
        edges = [Edge.from_list(entry) for entry in payload["edges"]]
        inputs = [str(name) for name in payload["inputs"]]
        outputs = [str(name) for name in payload["outputs"]]
    except KeyError as exc:
        raise GraphParseError(f"graph document missing {exc.args[0]!r}") from exc
    except TypeError as exc:
        raise GraphParseError(f"malformed graph document: {exc}") from exc
    return Graph(nodes, edges, weights, inputs, outputs)


def load_graph(graph_file: Path, weights_file: Path, *, logger: logging.Logger | None = None) -> Graph:
    """Parse and validate ``graph.json`` plus its ``weights.bin``."""

    log = logger or LOGGER
    path = Path(graph_file)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ArtifactIOError(f"file not found: {path}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    weights = read_container(Path(weights_file))
    graph = graph_from_dict(payload, weights)
    log.info("Loaded graph %s | nodes=%d | linears=%d", path, len(graph.nodes), len(graph.linear_ids()))
    return graph


def save_graph(g: Graph, graph_file: Path, weights_file: Path) -> None:
    """Canonical writer: ``save(load(files))`` reproduces the files byte for byte."""

    path = Path(graph_file)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(g.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}", code="io.write") from exc
    write_container(Path(weights_file), g.weights)


__all__ = [
    "ACTIVATIONS",
    "ACTIVATION_FNS",
    "DEFAULT_LAYERNORM_EPS",
    "Edge",
    "FORMAT_VERSION",
    "GELU_CUBIC",
    "GELU_SQRT_2_OVER_PI",
    "Graph",
    "GraphBuilder",
    "Node",
    "POLARITY_ASYMMETRIC",
    "Port",
    "execute",
    "gelu",
    "geglu",
    "graph_from_dict",
    "infer_shapes",
    "linear_forward",
    "load_graph",
    "relu",
    "save_graph",
    "silu",
    "topo_order",
]
