"""Engine configuration: JSON file flattened to dotted keys plus ``--set`` overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, MutableMapping, Sequence, Tuple

from .calibrators import CalibConfig
from .errors import ArtifactIOError, ConfigError, ConfigParseError, SchemeError
from .optimizers import ALPHA_GRID, LowRankConfig, SmoothConfig
from .quantcore import Scheme

OPTIMIZER_STAGES = ("smooth", "svd")


@dataclass(frozen=True)
class ConfigKey:
    key: str
    kind: str
    default: Any
    help: str


CONFIG_KEYS: Tuple[ConfigKey, ...] = (
    ConfigKey("weights.kind", "str", "int_sym", "weight scheme: int_sym, int_asym, fp8_e4m3_sim or float"),
    ConfigKey("weights.bits", "int", 8, "weight code width (4 or 8)"),
    ConfigKey("weights.granularity", "str", "per_tensor", "weight parameter sharing: per_tensor or per_channel"),
    ConfigKey(
        "activations.kind", "str", "int_sym", "activation scheme: int_sym, int_asym, dual_scale, fp8_e4m3_sim or float"
    ),
    ConfigKey("activations.bits", "int", 8, "activation code width (4 or 8)"),
    ConfigKey(
        "activations.granularity", "str", "per_tensor", "activation parameter sharing: per_tensor or per_token_dynamic"
    ),
    ConfigKey("seglinear", "bool", True, "segment linear layers along inferred chunk/split/concat/stack patterns"),
    ConfigKey("dualscale", "bool", True, "dual-scale activations on SiLU/GELU/GEGLU-fed linear layers"),
    ConfigKey("smooth.enabled", "bool", False, "run the smoothing alpha sweep before calibration"),
    ConfigKey("smooth.grid", "list[float]", list(ALPHA_GRID), "alpha values evaluated by the sweep"),
    ConfigKey("smooth.per_segment", "bool", True, "choose alpha per input segment instead of per layer"),
    ConfigKey("lowrank.enabled", "bool", False, "split weights into a full-precision low-rank branch and a residual"),
    ConfigKey("lowrank.rank", "int", 8, "rank of the low-rank branch"),
    ConfigKey("lowrank.precision", "str", "float64", "SVD working precision: float64 or float32"),
    ConfigKey("optimizer_order", "list[str]", ["smooth", "svd"], "order in which enabled optimizers run"),
    ConfigKey("calibration.method", "str", "amax", "weight calibrator: amax or gptq"),
    ConfigKey("calibration.block_size", "int", 16, "gptq lazy-update block size"),
    ConfigKey("calibration.damping", "float", 0.01, "gptq damping as a fraction of the mean Hessian diagonal"),
    ConfigKey("calibration.samples", "int", 0, "calibration samples to use (0 = all)"),
    ConfigKey("seed", "int", 0, "seed for every generated tensor"),
    ConfigKey("layers", "list[str]", [], "glob patterns of linear layers to quantize (empty = all)"),
    ConfigKey("workers", "int", 1, "threads for the per-layer stage"),
    ConfigKey("demo.steps", "int", 10, "diffusion steps T for demo-ddpm"),
    ConfigKey("demo.hidden", "int", 12, "toy model hidden width h"),
    ConfigKey("demo.tokens", "int", 4, "latent rows per sample"),
    ConfigKey("demo.blocks", "int", 1, "toy model block count"),
    ConfigKey("demo.context", "int", 4, "context stream width"),
    ConfigKey("demo.calib_samples", "int", 8, "calibration samples drawn for demo-ddpm"),
    ConfigKey("demo.branches", "bool", False, "also emit time-branch-only and latent-branch-only curves"),
)
KEY_INDEX: Mapping[str, ConfigKey] = {entry.key: entry for entry in CONFIG_KEYS}


@dataclass(frozen=True)
class DemoConfig:
    steps: int = 10
    hidden: int = 12
    tokens: int = 4
    blocks: int = 1
    context: int = 4
    calib_samples: int = 8
    branches: bool = False

    def validate(self) -> "DemoConfig":
        for name in ("steps", "hidden", "tokens", "blocks", "context", "calib_samples"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"demo.{name} must be positive, got {getattr(self, name)}")
        return self


@dataclass(frozen=True)
class EngineConfig:
    weights: Scheme = field(default_factory=Scheme)
    activations: Scheme = field(default_factory=Scheme)
    seglinear: bool = True
    dualscale: bool = True
    smooth: SmoothConfig = field(default_factory=SmoothConfig)
    lowrank: LowRankConfig = field(default_factory=LowRankConfig)
    optimizer_order: Tuple[str, ...] = OPTIMIZER_STAGES
    calibration: CalibConfig = field(default_factory=CalibConfig)
    seed: int = 0
    layers: Tuple[str, ...] = ()
    workers: int = 1
    demo: DemoConfig = field(default_factory=DemoConfig)

    def validate(self) -> "EngineConfig":
        try:
            self.weights.validate("weight")
            self.activations.validate("activation")
        except SchemeError as exc:
            raise ConfigError(str(exc)) from exc
        if self.activations.kind == "dual_scale" and not self.dualscale:
            raise ConfigError("activations.kind dual_scale requires dualscale=true")
        if self.weights.is_integer and self.weights.bits == 4 and self.weights.granularity != "per_channel":
            raise ConfigError("4-bit weights require weights.granularity per_channel")
        if sorted(self.optimizer_order) != sorted(set(self.optimizer_order)) or not set(self.optimizer_order) <= set(
            OPTIMIZER_STAGES
        ):
            raise ConfigError(f"optimizer_order must list distinct stages from {OPTIMIZER_STAGES}")
        if self.workers <= 0:
            raise ConfigError(f"workers must be positive, got {self.workers}")
        self.smooth.validate()
        self.lowrank.validate()
        self.calibration.validate()
        self.demo.validate()
        return self

    def as_flat(self) -> Dict[str, Any]:
        """Dotted-key echo of every setting, suitable for JSON."""

        flat: Dict[str, Any] = {}
        for entry in CONFIG_KEYS:
            value = resolve(self, entry.key)
            flat[entry.key] = list(value) if isinstance(value, tuple) else value
        return flat


def resolve(cfg: Any, key: str) -> Any:
    value = cfg
    for part in key.split("."):
        value = getattr(value, part)
    return value


def dataclass_leaves(cfg: Any, prefix: str = "") -> List[str]:
    """Dotted names of every non-dataclass field reachable from *cfg*."""

    leaves: List[str] = []
    for item in fields(cfg):
        value = getattr(cfg, item.name)
        name = f"{prefix}{item.name}"
        if is_dataclass(value) and not isinstance(value, Scheme):
            leaves.extend(dataclass_leaves(value, f"{name}."))
        elif isinstance(value, Scheme):
            leaves.extend(f"{name}.{sub.name}" for sub in fields(value))
        else:
            leaves.append(name)
    return leaves


def flatten(payload: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in payload.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def parse_override(item: str) -> Tuple[str, Any]:
    """``key=value``; the value is parsed as JSON, falling back to a bare string."""

    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _coerce(entry: ConfigKey, raw: Any) -> Any:
    kind = entry.kind
    if kind == "bool":
        if isinstance(raw, bool):
            return raw
        raise ConfigError(f"{entry.key} expects true/false, got {raw!r}")
    if kind == "int":
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{entry.key} expects an integer, got {raw!r}")
        return int(raw)
    if kind == "float":
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{entry.key} expects a number, got {raw!r}")
        return float(raw)
    if kind == "str":
        if not isinstance(raw, str):
            raise ConfigError(f"{entry.key} expects a string, got {raw!r}")
        return raw
    if kind == "list[float]":
        if not isinstance(raw, list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in raw):
            raise ConfigError(f"{entry.key} expects a list of numbers, got {raw!r}")
        return tuple(float(v) for v in raw)
    if kind == "list[str]":
        if isinstance(raw, str):
            raw = [part for part in raw.split(",") if part]
        if not isinstance(raw, list) or any(not isinstance(v, str) for v in raw):
            raise ConfigError(f"{entry.key} expects a list of strings, got {raw!r}")
        return tuple(raw)
    raise ConfigError(f"{entry.key}: unsupported key type {kind}")


def _load_scheme(values: Mapping[str, Any], section: str) -> Scheme:
    return Scheme(
        kind=values[f"{section}.kind"],
        bits=values[f"{section}.bits"],
        granularity=values[f"{section}.granularity"],
    )


def _load_smooth(values: Mapping[str, Any]) -> SmoothConfig:
    return SmoothConfig(
        enabled=values["smooth.enabled"],
        grid=tuple(values["smooth.grid"]),
        per_segment=values["smooth.per_segment"],
    )


def _load_lowrank(values: Mapping[str, Any]) -> LowRankConfig:
    return LowRankConfig(
        enabled=values["lowrank.enabled"],
        rank=values["lowrank.rank"],
        precision=values["lowrank.precision"],
    )


def _load_calibration(values: Mapping[str, Any]) -> CalibConfig:
    return CalibConfig(
        method=values["calibration.method"],
        block_size=values["calibration.block_size"],
        damping=values["calibration.damping"],
        samples=values["calibration.samples"],
    )


def _load_demo(values: Mapping[str, Any]) -> DemoConfig:
    return DemoConfig(**{name.split(".", 1)[1]: value for name, value in values.items() if name.startswith("demo.")})


def config_from_flat(flat: Mapping[str, Any]) -> EngineConfig:
    unknown = sorted(set(flat) - set(KEY_INDEX))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    values: MutableMapping[str, Any] = {}
    for entry in CONFIG_KEYS:
        raw = flat.get(entry.key, entry.default)
        values[entry.key] = _coerce(entry, raw)
    cfg = EngineConfig(
        weights=_load_scheme(values, "weights"),
        activations=_load_scheme(values, "activations"),
        seglinear=values["seglinear"],
        dualscale=values["dualscale"],
        smooth=_load_smooth(values),
        lowrank=_load_lowrank(values),
        optimizer_order=tuple(values["optimizer_order"]),
        calibration=_load_calibration(values),
        seed=values["seed"],
        layers=tuple(values["layers"]),
        workers=values["workers"],
        demo=_load_demo(values),
    )
    return cfg.validate()


def read_config_file(path: Path) -> Dict[str, Any]:
    target = Path(path)
    try:
        text = target.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise ArtifactIOError(f"file not found: {target}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{target}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(payload, Mapping):
        raise ConfigParseError(f"{target}: config must be a JSON object")
    return flatten(payload)


def load_config(path: Path | None = None, overrides: Iterable[str] = ()) -> EngineConfig:
    """Defaults, then the file at *path*, then ``key=value`` overrides (last wins)."""

    flat: Dict[str, Any] = read_config_file(path) if path is not None else {}
    for item in overrides:
        key, value = parse_override(item)
        flat[key] = value
    return config_from_flat(flat)


def describe_keys(entries: Sequence[ConfigKey] = CONFIG_KEYS) -> str:
    lines = ["config keys (file or --set key=value):"]
    for entry in entries:
        lines.append(f"  {entry.key} ({entry.kind}, default {json.dumps(entry.default)}): {entry.help}")
    return "\n".join(lines)


__all__ = [
    "CONFIG_KEYS",
    "ConfigKey",
    "DemoConfig",
    "EngineConfig",
    "KEY_INDEX",
    "OPTIMIZER_STAGES",
    "config_from_flat",
    "dataclass_leaves",
    "describe_keys",
    "flatten",
    "load_config",
    "parse_override",
    "read_config_file",
    "resolve",
]
