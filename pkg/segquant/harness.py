"""Toy DDPM sampler, DiT-like graph generator and the timestep-error experiment."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .calibstats import frobenius
from .config import EngineConfig
from .engine import QuantizedModel, QuantReport, quantize_model
from .errors import ArtifactIOError, ShapeMismatchError, ValidationError
from .graphir import Graph, GraphBuilder, execute
from .numerics import Rng, Tensor, as_tensor

LOGGER = logging.getLogger(__name__)

LATENT_INPUT = "x"
TIME_INPUT = "t_emb"
CONTEXT_INPUT = "ctx"
NOISE_OUTPUT = "eps"

DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

# shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp
ADANORM_SEGMENT_GAINS = (2.0, 0.5, 0.1, 2.0, 0.5, 0.1)
CONTEXT_ROW_GAIN = 8.0
LATENT_ROW_GAIN = 0.4

_WEIGHT_KEY = 1
_CONTEXT_KEY = 2
CALIB_KEY = 10
_START_KEY = 11


@dataclass(frozen=True)
class NoiseSchedule:
    """β_t for t = 1..T with α_t = 1 − β_t and ᾱ_t = Π α_s."""

    betas: Tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.betas:
            raise ValidationError("noise schedule needs at least one step")
        if any(not 0.0 < beta < 1.0 for beta in self.betas):
            raise ValidationError("every beta must lie in (0, 1)")

    @classmethod
    def linear(
        cls, steps: int, beta_start: float = DEFAULT_BETA_START, beta_end: float = DEFAULT_BETA_END
    ) -> "NoiseSchedule":
        if steps <= 0:
            raise ValidationError(f"schedule length must be positive, got {steps}")
        return cls(tuple(float(beta) for beta in np.linspace(beta_start, beta_end, steps)))

    @property
    def steps(self) -> int:
        return len(self.betas)

    @property
    def alphas(self) -> Tuple[float, ...]:
        return tuple(1.0 - beta for beta in self.betas)

    @property
    def alpha_bars(self) -> Tuple[float, ...]:
        return tuple(float(value) for value in np.cumprod(np.asarray(self.alphas, dtype=np.float64)))

    def check_step(self, t: int) -> int:
        if not 1 <= int(t) <= self.steps:
            raise ValidationError(f"timestep {t} outside [1, {self.steps}]")
        return int(t)

    def beta(self, t: int) -> float:
        return self.betas[self.check_step(t) - 1]

    def alpha(self, t: int) -> float:
        return 1.0 - self.beta(t)

    def alpha_bar(self, t: int) -> float:
        return self.alpha_bars[self.check_step(t) - 1]

    def sigma(self, t: int) -> float:
        return math.sqrt(self.beta(t))


def _pair(a: npt.ArrayLike, b: npt.ArrayLike, label: str) -> Tuple[np.ndarray, np.ndarray]:
    left = np.asarray(a, dtype=np.float64)
    right = np.asarray(b, dtype=np.float64)
    if left.shape != right.shape:
        raise ShapeMismatchError(f"{label}: shapes differ {left.shape} vs {right.shape}")
    return left, right


def ddpm_forward(x0: npt.ArrayLike, t: int, sched: NoiseSchedule, noise: npt.ArrayLike) -> Tensor:
    """Closed-form corruption ``x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise``."""

    clean, eps = _pair(x0, noise, "ddpm_forward")
    alpha_bar = sched.alpha_bar(t)
    return as_tensor(math.sqrt(alpha_bar) * clean + math.sqrt(1.0 - alpha_bar) * eps)


def ddpm_forward_iterated(
    x0: npt.ArrayLike, t: int, sched: NoiseSchedule, noises: Sequence[npt.ArrayLike]
) -> Tuple[Tensor, Tensor]:
    """Apply ``x_s = √α_s·x_{s−1} + √β_s·n_s`` for s = 1..t.

    Returns the state and the single standard-normal draw the closed form
    needs to land on it: ``Σ_s √(ᾱ_t/ᾱ_s)·√β_s·n_s / √(1−ᾱ_t)``.
    """

    sched.check_step(t)
    if len(noises) < t:
        raise ValidationError(f"need {t} noise tensors, got {len(noises)}")
    state = np.asarray(x0, dtype=np.float64)
    combined = np.zeros_like(state)
    alpha_bar_t = sched.alpha_bar(t)
    for s in range(1, t + 1):
        _, step_noise = _pair(state, noises[s - 1], "ddpm_forward_iterated")
        state = math.sqrt(sched.alpha(s)) * state + math.sqrt(sched.beta(s)) * step_noise
        combined += math.sqrt(alpha_bar_t / sched.alpha_bar(s)) * math.sqrt(sched.beta(s)) * step_noise
    return as_tensor(state), as_tensor(combined / math.sqrt(1.0 - alpha_bar_t))


def ddpm_reverse_step(
    x_t: npt.ArrayLike,
    eps_hat: npt.ArrayLike,
    t: int,
    sched: NoiseSchedule,
    z: npt.ArrayLike | None = None,
) -> Tensor:
    """``x_{t−1} = (x_t − β_t/√(1−ᾱ_t)·ε̂)/√α_t + σ_t·z``; no *z* means deterministic."""

    state, eps = _pair(x_t, eps_hat, "ddpm_reverse_step")
    beta = sched.beta(t)
    mean = (state - beta / math.sqrt(1.0 - sched.alpha_bar(t)) * eps) / math.sqrt(sched.alpha(t))
    if z is not None:
        _, noise = _pair(state, z, "ddpm_reverse_step")
        mean = mean + sched.sigma(t) * noise
    return as_tensor(mean)


def true_noise(x_t: npt.ArrayLike, x0: npt.ArrayLike, t: int, sched: NoiseSchedule) -> Tensor:
    """ε implied by ``x_t`` and ``x0`` under the closed form (the oracle denoiser)."""

    state, clean = _pair(x_t, x0, "true_noise")
    alpha_bar = sched.alpha_bar(t)
    return as_tensor((state - math.sqrt(alpha_bar) * clean) / math.sqrt(1.0 - alpha_bar))


def timestep_embedding(t: float, dim: int, rows: int = 1, max_period: float = 10000.0) -> Tensor:
    """Sinusoidal features ``[cos(t·f_i) | sin(t·f_i)]`` repeated over *rows*."""

    if dim <= 0 or dim % 2:
        raise ValidationError(f"embedding width must be positive and even, got {dim}")
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = float(t) * freqs
    row = np.concatenate([np.cos(args), np.sin(args)])
    return as_tensor(np.tile(row, (rows, 1)))


# ----------------------------------------------------------------------
# Toy DiT
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ToyModelSpec:
    hidden: int = 12
    tokens: int = 4
    seed: int = 0
    blocks: int = 1
    context: int = 4

    def validate(self) -> "ToyModelSpec":
        if self.hidden <= 0 or self.hidden % 2:
            raise ValidationError(f"hidden width must be positive and even, got {self.hidden}")
        for name in ("tokens", "blocks", "context"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive, got {getattr(self, name)}")
        return self


def _dense(rng: Rng, fan_in: int, fan_out: int, gain: float = 1.0) -> np.ndarray:
    return rng.normal((fan_in, fan_out)) * np.float32(gain / math.sqrt(fan_in))


def build_toy_dit(spec: ToyModelSpec) -> Graph:
    """AdaNorm-modulated DiT block stack without attention.

    Per block: an AdaNorm linear chunked into six modulation vectors, a
    concat-fed projection mixing the context stream with the modulated latent,
    and a GELU feed-forward. Weights carry per-segment magnitude gaps.
    """

    spec.validate()
    h, c = spec.hidden, spec.context
    rng = Rng(spec.seed).spawn(_WEIGHT_KEY)
    b = GraphBuilder()
    x = b.input(LATENT_INPUT, h)
    t_emb = b.input(TIME_INPUT, h)
    ctx = b.input(CONTEXT_INPUT, c)

    time_hidden = b.linear("time_fc", t_emb, _dense(rng, h, h), rng.normal((h,)) * np.float32(0.1))
    time_act = b.activation("time_act", time_hidden, "silu")
    ctx_hidden = b.activation("ctx_act", b.linear("ctx_fc", ctx, _dense(rng, c, c)), "relu")
    ctx_out = b.linear("ctx_proj", ctx_hidden, _dense(rng, c, c))

    for index in range(spec.blocks):
        p = f"b{index}."
        ada_weight = np.concatenate([_dense(rng, h, h, gain) for gain in ADANORM_SEGMENT_GAINS], axis=1)
        ada = b.linear(p + "adanorm", time_act, ada_weight, np.zeros(6 * h, dtype=np.float32))
        shift_msa, scale_msa, gate_msa, shift_mlp, scale_mlp, gate_mlp = b.chunk(p + "mod", ada, 6)

        normed = b.scale_shift(p + "mod_msa", b.layernorm(p + "ln1", x), scale_msa, shift_msa)
        mixed = b.concat(p + "cat", [ctx_out, normed])
        proj_weight = np.concatenate(
            [_dense(rng, c + h, h, CONTEXT_ROW_GAIN)[:c], _dense(rng, c + h, h, LATENT_ROW_GAIN)[c:]], axis=0
        )
        proj = b.linear(p + "attn_proj", mixed, proj_weight, rng.normal((h,)) * np.float32(0.05))
        x = b.add(p + "res_msa", x, b.mul(p + "gate_msa", proj, gate_msa))

        normed = b.scale_shift(p + "mod_mlp", b.layernorm(p + "ln2", x), scale_mlp, shift_mlp)
        ff_hidden = b.activation(p + "ff_act", b.linear(p + "ff_in", normed, _dense(rng, h, 4 * h)), "gelu")
        ff_out = b.linear(p + "ff_out", ff_hidden, _dense(rng, 4 * h, h))
        x = b.add(p + "res_mlp", x, b.mul(p + "gate_mlp", ff_out, gate_mlp))

    b.output(NOISE_OUTPUT, b.linear("final_proj", b.layernorm("final_ln", x), _dense(rng, h, h)))
    return b.build()


def null_context(spec: ToyModelSpec) -> Tensor:
    """Fixed prompt-free context rows shared by every sample of a run."""

    return Rng(spec.seed).spawn(_CONTEXT_KEY).normal((spec.tokens, spec.context))


def model_inputs(spec: ToyModelSpec, x_t: np.ndarray, t: int) -> Dict[str, Tensor]:
    return {
        LATENT_INPUT: as_tensor(x_t),
        TIME_INPUT: timestep_embedding(t, spec.hidden, spec.tokens),
        CONTEXT_INPUT: null_context(spec),
    }


def calibration_set(spec: ToyModelSpec, sched: NoiseSchedule, samples: int, rng: Rng) -> List[Dict[str, Tensor]]:
    """Input bindings at random timesteps over noised Gaussian latents."""

    bindings = []
    for _ in range(samples):
        t = int(rng.integers(1, sched.steps + 1)[0])
        x0 = rng.normal((spec.tokens, spec.hidden))
        noise = rng.normal((spec.tokens, spec.hidden))
        bindings.append(model_inputs(spec, ddpm_forward(x0, t, sched, noise), t))
    return bindings


def branch_layers(g: Graph) -> Dict[str, Tuple[str, ...]]:
    """Split linear layers into the time branch (fed only by the time input) and the rest."""

    roots: Dict[str, frozenset] = {}
    for node_id in g.topo_order():
        if node_id in g.inputs:
            roots[node_id] = frozenset({node_id})
        else:
            roots[node_id] = frozenset().union(*(roots[port.node] for port in g.producers(node_id)))
    time = tuple(layer for layer in g.linear_ids() if roots[layer] == {TIME_INPUT})
    latent = tuple(layer for layer in g.linear_ids() if layer not in time)
    return {"time": time, "latent": latent}


def timestep_error_curve(
    g: Graph,
    model: QuantizedModel,
    sched: NoiseSchedule,
    x_T: npt.ArrayLike,
    conditioning: Mapping[str, np.ndarray],
) -> List[Tuple[int, float]]:
    """Deterministic sampling with both models from *x_T*; ``(t, ‖ε̂_fp − ε̂_q‖_F)`` for t = T..1."""

    fp_state = as_tensor(x_T)
    q_state = fp_state
    curve: List[Tuple[int, float]] = []
    for t in range(sched.steps, 0, -1):
        cond = dict(conditioning)
        cond[TIME_INPUT] = timestep_embedding(t, g.features(TIME_INPUT), fp_state.shape[0])
        eps_fp = execute(g, {**cond, LATENT_INPUT: fp_state})[NOISE_OUTPUT]
        eps_q = model.run({**cond, LATENT_INPUT: q_state})[NOISE_OUTPUT]
        curve.append((t, frobenius(eps_fp, eps_q)))
        fp_state = ddpm_reverse_step(fp_state, eps_fp, t, sched)
        q_state = ddpm_reverse_step(q_state, eps_q, t, sched)
    return curve


def write_curve_csv(path: Path, curve: Sequence[Tuple[int, float]]) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        with target.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["t", "frobenius"])
            for t, value in curve:
                writer.writerow([t, repr(float(value))])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {target}: {exc}", code="io.write") from exc
    return target


@dataclass(frozen=True)
class DemoRun:
    model: QuantizedModel
    report: QuantReport
    curves: Mapping[str, List[Tuple[int, float]]]


def run_demo(cfg: EngineConfig, *, logger: logging.Logger | None = None) -> DemoRun:
    """Build the toy model, quantize it per *cfg* and measure the timestep error curve(s)."""

    log = logger or LOGGER
    demo = cfg.demo
    spec = ToyModelSpec(hidden=demo.hidden, tokens=demo.tokens, seed=cfg.seed, blocks=demo.blocks, context=demo.context)
    g = build_toy_dit(spec)
    sched = NoiseSchedule.linear(demo.steps)
    rng = Rng(cfg.seed)
    calib = calibration_set(spec, sched, demo.calib_samples, rng.spawn(CALIB_KEY))
    x_T = rng.spawn(_START_KEY).normal((spec.tokens, spec.hidden))
    cond = {CONTEXT_INPUT: null_context(spec)}

    model, report = quantize_model(g, calib, cfg, logger=log)
    curves = {"curve": timestep_error_curve(g, model, sched, x_T, cond)}
    if demo.branches:
        for branch, layers in branch_layers(g).items():
            branch_model, _ = quantize_model(g, calib, replace(cfg, layers=layers), logger=log)
            curves[f"curve_{branch}"] = timestep_error_curve(g, branch_model, sched, x_T, cond)
    log.info("Demo finished | steps=%d | curves=%s", sched.steps, ",".join(sorted(curves)))
    return DemoRun(model, report, curves)


__all__ = [
    "CALIB_KEY",
    "CONTEXT_INPUT",
    "DemoRun",
    "LATENT_INPUT",
    "NOISE_OUTPUT",
    "NoiseSchedule",
    "TIME_INPUT",
    "ToyModelSpec",
    "branch_layers",
    "build_toy_dit",
    "calibration_set",
    "ddpm_forward",
    "ddpm_forward_iterated",
    "ddpm_reverse_step",
    "model_inputs",
    "null_context",
    "run_demo",
    "timestep_embedding",
    "timestep_error_curve",
    "true_noise",
    "write_curve_csv",
]
