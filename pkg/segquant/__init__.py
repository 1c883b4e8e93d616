"""Segment-aware post-training quantization: graph-inferred segments, dual-scale activations, calibrators."""

from ._version import project_version  # noqa: F401
from .bundle import load_bundle, save_bundle, validate_report  # noqa: F401
from .calibrators import (  # noqa: F401
    CalibConfig,
    SchemePair,
    amax_calibrate,
    calibrate_layer,
    gptq_calibrate,
)
from .calibstats import (  # noqa: F401
    CalibStats,
    ErrorReportRow,
    PolarityRow,
    frobenius,
    metric_rows,
    mse,
    observe,
    polarity_table,
    psnr,
    ssim,
)
from .config import CONFIG_KEYS, DemoConfig, EngineConfig, load_config  # noqa: F401
from .engine import QuantizedModel, QuantReport, evaluate, quantize_model  # noqa: F401
from .errors import (  # noqa: F401
    ArtifactIOError,
    NumericError,
    ParseError,
    SegQuantError,
    ValidationError,
)
from .graphir import Graph, GraphBuilder, execute, load_graph, save_graph, topo_order  # noqa: F401
from .harness import (  # noqa: F401
    NoiseSchedule,
    ToyModelSpec,
    build_toy_dit,
    ddpm_forward,
    ddpm_reverse_step,
    timestep_error_curve,
)
from .numerics import Rng, clip, matmul, round_ties_away  # noqa: F401
from .optimizers import LowRankConfig, SmoothConfig, svd_lowrank, sweep_alpha  # noqa: F401
from .quantcore import QParams, QuantizedLayer, QuantizedTensor, Scheme, dequantize, qgemm, quantize  # noqa: F401
from .seginfer import QuantPlan, SegmentPlan, build_plan, find_act_to_linear  # noqa: F401

__version__ = project_version()
