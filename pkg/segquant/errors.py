"""Exception hierarchy shared by the quantization pipeline and the CLI."""

from __future__ import annotations


class SegQuantError(Exception):
    """Base error. ``code`` is stable across releases; ``exit_code`` feeds the CLI."""

    code = "segquant.error"
    exit_code = 1

    def __init__(self, message: str, *, code: str | None = None) -> None:
        super().__init__(message)
        if code is not None:
            self.code = code


class ParseError(SegQuantError):
    code = "parse"
    exit_code = 2


class GraphParseError(ParseError):
    code = "graph.parse"


class ConfigParseError(ParseError):
    code = "config.parse"


class ContainerFormatError(ParseError):
    code = "container.format"


class ValidationError(SegQuantError, ValueError):
    code = "validation"
    exit_code = 3


class DanglingWeightError(ValidationError):
    code = "graph.dangling_weight"


class GraphCycleError(ValidationError):
    code = "graph.cycle"


class ShapeConflictError(ValidationError):
    code = "graph.shape_conflict"


class ShapeMismatchError(ValidationError):
    code = "tensor.shape"


class MissingInputError(ValidationError):
    code = "graph.missing_input"


class SchemeError(ValidationError):
    code = "scheme.invalid"


class ConfigError(ValidationError):
    code = "config.invalid"


class MissingStatsError(ValidationError):
    code = "calib.missing_stats"


class NumericError(SegQuantError, ArithmeticError):
    code = "numeric"
    exit_code = 4


class NonFiniteError(NumericError):
    code = "tensor.non_finite"


class SingularHessianError(NumericError):
    code = "gptq.singular"


class SvdConvergenceError(NumericError):
    code = "svd.no_convergence"


class ArtifactIOError(SegQuantError):
    """Raised for missing inputs or unwritable outputs; the message names the path."""

    code = "io.missing"
    exit_code = 5


__all__ = [
    "ArtifactIOError",
    "ConfigError",
    "ConfigParseError",
    "ContainerFormatError",
    "DanglingWeightError",
    "GraphCycleError",
    "GraphParseError",
    "MissingInputError",
    "MissingStatsError",
    "NonFiniteError",
    "NumericError",
    "ParseError",
    "SchemeError",
    "SegQuantError",
    "ShapeConflictError",
    "ShapeMismatchError",
    "SingularHessianError",
    "SvdConvergenceError",
    "ValidationError",
]
