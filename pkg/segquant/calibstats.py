"""Activation statistics over calibration batches and the error metrics reported per layer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Tuple

import numpy as np
import numpy.typing as npt

from .errors import MissingStatsError, ShapeMismatchError, ValidationError
from .numerics import freeze

PSNR_IDENTICAL = 999.0
SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
METRIC_NAMES = ("mse", "frobenius", "psnr", "ssim")


@dataclass(frozen=True)
class CalibStats:
    """Running per-channel extremes and polarity counters for one collection point.

    Exact zeros count toward neither polarity bucket.
    """

    point: str
    channel_min: npt.NDArray[np.float32]
    channel_max: npt.NDArray[np.float32]
    neg_count: npt.NDArray[np.int64]
    pos_count: npt.NDArray[np.int64]
    count: int = 0

    @classmethod
    def empty(cls, point: str, channels: int) -> "CalibStats":
        return cls(
            point=point,
            channel_min=freeze(np.full(channels, np.inf, dtype=np.float32)),
            channel_max=freeze(np.full(channels, -np.inf, dtype=np.float32)),
            neg_count=freeze(np.zeros(channels, dtype=np.int64)),
            pos_count=freeze(np.zeros(channels, dtype=np.int64)),
        )

    @property
    def channels(self) -> int:
        return int(self.channel_min.shape[0])

    def _require_samples(self) -> None:
        if self.count == 0:
            raise MissingStatsError(f"no samples observed at {self.point!r}")

    @property
    def min(self) -> float:
        self._require_samples()
        return float(self.channel_min.min())

    @property
    def max(self) -> float:
        self._require_samples()
        return float(self.channel_max.max())

    @property
    def amax(self) -> float:
        return max(abs(self.min), abs(self.max))

    @property
    def channel_amax(self) -> npt.NDArray[np.float32]:
        self._require_samples()
        return freeze(np.maximum(np.abs(self.channel_min), np.abs(self.channel_max)))

    @property
    def neg_ratio(self) -> npt.NDArray[np.float64]:
        self._require_samples()
        return self.neg_count / self.count

    @property
    def pos_ratio(self) -> npt.NDArray[np.float64]:
        self._require_samples()
        return self.pos_count / self.count

    def range(self, start: int, stop: int) -> Tuple[float, float]:
        """Min and max over channels ``[start, stop)``."""

        self._require_samples()
        return float(self.channel_min[start:stop].min()), float(self.channel_max[start:stop].max())

    def merge(self, other: "CalibStats") -> "CalibStats":
        if other.point != self.point or other.channels != self.channels:
            raise ShapeMismatchError(
                f"cannot merge stats {self.point}[{self.channels}] with {other.point}[{other.channels}]"
            )
        return CalibStats(
            point=self.point,
            channel_min=freeze(np.minimum(self.channel_min, other.channel_min)),
            channel_max=freeze(np.maximum(self.channel_max, other.channel_max)),
            neg_count=freeze(self.neg_count + other.neg_count),
            pos_count=freeze(self.pos_count + other.pos_count),
            count=self.count + other.count,
        )

    def to_dict(self) -> Dict[str, Any]:
        self._require_samples()
        return {
            "channels": self.channels,
            "samples": self.count,
            "min": self.min,
            "max": self.max,
            "amax": self.amax,
            "neg_ratio": float(np.mean(self.neg_ratio)),
            "pos_ratio": float(np.mean(self.pos_ratio)),
        }


def observe(stats: CalibStats, x: npt.ArrayLike) -> CalibStats:
    """Fold a batch of rows ``[rows, channels]`` into *stats*; a 1-D batch is one row."""

    batch = np.atleast_2d(np.asarray(x, dtype=np.float32))
    if batch.ndim != 2 or batch.shape[1] != stats.channels:
        raise ShapeMismatchError(f"{stats.point}: expected [rows, {stats.channels}], got {batch.shape}")
    return CalibStats(
        point=stats.point,
        channel_min=freeze(np.minimum(stats.channel_min, batch.min(axis=0))),
        channel_max=freeze(np.maximum(stats.channel_max, batch.max(axis=0))),
        neg_count=freeze(stats.neg_count + (batch < 0).sum(axis=0)),
        pos_count=freeze(stats.pos_count + (batch > 0).sum(axis=0)),
        count=stats.count + int(batch.shape[0]),
    )


@dataclass(frozen=True)
class PolarityRow:
    point: str
    channels: int
    neg_ratio: float
    pos_ratio: float
    dualscale_eligible: bool = False

    def format(self) -> str:
        return f"{self.channels}, {self.neg_ratio:.3f} / {self.pos_ratio:.3f}"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": self.point,
            "channels": self.channels,
            "neg_ratio": self.neg_ratio,
            "pos_ratio": self.pos_ratio,
            "dualscale": self.dualscale_eligible,
        }


def polarity_table(
    stats: CalibStats | Iterable[CalibStats] | Mapping[str, CalibStats],
    *,
    eligible: Iterable[str] = (),
) -> List[PolarityRow]:
    """One row per collection point: channel count and mean Neg/Pos ratios."""

    if isinstance(stats, CalibStats):
        entries: List[CalibStats] = [stats]
    elif isinstance(stats, Mapping):
        entries = list(stats.values())
    else:
        entries = list(stats)
    flagged = set(eligible)
    rows = []
    for entry in entries:
        if entry.count == 0:
            raise MissingStatsError(f"polarity table needs samples at {entry.point!r}")
        rows.append(
            PolarityRow(
                point=entry.point,
                channels=entry.channels,
                neg_ratio=float(np.mean(entry.neg_ratio)),
                pos_ratio=float(np.mean(entry.pos_ratio)),
                dualscale_eligible=entry.point in flagged,
            )
        )
    return rows


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ErrorReportRow:
    layer: str
    metric: str
    value: float

    def __post_init__(self) -> None:
        if self.metric not in METRIC_NAMES:
            raise ValidationError(f"unknown metric {self.metric!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {"layer": self.layer, "metric": self.metric, "value": self.value}


def _pair(a: npt.ArrayLike, b: npt.ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    lhs = np.asarray(a, dtype=np.float64)
    rhs = np.asarray(b, dtype=np.float64)
    if lhs.shape != rhs.shape:
        raise ShapeMismatchError(f"metric operands differ in shape: {lhs.shape} vs {rhs.shape}")
    return lhs, rhs


def frobenius(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    lhs, rhs = _pair(a, b)
    return float(np.sqrt(np.sum((lhs - rhs) ** 2)))


def mse(a: npt.ArrayLike, b: npt.ArrayLike) -> float:
    lhs, rhs = _pair(a, b)
    return float(np.mean((lhs - rhs) ** 2))


def psnr(a: npt.ArrayLike, b: npt.ArrayLike, data_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give :data:`PSNR_IDENTICAL`."""

    if data_range <= 0:
        raise ValidationError(f"data_range must be positive, got {data_range}")
    error = mse(a, b)
    if error == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(data_range**2 / error)


def ssim(
    a: npt.ArrayLike,
    b: npt.ArrayLike,
    window: int = SSIM_WINDOW,
    k1: float = SSIM_K1,
    k2: float = SSIM_K2,
    data_range: float = 1.0,
) -> float:
    """Mean SSIM over uniform ``window × window`` patches (valid positions only).

    Defaults are an 8×8 box window with ``C1 = (0.01 L)²`` and ``C2 = (0.03 L)²``,
    ``L`` being *data_range*. Local means and (co)variances are plain box
    averages with the biased estimator. The window shrinks to the tensor extent
    for inputs smaller than it, so a 4×12 tensor uses a 4×8 window.
    """

    if data_range <= 0:
        raise ValidationError(f"data_range must be positive, got {data_range}")
    lhs, rhs = _pair(a, b)
    lhs, rhs = np.atleast_2d(lhs), np.atleast_2d(rhs)
    if lhs.ndim != 2:
        raise ShapeMismatchError(f"ssim expects 2-D inputs, got {lhs.shape}")
    size = (min(window, lhs.shape[0]), min(window, lhs.shape[1]))
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2

    def local_mean(values: np.ndarray) -> np.ndarray:
        return np.lib.stride_tricks.sliding_window_view(values, size).mean(axis=(-2, -1))

    mu1, mu2 = local_mean(lhs), local_mean(rhs)
    mu1_sq, mu2_sq, mu1_mu2 = mu1 * mu1, mu2 * mu2, mu1 * mu2
    sigma1_sq = local_mean(lhs * lhs) - mu1_sq
    sigma2_sq = local_mean(rhs * rhs) - mu2_sq
    sigma12 = local_mean(lhs * rhs) - mu1_mu2
    ssim_map = ((2 * mu1_mu2 + c1) * (2 * sigma12 + c2)) / ((mu1_sq + mu2_sq + c1) * (sigma1_sq + sigma2_sq + c2))
    return float(np.mean(ssim_map))


def metric_rows(layer: str, reference: np.ndarray, candidate: np.ndarray) -> List[ErrorReportRow]:
    """All four metrics, with ``data_range`` taken from the reference's spread."""

    ref = np.asarray(reference, dtype=np.float64)
    spread = float(ref.max() - ref.min())
    data_range = spread if spread > 0 else 1.0
    return [
        ErrorReportRow(layer, "mse", mse(reference, candidate)),
        ErrorReportRow(layer, "frobenius", frobenius(reference, candidate)),
        ErrorReportRow(layer, "psnr", psnr(reference, candidate, data_range)),
        ErrorReportRow(layer, "ssim", ssim(reference, candidate, data_range=data_range)),
    ]


__all__ = [
    "CalibStats",
    "ErrorReportRow",
    "METRIC_NAMES",
    "PSNR_IDENTICAL",
    "PolarityRow",
    "SSIM_K1",
    "SSIM_K2",
    "SSIM_WINDOW",
    "frobenius",
    "metric_rows",
    "mse",
    "observe",
    "polarity_table",
    "psnr",
    "ssim",
]
