import math

import numpy as np
import pytest

from segquant.calibstats import (
    PSNR_IDENTICAL,
    CalibStats,
    ErrorReportRow,
    frobenius,
    metric_rows,
    mse,
    observe,
    polarity_table,
    psnr,
    ssim,
)
from segquant.errors import MissingStatsError, ShapeMismatchError, ValidationError


def _stats():
    stats = CalibStats.empty("act", 3)
    stats = observe(stats, [[-1.0, 0.0, 2.0], [0.5, 0.0, -4.0]])
    return observe(stats, [-0.25, 3.0, 1.0])


def test_observe_tracks_extremes_and_polarity():
    stats = _stats()
    assert stats.count == 3
    assert stats.channel_min.tolist() == [-1.0, 0.0, -4.0]
    assert stats.channel_max.tolist() == [0.5, 3.0, 2.0]
    assert stats.neg_count.tolist() == [2, 0, 1]
    assert stats.pos_count.tolist() == [1, 1, 2]
    assert stats.amax == 4.0
    assert stats.range(0, 2) == (-1.0, 3.0)


def test_empty_stats_refuse_queries():
    stats = CalibStats.empty("act", 2)
    with pytest.raises(MissingStatsError):
        stats.amax
    with pytest.raises(ShapeMismatchError):
        observe(stats, np.ones((2, 3)))


def test_merge_matches_single_pass():
    first = observe(CalibStats.empty("act", 3), [[-1.0, 0.0, 2.0], [0.5, 0.0, -4.0]])
    second = observe(CalibStats.empty("act", 3), [-0.25, 3.0, 1.0])
    merged = first.merge(second)
    expected = _stats()
    assert merged.count == expected.count
    assert np.array_equal(merged.channel_min, expected.channel_min)
    assert np.array_equal(merged.neg_count, expected.neg_count)
    with pytest.raises(ShapeMismatchError):
        first.merge(CalibStats.empty("other", 3))


def test_polarity_row_format():
    stats = CalibStats.empty("ff_act", 4)
    stats = observe(stats, [[-1.0, -1.0, 1.0, 1.0], [1.0, -1.0, 1.0, 0.0]])
    (row,) = polarity_table({"ff_act": stats}, eligible=["ff_act"])
    assert row.channels == 4
    assert row.neg_ratio == pytest.approx(3 / 8)
    assert row.pos_ratio == pytest.approx(4 / 8)
    assert row.format() == "4, 0.375 / 0.500"
    assert row.to_dict()["dualscale"] is True
    with pytest.raises(MissingStatsError):
        polarity_table(CalibStats.empty("x", 1))


def test_basic_metrics():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[1.0, 2.0], [3.0, 2.0]])
    assert frobenius(a, b) == 2.0
    assert mse(a, b) == 1.0
    assert psnr(a, b, data_range=10.0) == pytest.approx(20.0)
    assert psnr(a, a) == PSNR_IDENTICAL
    with pytest.raises(ShapeMismatchError):
        mse(a, b[:1])
    with pytest.raises(ValidationError):
        psnr(a, b, data_range=0.0)


def test_ssim_identity_and_degradation():
    rng = np.random.default_rng(0)
    image = rng.random((16, 16))
    assert ssim(image, image) == pytest.approx(1.0)
    noisy = image + rng.normal(0.0, 0.2, image.shape)
    assert ssim(image, noisy) < 0.9
    assert ssim(np.ones((2, 3)), np.ones((2, 3))) == pytest.approx(1.0)


def _single_patch_ssim(a, b, data_range=1.0):
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    numerator = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    return numerator / ((mu_a**2 + mu_b**2 + c1) * (a.var() + b.var() + c2))


def test_ssim_window_and_constants():
    rng = np.random.default_rng(3)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    assert ssim(a, b) == pytest.approx(_single_patch_ssim(a, b), rel=1e-9, abs=1e-12)
    assert ssim(a, b, data_range=4.0) == pytest.approx(_single_patch_ssim(a, b, 4.0), rel=1e-9, abs=1e-12)
    wide_a, wide_b = rng.random((4, 9)), rng.random((4, 9))
    patches = [_single_patch_ssim(wide_a[:, c : c + 8], wide_b[:, c : c + 8]) for c in (0, 1)]
    assert ssim(wide_a, wide_b) == pytest.approx(np.mean(patches), rel=1e-9, abs=1e-12)


def test_metric_rows_and_validation():
    ref = np.array([[0.0, 2.0]])
    rows = metric_rows("eps", ref, ref)
    assert [row.metric for row in rows] == ["mse", "frobenius", "psnr", "ssim"]
    assert rows[0].value == 0.0
    assert rows[2].value == PSNR_IDENTICAL
    assert math.isfinite(rows[3].value)
    with pytest.raises(ValidationError):
        ErrorReportRow("eps", "l1", 0.0)
