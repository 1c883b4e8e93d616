import numpy as np
import pytest

from segquant.calibrators import (
    CalibConfig,
    SchemePair,
    activation_params,
    amax_calibrate,
    build_hessian,
    calibrate_layer,
    gptq_calibrate,
    gptq_quantize_weight,
)
from segquant.calibstats import CalibStats, frobenius, mse, observe
from segquant.errors import ConfigError, MissingStatsError
from segquant.numerics import Rng
from segquant.quantcore import Scheme, dequantize, qgemm, quantize
from segquant.seginfer import SegmentPlan

FLOAT_ACTS = SchemePair(Scheme("int_sym", 8), Scheme("float"))
W4 = SchemePair(Scheme("int_sym", 4), Scheme("float"))


def _heterogeneous_layer(rng, k=8, widths=(4, 4), gains=(0.05, 1.0)):
    blocks = [rng.normal((k, width)) * np.float32(gain) for width, gain in zip(widths, gains)]
    return np.concatenate(blocks, axis=1)


def _inputs(rng, rows=32, k=8):
    mixing = rng.normal((k, k)) * np.float32(0.5) + np.eye(k, dtype=np.float32)
    return (rng.normal((rows, k)) @ mixing).astype(np.float32)


def _output_error(layer, x, w):
    return frobenius(x.astype(np.float64) @ w.astype(np.float64), layer.forward(x))


@pytest.mark.slow
def test_segmented_amax_beats_monolithic():
    rng = Rng(300)
    seg = SegmentPlan("fc", (4, 4), (8,))
    mono = SegmentPlan("fc", (8,), (8,))
    for _ in range(100):
        w = _heterogeneous_layer(rng)
        x = _inputs(rng)
        seg_layer = amax_calibrate(w, None, seg, FLOAT_ACTS)
        mono_layer = amax_calibrate(w, None, mono, FLOAT_ACTS)
        assert _output_error(seg_layer, x, w) < _output_error(mono_layer, x, w)


@pytest.mark.slow
def test_segmented_gptq_beats_monolithic():
    rng = Rng(301)
    seg = SegmentPlan("fc", (4, 4), (8,))
    mono = SegmentPlan("fc", (8,), (8,))
    cfg = CalibConfig(method="gptq", block_size=4)
    for _ in range(100):
        w = _heterogeneous_layer(rng)
        x = _inputs(rng)
        seg_layer = gptq_calibrate(w, [x], seg, FLOAT_ACTS, cfg)
        mono_layer = gptq_calibrate(w, [x], mono, FLOAT_ACTS, cfg)
        assert _output_error(seg_layer, x, w) < _output_error(mono_layer, x, w)


def test_segmented_execution_equals_per_segment_execution():
    rng = Rng(302)
    plan = SegmentPlan("fc", (3, 5), (8,))
    w = _heterogeneous_layer(rng, widths=(3, 5), gains=(0.1, 2.0))
    x = _inputs(rng, rows=6)
    wq = amax_calibrate(w, None, plan, FLOAT_ACTS).weight
    xq = quantize(np.abs(x), Scheme("int_asym", 8))
    full = qgemm(xq, wq)
    for index, (c0, c1) in enumerate(plan.out_bounds()):
        part = quantize(w[:, c0:c1], Scheme("int_sym", 8), [wq.params[index]])
        assert np.array_equal(full[:, c0:c1], qgemm(xq, part))


@pytest.mark.slow
def test_gptq_is_not_worse_than_round_to_nearest():
    rng = Rng(500)
    plan = SegmentPlan("fc", (8,), (16,))
    cfg = CalibConfig(method="gptq", block_size=8)
    wins = 0
    for _ in range(100):
        w = rng.normal((16, 8))
        x = _inputs(rng, rows=64, k=16)
        reference = x.astype(np.float64) @ w.astype(np.float64)
        rtn = amax_calibrate(w, None, plan, W4)
        gptq = gptq_calibrate(w, [x], plan, W4, cfg)
        if mse(reference, gptq.forward(x)) <= mse(reference, rtn.forward(x)):
            wins += 1
    assert wins >= 95


def test_heavy_damping_degenerates_to_round_to_nearest():
    rng = Rng(501)
    plan = SegmentPlan("fc", (2, 4), (3, 5))
    for _ in range(10):
        w = rng.normal((8, 6))
        x = _inputs(rng, rows=16)
        rtn = amax_calibrate(w, None, plan, FLOAT_ACTS).weight
        damped = gptq_quantize_weight(w, [x], plan, Scheme("int_sym", 8), CalibConfig(damping=1e6))
        assert damped.params == rtn.params
        assert np.max(np.abs(dequantize(damped) - dequantize(rtn))) <= 1e-5


def test_singular_hessian_falls_back_to_amax(monkeypatch):
    def broken(_matrix):
        raise np.linalg.LinAlgError("Matrix is not positive definite")

    monkeypatch.setattr(np.linalg, "cholesky", broken)
    rng = Rng(502)
    w = rng.normal((4, 4))
    plan = SegmentPlan("fc", (4,), (4,))
    layer = gptq_calibrate(w, [rng.normal((8, 4))], plan, FLOAT_ACTS, CalibConfig(method="gptq"))
    assert layer.method == "amax"
    assert layer.notes[0].startswith("gptq-fallback")
    expected = amax_calibrate(w, None, plan, FLOAT_ACTS).weight
    assert np.array_equal(layer.weight.codes, expected.codes)
    assert layer.weight.params == expected.params


def test_hessian_and_dead_columns():
    x = np.array([[1.0, 0.0, 2.0], [3.0, 0.0, -1.0]], dtype=np.float32)
    h = build_hessian([x, x], 3)
    assert np.array_equal(h, 2 * (x.astype(np.float64).T @ x.astype(np.float64)))
    plan = SegmentPlan("fc", (2,), (3,))
    w = np.array([[1.0, -1.0], [5.0, 5.0], [0.5, 0.25]], dtype=np.float32)
    q = gptq_quantize_weight(w, [x], plan, Scheme("int_sym", 8), CalibConfig())
    assert q.codes[1].tolist() == [0, 0]


def test_activation_params_per_input_segment():
    plan = SegmentPlan("fc", (2,), (1, 2))
    stats = observe(CalibStats.empty("fc", 3), [[-0.5, 2.0, -8.0], [0.25, 1.0, 4.0]])
    params = activation_params(stats, plan, Scheme("int_sym", 8))
    assert [p.scale for p in params] == pytest.approx([0.5 / 127, 8.0 / 127])
    assert activation_params(None, plan, Scheme("int_sym", 8, "per_token_dynamic")) is None
    with pytest.raises(MissingStatsError):
        activation_params(None, plan, Scheme("dual_scale", 8))


def test_calibrate_layer_dispatch_and_config():
    rng = Rng(503)
    w = rng.normal((4, 2))
    x = rng.normal((8, 4))
    plan = SegmentPlan("fc", (2,), (4,))
    assert calibrate_layer(w, [x], None, plan, FLOAT_ACTS, CalibConfig(method="gptq")).method == "gptq"
    assert calibrate_layer(w, [x], None, plan, FLOAT_ACTS, CalibConfig()).method == "amax"
    fp8 = SchemePair(Scheme("fp8_e4m3_sim"), Scheme("fp8_e4m3_sim"))
    assert calibrate_layer(w, [x], None, plan, fp8, CalibConfig(method="gptq")).method == "amax"
    with pytest.raises(ConfigError):
        CalibConfig(method="adaround").validate()
    with pytest.raises(ConfigError):
        CalibConfig(damping=0.0).validate()
