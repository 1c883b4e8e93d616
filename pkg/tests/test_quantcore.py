import numpy as np
import pytest

from segquant.errors import SchemeError, ShapeMismatchError, ValidationError
from segquant.graphir import silu
from segquant.numerics import Rng
from segquant.quantcore import (
    FP8_E4M3_MAX,
    QParams,
    QuantizedLayer,
    Scheme,
    dequantize,
    fp8_sim,
    qgemm,
    qparams_asymmetric,
    qparams_dual,
    qparams_symmetric,
    quantize,
    segmented_quantize_weight,
    weight_error,
)
from segquant.seginfer import SegmentPlan

SYM = Scheme("int_sym", 8)
ASYM = Scheme("int_asym", 8)
DUAL = Scheme("dual_scale", 8)


def _relative(reference, candidate):
    reference = np.asarray(reference, dtype=np.float64)
    norm = np.linalg.norm(reference)
    return float(np.linalg.norm(reference - np.asarray(candidate, dtype=np.float64)) / max(norm, 1e-12))


def _exact_dequantize(q):
    out = np.zeros(q.shape, dtype=np.float64)
    for index, (r0, r1), (c0, c1) in q.blocks():
        arrays = q.block_arrays(index)
        codes = q.codes[r0:r1, c0:c1].astype(np.int64) - arrays.zero
        block = arrays.scale.astype(np.float64) * codes
        if q.neg_codes is not None:
            block = block + arrays.neg_scale.astype(np.float64) * q.neg_codes[r0:r1, c0:c1]
        out[r0:r1, c0:c1] = block
    return out


def _oracle(xq, wq):
    return _exact_dequantize(xq) @ _exact_dequantize(wq)


def _case(rng):
    m, k, n = (int(v) for v in rng.integers(1, 9, 3))
    x = rng.normal((m, k)) * np.float32(2.0) + np.float32(0.3)
    w = rng.normal((k, n)) * np.float32(0.5) - np.float32(0.1)
    return x, w


@pytest.mark.parametrize(
    "x_scheme, w_scheme",
    [(SYM, SYM), (ASYM, ASYM), (DUAL, SYM), (DUAL, ASYM)],
    ids=["symmetric", "asymmetric", "dual-scale", "dual-scale-asym-weights"],
)
def test_qgemm_matches_dequantized_oracle(x_scheme, w_scheme):
    rng = Rng(2024)
    for _ in range(200):
        x, w = _case(rng)
        xq = quantize(x, x_scheme)
        wq = quantize(w, w_scheme)
        assert _relative(_oracle(xq, wq), qgemm(xq, wq)) <= 1e-6


def test_segmented_qgemm_matches_oracle():
    rng = Rng(77)
    for _ in range(200):
        x, w = _case(rng)
        k = x.shape[1]
        if k < 2:
            continue
        cut = int(rng.integers(1, k)[0])
        bounds = ((0, cut), (cut, k))
        xq = quantize(x, DUAL, col_bounds=bounds)
        wq = quantize(w, ASYM, row_bounds=((0, k),), col_bounds=((0, w.shape[1]),))
        assert _relative(_oracle(xq, wq), qgemm(xq, wq)) <= 1e-6
        wq = quantize(w, SYM, row_bounds=((0, 1), (1, k)))
        assert _relative(_oracle(xq, wq), qgemm(xq, wq)) <= 1e-6


def test_asymmetric_expansion_is_bitwise_equal_to_unexpanded_form():
    rng = Rng(31)
    for _ in range(200):
        x, w = _case(rng)
        xq = quantize(x, ASYM)
        wq = quantize(w, ASYM)
        px, pw = xq.params[0][0], wq.params[0][0]
        shifted = (xq.codes.astype(np.int64) - px.zero_point) @ (wq.codes.astype(np.int64) - pw.zero_point)
        direct = (np.float64(px.scale) * (np.float64(pw.scale) * shifted)).astype(np.float32)
        assert np.array_equal(qgemm(xq, wq), direct)


def test_symmetric_params_and_codes():
    params = qparams_symmetric(1.27, 8)
    assert params.scale == pytest.approx(0.01)
    q = quantize(np.array([[1.27, -1.27, 0.006, 0.0]], dtype=np.float32), SYM, params)
    assert q.codes.tolist() == [[127, -127, 1, 0]]
    assert qparams_symmetric(0.0, 8).scale > 0


def test_asymmetric_range_contains_zero():
    params = qparams_asymmetric(0.5, 2.0, 8)
    assert params.q_min == -128 and params.q_max == 127
    q = quantize(np.array([[0.0, 2.0]], dtype=np.float32), ASYM, params)
    assert dequantize(q)[0, 0] == 0.0
    assert abs(dequantize(q)[0, 1] - 2.0) <= params.scale
    with pytest.raises(ValidationError):
        qparams_asymmetric(1.0, -1.0, 8)


def test_dual_scale_uses_separate_steps():
    params = qparams_dual(-0.25, 4.0, 8)
    assert params.neg_scale == pytest.approx(0.25 / 128)
    assert params.scale == pytest.approx(4.0 / 127)
    q = quantize(np.array([[-0.25, 4.0, -0.1]], dtype=np.float32), DUAL, params)
    assert q.codes.tolist() == [[0, 127, 0]]
    assert q.neg_codes.tolist() == [[-128, 0, -51]]


def test_dual_scale_resolves_negative_silu_values(regression_pins):
    rng = Rng(5)
    sym_total = dual_total = 0.0
    for _ in range(100):
        x = silu(rng.normal((16, 32)) * np.float32(2.0))
        negative = x < 0
        sym = quantize(x, SYM)
        dual = quantize(x, DUAL)
        sym_err = np.abs(dequantize(sym) - x)[negative]
        dual_err = np.abs(dequantize(dual) - x)[negative]
        sym_step = sym.params[0][0].scale
        neg_step = dual.params[0][0].neg_scale
        assert neg_step < sym_step
        assert np.all(dual_err <= 0.5 * neg_step + 1e-6)
        assert np.all(dual_err <= 0.5 * sym_step + 1e-6)
        assert float(np.mean(dual_err**2)) < float(np.mean(sym_err**2))
        sym_total += float(np.mean(sym_err**2))
        dual_total += float(np.mean(dual_err**2))
    regression_pins.check("dualscale_negative_mse_ratio", sym_total / dual_total)


def test_per_channel_and_per_token_granularity():
    w = np.array([[1.0, 100.0], [-0.25, -25.0]], dtype=np.float32)
    q = quantize(w, Scheme("int_sym", 8, "per_channel"))
    assert len(q.params[0]) == 2
    assert q.codes.tolist() == [[127, 127], [-32, -32]]
    x = np.array([[1.0, -2.0], [10.0, 5.0]], dtype=np.float32)
    q = quantize(x, Scheme("int_sym", 8, "per_token_dynamic"))
    assert [p.scale for p in q.params[0]] == pytest.approx([2.0 / 127, 10.0 / 127])
    with pytest.raises(SchemeError):
        quantize(x, Scheme("int_sym", 8, "per_token_dynamic"), qparams_symmetric(1.0, 8))


def test_fp8_simulation_grid():
    values = np.array([0.0, 1.0, 1.0625, 1.1, 500.0, -500.0, 2.0**-9], dtype=np.float32)
    out = fp8_sim(values)
    assert out[0] == 0.0
    assert out[1] == 1.0
    assert out[2] == 1.0
    assert out[3] == 1.125
    assert out[4] == FP8_E4M3_MAX
    assert out[5] == -FP8_E4M3_MAX
    assert out[6] == 2.0**-9
    assert np.array_equal(fp8_sim(out), out)


def test_fp8_and_integer_cannot_mix():
    x = quantize(np.ones((1, 2), dtype=np.float32), Scheme("fp8_e4m3_sim"))
    w = quantize(np.ones((2, 2), dtype=np.float32), SYM)
    with pytest.raises(SchemeError):
        qgemm(x, w)
    both = qgemm(x, quantize(np.ones((2, 2), dtype=np.float32), Scheme("fp8_e4m3_sim")))
    assert np.array_equal(both, np.full((1, 2), 2.0, dtype=np.float32))


def test_scheme_validation():
    with pytest.raises(SchemeError):
        Scheme("dual_scale").validate("weight")
    with pytest.raises(SchemeError):
        Scheme("int_sym", 6).validate()
    with pytest.raises(SchemeError):
        Scheme("int_sym", 8, "per_channel").validate("activation")
    with pytest.raises(SchemeError):
        Scheme("int3").validate()
    assert Scheme("fp8_e4m3_sim", 3).validate("weight").kind == "fp8_e4m3_sim"


def test_qparams_validation():
    with pytest.raises(ValidationError):
        QParams(scale=0.0, q_min=-127, q_max=127)
    with pytest.raises(ValidationError):
        QParams(scale=1.0, q_min=0, q_max=127)
    with pytest.raises(ValidationError):
        QParams(scale=1.0, q_min=-128, q_max=127, zero_point=200)
    assert QParams.from_dict(qparams_dual(-1.0, 1.0, 4).to_dict()) == qparams_dual(-1.0, 1.0, 4)


def test_segmented_weight_blocks_have_independent_params():
    plan = SegmentPlan("fc", (2, 2), (1, 2))
    w = np.array([[0.01, -0.02, 5.0, -4.0], [1.0, 2.0, 3.0, -1.0], [0.5, -0.5, 0.25, 0.1]], dtype=np.float32)
    q = segmented_quantize_weight(w, plan, SYM)
    assert len(q.params) == 4
    scales = [group[0].scale for group in q.params]
    assert scales[0] == pytest.approx(0.02 / 127)
    assert scales[1] == pytest.approx(5.0 / 127)
    monolithic = quantize(w, SYM)
    assert weight_error(w, q) < weight_error(w, monolithic)
    with pytest.raises(ShapeMismatchError):
        segmented_quantize_weight(w.T, plan, SYM)


def test_quantized_layer_requires_static_params():
    plan = SegmentPlan("fc", (2,), (1, 1))
    weight = quantize(np.ones((2, 2), dtype=np.float32), SYM)
    with pytest.raises(ValidationError):
        QuantizedLayer("fc", plan, weight, SYM, act_params=(qparams_symmetric(1.0, 8),))
    layer = QuantizedLayer(
        "fc",
        plan,
        weight,
        SYM,
        act_params=(qparams_symmetric(1.0, 8), qparams_symmetric(1.0, 8)),
        bias=np.array([1.0, 0.0], dtype=np.float32),
    )
    out = layer.forward(np.array([[1.0, 1.0]], dtype=np.float32))
    assert np.allclose(out, [[3.0, 2.0]], atol=1e-5)


def test_asymmetric_worked_examples():
    params = qparams_asymmetric(-1.0, 3.0, 8)
    assert params.scale == pytest.approx(0.0156863, rel=1e-5)
    assert params.zero_point == -64
    params = qparams_asymmetric(0.0, 2.55, 8)
    assert params.scale == pytest.approx(0.01, rel=1e-6)
    assert params.zero_point == -128


def test_dual_scale_worked_examples():
    params = qparams_dual(-0.3, 3.0, 8)
    assert params.neg_scale == pytest.approx(0.00234375, rel=1e-6)
    q = quantize(np.array([[-0.1, -0.3]], dtype=np.float32), DUAL, params)
    out = dequantize(q)
    assert out[0, 0] == pytest.approx(-0.10078125, rel=1e-6)
    assert out[0, 1] == np.float32(-0.3)


def test_fp8_worked_examples():
    out = fp8_sim(np.array([0.3, 500.0], dtype=np.float32))
    assert out.tolist() == [0.3125, 448.0]


def test_per_token_dynamic_row_scales():
    x = np.array([[0.5, -1.0, 0.25], [100.0, -3.0, 7.0]], dtype=np.float32)
    q = quantize(x, Scheme("int_sym", 8, "per_token_dynamic"))
    assert [p.scale for p in q.params[0]] == pytest.approx([1.0 / 127, 100.0 / 127])
