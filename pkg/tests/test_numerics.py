import numpy as np
import pytest

from segquant.errors import NonFiniteError, ShapeMismatchError, ValidationError
from segquant.numerics import Rng, as_tensor, clip, gaussian, int_matmul, matmul, round_ties_away


def _naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for l in range(n):
            acc = np.float32(0.0)
            for j in range(k):
                acc = np.float32(acc + np.float32(a[i, j] * b[j, l]))
            out[i, l] = acc
    return out


def test_matmul_identity_and_annihilator():
    a = np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
    assert np.array_equal(matmul(np.eye(2, dtype=np.float32), a), a)
    assert np.array_equal(matmul(a, np.zeros((2, 3), dtype=np.float32)), np.zeros((2, 3), dtype=np.float32))


def test_matmul_matches_naive_triple_loop(rng):
    for _ in range(10):
        a = rng.normal((3, 4))
        b = rng.normal((4, 2))
        assert np.max(np.abs(matmul(a, b) - _naive_matmul(a, b))) == 0.0


def test_matmul_rejects_inner_mismatch():
    with pytest.raises(ShapeMismatchError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_int_matmul_is_exact():
    a = np.array([[127, -128], [5, 3]])
    b = np.array([[127, 1], [-128, 2]])
    assert int_matmul(a, b).tolist() == [[127 * 127 + 128 * 128, 127 - 256], [635 - 384, 11]]


@pytest.mark.parametrize(
    "value, expected",
    [(0.0, 0), (2.5, 3), (-2.5, -3), (-42.67, -43), (0.49999, 0), (1.5, 2), (-0.5, -1)],
)
def test_round_ties_away(value, expected):
    assert round_ties_away(value) == expected


def test_round_ties_away_arrays_and_non_finite():
    assert round_ties_away(np.array([0.5, -1.5, 2.4])).tolist() == [1, -2, 2]
    with pytest.raises(NonFiniteError):
        round_ties_away(float("nan"))
    with pytest.raises(NonFiniteError):
        round_ties_away(np.array([1.0, np.inf]))


def test_clip():
    assert clip(5, -128, 127) == 5
    assert clip(300, -128, 127) == 127
    assert clip(-300, -128, 127) == -128
    assert clip(3.0, 3.0, 3.0) == 3.0
    with pytest.raises(ValidationError):
        clip(0, 1, -1)


def test_as_tensor_rejects_non_finite_and_empty():
    with pytest.raises(NonFiniteError):
        as_tensor([[1.0, float("inf")]])
    with pytest.raises(ShapeMismatchError):
        as_tensor(np.zeros((0, 3)))
    with pytest.raises(ShapeMismatchError):
        as_tensor([1.0, 2.0, 3.0], shape=(2, 2))
    tensor = as_tensor([1, 2, 3, 4], shape=(2, 2))
    assert tensor.dtype == np.float32
    assert not tensor.flags.writeable


def test_rng_streams_are_reproducible():
    first = Rng(42)
    second = Rng(42)
    assert np.array_equal(first.next_u64(16), second.next_u64(16))
    assert np.array_equal(gaussian(first, (3, 5)), gaussian(second, (3, 5)))
    assert not np.array_equal(Rng(42).normal(8), Rng(43).normal(8))


def test_rng_uniform_and_integers_ranges(rng):
    draws = rng.uniform(1000)
    assert draws.min() >= 0.0 and draws.max() < 1.0
    ints = rng.integers(1, 11, 500)
    assert ints.min() >= 1 and ints.max() <= 10
    with pytest.raises(ValidationError):
        rng.integers(3, 3)


def test_rng_spawn_is_independent_of_parent_position():
    parent = Rng(9)
    child_before = parent.spawn(1).normal(4)
    parent.normal(100)
    child_after = parent.spawn(1).normal(4)
    assert np.array_equal(child_before, child_after)
    assert not np.array_equal(parent.spawn(1).normal(4), parent.spawn(2).normal(4))


def test_rng_normal_moments():
    sample = gaussian(Rng(5), 100_000).astype(np.float64)
    assert abs(sample.mean()) < 0.02
    assert abs(sample.var() - 1.0) < 0.05


def test_rng_seed_zero_known_answers():
    rng = Rng(0)
    assert rng.next_u64(4).tolist() == [
        0xE220A8397B1DCDAF,
        0x6E789E6AA1B965F4,
        0x06C45D188009454F,
        0xF88BB8A8724C81EC,
    ]
    assert Rng(0).spawn(1).seed == 0x5692161D100B05E5


def test_rng_uniform_uses_top_53_bits():
    expected = (0xE220A8397B1DCDAF >> 11) / 2.0**53
    assert Rng(0).uniform(1)[0] == expected
    assert Rng(0).integers(0, 10, 1)[0] == int(expected * 10)
