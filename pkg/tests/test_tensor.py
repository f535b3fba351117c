import math

import numpy as np
import pytest

from segres.tensor import Rng, finite_diff_grad, he_init, new_tensor
from segres.validation import NumericError, ShapeError


def reference_splitmix64(seed, n):
    """Independent SplitMix64 oracle in plain Python integers."""
    mask = (1 << 64) - 1
    out = []
    state = seed & mask
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


class TestNewTensor:
    def test_zero_fill(self):
        t = new_tensor([2, 2], 0.0)
        assert t.shape == (2, 2)
        assert np.array_equal(t.ravel(), [0, 0, 0, 0])

    def test_constant_fill(self):
        t = new_tensor([1, 3, 4, 4], 1.5)
        assert t.size == 48
        assert (t == 1.5).all()

    def test_zero_dimension_rejected(self):
        with pytest.raises(ShapeError):
            new_tensor([3, 0], 0.0)

    def test_empty_shape_rejected(self):
        with pytest.raises(ShapeError):
            new_tensor([], 0.0)

    def test_dtype_is_float64(self):
        assert new_tensor([2], 1.0).dtype == np.float64


class TestRng:
    def test_matches_reference_splitmix64(self):
        for seed in (0, 1, 42, 2**64 - 1):
            rng = Rng(seed)
            got = [rng.next_u64() for _ in range(16)]
            assert got == reference_splitmix64(seed, 16)

    def test_block_equals_single_draws(self):
        a = Rng(9)._block(10)
        b = np.array([Rng(9).next_u64() for _ in range(10)], dtype=np.uint64)
        # second generator consumed one value per call, realigning each time
        rng = Rng(9)
        c = np.array([rng.next_u64() for _ in range(10)], dtype=np.uint64)
        assert np.array_equal(a, c)
        assert a[0] == b[0]

    def test_uniform_in_half_open_unit(self):
        u = Rng(3).uniform(10_000)
        assert (u > 0).all() and (u <= 1).all()
        assert abs(u.mean() - 0.5) < 0.02

    def test_same_seed_same_stream(self):
        assert np.array_equal(Rng(7).normal((3, 5)), Rng(7).normal((3, 5)))

    def test_different_seeds_differ(self):
        assert not np.array_equal(Rng(7).normal((16,)), Rng(8).normal((16,)))

    def test_shuffle_is_permutation_and_deterministic(self):
        items = list(range(20))
        rng = Rng(5)
        rng.shuffle(items)
        assert sorted(items) == list(range(20))
        again = list(range(20))
        Rng(5).shuffle(again)
        assert items == again

    def test_below_bound(self):
        rng = Rng(1)
        draws = [rng.below(7) for _ in range(200)]
        assert min(draws) >= 0 and max(draws) < 7


class TestHeInit:
    def test_statistics_match_target(self):
        t = he_init([64, 3, 3, 3], fan_in=27, rng=Rng(42))
        assert t.shape == (64, 3, 3, 3)
        target = math.sqrt(2.0 / 27)  # ~0.272
        assert abs(t.mean()) < 0.02
        assert abs(t.std() - target) < 0.1 * target

    def test_std_shrinks_with_fan_in(self):
        small = he_init([1000], fan_in=10, rng=Rng(0)).std()
        large = he_init([1000], fan_in=10_000, rng=Rng(0)).std()
        assert large < small / 10

    def test_same_seed_bitwise_identical(self):
        a = he_init([4, 4], 8, Rng(11))
        b = he_init([4, 4], 8, Rng(11))
        assert np.array_equal(a, b)

    def test_bad_fan_in(self):
        with pytest.raises(ValueError):
            he_init([2, 2], 0, Rng(0))


class TestFiniteDiff:
    def test_linear_function_gives_ones(self):
        x = Rng(2).normal((2, 3))
        g = finite_diff_grad(lambda v: float(v.sum()), x, eps=1e-3)
        assert np.abs(g - 1.0).max() < 1e-9

    def test_quadratic_matches_analytic(self):
        x = np.array([1.0, 2.0])
        g = finite_diff_grad(lambda v: float((v**2).sum()), x, eps=1e-3)
        assert np.abs(g - np.array([2.0, 4.0])).max() < 1e-6

    def test_constant_function_gives_zeros(self):
        g = finite_diff_grad(lambda v: 3.25, np.ones((2, 2)), eps=1e-3)
        assert (g == 0).all()

    def test_input_left_untouched(self):
        x = np.array([1.0, 2.0, 3.0])
        before = x.copy()
        finite_diff_grad(lambda v: float(v.sum()), x)
        assert np.array_equal(x, before)

    def test_nonfinite_evaluation_raises(self):
        with np.errstate(invalid="ignore"), pytest.raises(NumericError):
            finite_diff_grad(lambda v: float(np.log(v).sum()), np.array([1e-9]), eps=1e-3)

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda v: 0.0, np.ones(2), eps=0.0)
