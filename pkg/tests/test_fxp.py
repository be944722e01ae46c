"""Fixed-point formats: probability codes, shared-exponent mantissas, requantization."""
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bsnn.fxp import (ACC32_MAX, ACC32_MIN, FxpDomainError, Q8Prob, QAffine, align,
                      dequantize_prob, quantize_affine, quantize_prob, requantize,
                      saturate_acc32, shared_exponent)

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)


def _exponent_oracle(values):
    vmax = max(abs(Fraction(v)) for v in values)
    if vmax == 0:
        return 0
    return min(e for e in range(-1100, 40) if vmax / Fraction(2) ** e <= 127)


class TestQuantizeProb:
    @pytest.mark.parametrize("p, raw", [(0.5, 128), (0.0, 0), (1.0, 255)])
    def test_examples(self, p, raw):
        assert quantize_prob(p) == raw

    def test_array_returns_uint8(self):
        out = quantize_prob(np.array([0.0, 0.25, 0.999]))
        assert out.dtype == np.uint8
        assert out.tolist() == [0, 64, 255]

    @pytest.mark.parametrize("p", [-0.01, 1.01, float("nan")])
    def test_out_of_range(self, p):
        with pytest.raises(FxpDomainError):
            quantize_prob(p)

    @given(st.floats(0, 1))
    def test_matches_half_even_oracle(self, p):
        expect = min(max(round(Fraction(p) * 256), 0), 255)
        assert quantize_prob(p) == expect

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert quantize_prob(lo) <= quantize_prob(hi)

    @given(st.floats(0, 1))
    def test_decode_error(self, p):
        err = abs(p - dequantize_prob(quantize_prob(p)))
        # half a code unit, except the clamp at the top end
        assert err <= 0.5 / 256 + 1e-15 or p > 255.5 / 256

    def test_q8prob_range(self):
        assert Q8Prob(255).value == 255 / 256
        with pytest.raises(FxpDomainError):
            Q8Prob(256)


class TestQuantizeAffine:
    def test_zero_vector(self):
        q = quantize_affine([0.0, 0.0, 0.0])
        assert q.exponent == 0 and q.mantissa.tolist() == [0, 0, 0]

    def test_one(self):
        q = quantize_affine([1.0])
        assert (q.mantissa.tolist(), q.exponent) == ([64], -6)
        assert q.decode().tolist() == [1.0]

    def test_mixed(self):
        q = quantize_affine([127.0, -3.5])
        assert (q.mantissa.tolist(), q.exponent) == ([127, -4], 0)

    def test_empty_is_error(self):
        with pytest.raises(FxpDomainError):
            quantize_affine([])

    @given(st.lists(finite, min_size=1, max_size=12))
    def test_exponent_is_smallest_fitting(self, values):
        assert shared_exponent(values) == _exponent_oracle(values)

    @given(st.lists(finite, min_size=1, max_size=12))
    def test_reconstruction_error(self, values):
        q = quantize_affine(values)
        bound = 2.0 ** (q.exponent - 1)
        assert np.all(np.abs(q.decode() - np.asarray(values)) <= bound)
        assert np.all(np.abs(q.mantissa.astype(int)) <= 127)

    def test_mantissa_range_enforced(self):
        with pytest.raises(FxpDomainError):
            QAffine(np.array([200]), 0)


class TestRequantize:
    @pytest.mark.parametrize("acc, e, out", [(0, 0, 0), (300, 0, 127), (37, 2, 9),
                                             (-300, 0, -127), (6, 2, 2), (10, 2, 2), (-6, 2, -2)])
    def test_examples(self, acc, e, out):
        assert requantize(acc, e) == out

    @given(st.integers(-127, 127))
    def test_identity_at_zero_shift(self, x):
        assert requantize(x, 0) == x

    @given(st.integers(ACC32_MIN, ACC32_MAX), st.integers(1, 20))
    def test_half_even_oracle(self, acc, e):
        expect = max(-127, min(127, round(Fraction(acc, 2**e))))
        assert requantize(acc, e) == expect

    def test_vector(self):
        out = requantize(np.array([1, 2, 3, 5]), 1)
        assert out.tolist() == [0, 1, 2, 2]


class TestAlignAndSaturate:
    @given(st.lists(finite, min_size=1, max_size=8), st.integers(0, 10))
    def test_align_is_exact(self, values, finer):
        q = quantize_affine(values)
        ints = align(q, q.exponent - finer)
        assert np.array_equal(np.ldexp(ints.astype(np.float64), q.exponent - finer), q.decode())

    def test_align_rejects_coarser(self):
        with pytest.raises(FxpDomainError):
            align(quantize_affine([1.0]), 0)

    def test_saturate(self):
        x = np.array([ACC32_MIN - 5, 0, ACC32_MAX + 5], dtype=np.int64)
        assert saturate_acc32(x).tolist() == [ACC32_MIN, 0, ACC32_MAX]
