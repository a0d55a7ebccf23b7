import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wideconvex import kernel as k
from wideconvex.errors import AlphaOutOfRange, CesaroNotConverged, ValidationError


def direct_normalizer(alpha, N):
    return 1.0 / (1.0 + 2.0 * math.fsum(alpha**j for j in range(1, N + 1)))


def summed_tail(alpha, N, terms=20000):
    c = (1 - alpha) / (1 + alpha)
    return 2 * c * math.fsum(alpha**j for j in range(N + 1, N + 1 + terms))


def even_odd_closed_form(alpha):
    return (1 + alpha**2) / (1 + alpha) ** 2


def period_three_closed_form(alpha):
    c = (1 - alpha) / (1 + alpha)
    return c * (1 + alpha**3) / (1 - alpha**3)


class TestKernelWeights:
    def test_half_alpha_width_one(self):
        kw = k.kernel_weights(0.5, 1)
        np.testing.assert_allclose(kw.weights, [0.25, 0.5, 0.25], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("alpha", [0.01, 0.5, 0.999])
    def test_zero_width_is_unit_mass(self, alpha):
        kw = k.kernel_weights(alpha, 0)
        assert kw.weights.tolist() == [1.0]
        assert kw.normalizer == 1.0

    def test_alpha_09_width_10(self):
        kw = k.kernel_weights(0.9, 10)
        assert abs(kw.weights.sum() - 1) < 1e-12
        assert kw.normalizer == pytest.approx(direct_normalizer(0.9, 10), rel=1e-14)
        assert kw.normalizer == pytest.approx(k.closed_form_normalizer(0.9, 10), rel=1e-13)

    def test_exact_rational_normalizer(self):
        # alpha = 1/2, N = 3: 1 + 2 (1/2 + 1/4 + 1/8) = 11/4
        kw = k.kernel_weights(0.5, 3)
        assert Fraction(kw.normalizer).limit_denominator(100) == Fraction(4, 11)

    def test_indexing(self):
        kw = k.kernel_weights(0.7, 4)
        assert kw[-2] == kw[2] == kw.normalizer * 0.7**2
        assert len(kw) == 9
        with pytest.raises(IndexError):
            kw[5]

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5])
    def test_alpha_range(self, alpha):
        with pytest.raises(AlphaOutOfRange):
            k.kernel_weights(alpha, 3)

    def test_negative_width(self):
        with pytest.raises(ValidationError):
            k.kernel_weights(0.5, -1)

    def test_weights_read_only(self):
        with pytest.raises(ValueError):
            k.kernel_weights(0.5, 2).weights[0] = 1.0

    def test_seeded_normalization_sample(self):
        rng = np.random.default_rng(2024)
        alphas = rng.uniform(0.01, 0.99, 200)
        widths = rng.integers(0, 2001, 200)
        for alpha, N in zip(alphas, widths):
            assert abs(k.kernel_weights(alpha, int(N)).weights.sum() - 1) < 1e-12

    @given(st.floats(0.01, 0.99), st.integers(0, 300))
    def test_symmetric_and_monotone(self, alpha, N):
        w = k.kernel_weights(alpha, N).weights
        assert np.array_equal(w, w[::-1])
        half = w[N:]
        assert np.all(half[1:] <= half[:-1])


class TestTailCutoff:
    def test_alpha_09(self):
        N = k.infinite_tail_cutoff(0.9, 1e-6)
        assert N == 131
        assert summed_tail(0.9, 131) < 1e-6 <= summed_tail(0.9, 130)

    def test_alpha_05_half(self):
        assert k.infinite_tail_cutoff(0.5, 0.5) == 1
        assert summed_tail(0.5, 0, 200) >= 0.5 > summed_tail(0.5, 1, 200)

    @pytest.mark.parametrize("alpha", [0.1, 0.5, 0.99])
    def test_loose_tolerance_gives_zero(self, alpha):
        assert k.infinite_tail_cutoff(alpha, 1.0) == 0
        assert k.infinite_tail_cutoff(alpha, 5.0) == 0

    def test_rejects_nonpositive_tol(self):
        with pytest.raises(ValidationError):
            k.infinite_tail_cutoff(0.5, 0.0)

    @given(st.floats(0.01, 0.999), st.floats(1e-12, 0.9))
    @settings(max_examples=80)
    def test_certified_mass(self, alpha, tol):
        N = k.infinite_tail_cutoff(alpha, tol)
        c = (1 - alpha) / (1 + alpha)
        mass = c * (1 + 2 * math.fsum(alpha**j for j in range(1, N + 1)))
        assert 1 - tol - 1e-12 <= mass <= 1 + 1e-12
        if N > 0:
            assert k.tail_mass(alpha, N - 1) >= tol


class TestCesaro:
    def test_constant(self):
        for N in (0, 1, 17):
            assert k.cesaro_mean(k.constant_sequence(-2.5), N) == -2.5

    def test_even_indicator_small(self):
        assert k.cesaro_mean(k.even_indicator(), 2) == pytest.approx(0.6, abs=1e-15)

    def test_even_indicator_large(self):
        assert k.cesaro_mean(k.even_indicator(), 500) == pytest.approx(501 / 1001, abs=1e-15)

    def test_scalar_generator(self):
        s = k.TwoSidedSequence(lambda i: 1.0 if i % 2 == 0 else 0.0, 1.0)
        assert k.cesaro_mean(s, 2) == pytest.approx(0.6)

    def test_bound_is_enforced(self):
        s = k.TwoSidedSequence(lambda i: float(i), 3.0)
        with pytest.raises(ValidationError):
            k.cesaro_mean(s, 5)


class TestAbelMean:
    @pytest.mark.parametrize("alpha", [0.3, 0.9])
    def test_constant(self, alpha):
        assert k.abel_kernel_mean(k.constant_sequence(1.75), alpha, 1e-10) == pytest.approx(1.75, abs=1e-10)

    @pytest.mark.parametrize("alpha, expected", [(0.9, 1.81 / 3.61), (0.5, 1.25 / 2.25)])
    def test_even_indicator(self, alpha, expected):
        tol = 1e-10
        assert expected == pytest.approx(even_odd_closed_form(alpha), abs=1e-15)
        assert abs(k.abel_kernel_mean(k.even_indicator(), alpha, tol) - expected) <= tol

    def test_zero_bound(self):
        assert k.abel_kernel_mean(k.constant_sequence(0.0), 0.5) == 0.0

    @given(st.floats(0.05, 0.95), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_stays_within_bound(self, alpha, seed):
        table = np.random.default_rng(seed).uniform(-2, 2, 97)
        s = k.TwoSidedSequence(lambda i: table[np.asarray(i) % 97], 2.0, vectorized=True)
        tol = 1e-8
        assert abs(k.abel_kernel_mean(s, alpha, tol)) <= 2.0 + tol


class TestTauberianGap:
    def test_constant_sequence(self):
        table = k.tauberian_gap(k.constant_sequence(0.4), [0.5, 0.9], 1000, tol=1e-9)
        assert all(r.gap <= r.tolerance for r in table.rows)

    def test_even_indicator_matches_closed_form(self):
        alphas = [0.5, 0.9, 0.99]
        table = k.tauberian_gap(k.even_indicator(), alphas, 1_000_000, tol=1e-10)
        expected = [even_odd_closed_form(a) - 0.5 for a in alphas]
        np.testing.assert_allclose(expected, [0.0555556, 0.0013850, 1.2563e-5], rtol=0, atol=5e-7)
        for row, want in zip(table.rows, expected):
            assert abs(row.gap - want) <= row.tolerance
        assert table.monotone
        assert np.all(np.diff(table.gaps) < 0)

    def test_period_three(self):
        alphas = [0.5, 0.9, 0.99, 0.999]
        table = k.tauberian_gap(k.period_three(), alphas, 600_000, tol=1e-10)
        for row, alpha in zip(table.rows, alphas):
            assert row.abel == pytest.approx(period_three_closed_form(alpha), abs=1e-9)
        assert table.monotone
        assert table.rows[-1].gap < 0.01

    def test_unconverged_cesaro(self):
        # blocks of doubling length keep the window average oscillating
        s = k.TwoSidedSequence(
            lambda i: (np.floor(np.log2(np.abs(np.asarray(i)) + 1)) % 2).astype(float), 1.0, vectorized=True
        )
        with pytest.raises(CesaroNotConverged) as info:
            k.tauberian_gap(s, [0.5], 1000)
        assert info.value.full != info.value.half

    def test_strictly_smaller_near_one(self):
        for s in (k.even_indicator(), k.period_three()):
            table = k.tauberian_gap(s, [0.5, 0.99], 600_000, tol=1e-10)
            assert table.rows[1].gap < table.rows[0].gap


class TestUniformityGap:
    def test_zero_width(self):
        alpha = 0.6
        c = (1 - alpha) / (1 + alpha)
        s = k.constant_sequence(3.0)
        assert k.finiteN_uniformity_gap(s, alpha, 0) == pytest.approx(3.0 * (abs(1 - c) + 1 - c), rel=1e-13)

    def test_vanishes_past_cutoff(self):
        s = k.constant_sequence(2.0)
        N = k.infinite_tail_cutoff(0.8, 1e-12)
        assert k.finiteN_uniformity_gap(s, 0.8, N) <= 1e-10 * 2.0

    def test_zero_bound(self):
        assert k.finiteN_uniformity_gap(k.constant_sequence(0.0), 0.5, 4) == 0.0

    def test_identity_with_normalizers(self):
        # the difference sum collapses to 2 (1 - C / C_N)
        alpha, N = 0.85, 12
        c = (1 - alpha) / (1 + alpha)
        c_n = direct_normalizer(alpha, N)
        gap = k.finiteN_uniformity_gap(k.constant_sequence(1.0), alpha, N)
        assert gap == pytest.approx(2 * (1 - c / c_n), rel=1e-10)

    @given(st.floats(0.05, 0.98))
    @settings(max_examples=30)
    def test_nonincreasing_in_width(self, alpha):
        s = k.constant_sequence(1.0)
        gaps = [k.finiteN_uniformity_gap(s, alpha, N) for N in range(0, 60)]
        assert np.all(np.diff(gaps) <= 1e-15)
