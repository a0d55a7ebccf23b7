import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wideconvex import minimize as mn
from wideconvex import network as nw
from wideconvex.epigraph import ParamBox, sample_function
from wideconvex.errors import EmptyArgmin, SweepCellError, UnsupportedDimension, ValidationError
from wideconvex.kernel import infinite_tail_cutoff, kernel_weights


def joint_brute_force(batch, alpha, n, grid):
    """Exhaustive search over the product grid; returns (min value, first minimizing tuple)."""
    fam = batch.family
    N = batch.N
    c = 1.0 / (1.0 + 2.0 * sum(alpha**j for j in range(1, N + 1)))
    nodes = grid.nodes
    best, arg = math.inf, None
    for combo in itertools.product(range(len(nodes)), repeat=2 * N + 1):
        total = 0.0
        for j, k in enumerate(combo):
            r = batch.Y[j, n] - fam.eval(nodes[k], batch.X[n])
            total += c * alpha ** abs(j - N) * float(r @ r)
        if total < best:
            best, arg = total, combo
    return best, np.array([nodes[k] for k in arg])


def even_indicator_losses(units, losses):
    return np.broadcast_to((units % 2 == 0).astype(float)[:, None], losses.shape).copy()


@pytest.fixture
def affine():
    return nw.builtin_family("affine")


class TestGridArgmin:
    def test_square(self):
        sf = sample_function(lambda x: x * x, ParamBox.interval(-1, 1, 0.01))
        am = mn.grid_argmin(sf, 1e-9)
        np.testing.assert_allclose(am.minimizers, [[0.0]], atol=1e-12)
        assert am.min_value == pytest.approx(0.0, abs=1e-20)

    def test_double_well(self):
        sf = sample_function(lambda x: (x * x - 1) ** 2, ParamBox.interval(-1, 1, 0.01))
        am = mn.grid_argmin(sf, 1e-9)
        np.testing.assert_allclose(am.minimizers[:, 0], [-1.0, 1.0])
        assert am.min_value == 0.0

    def test_constant_keeps_ties(self):
        box = ParamBox.interval(0, 1, 0.25)
        am = mn.grid_argmin(sample_function(lambda x: 3.0, box), 1e-9)
        assert len(am) == 5

    def test_tolerance_invariant(self):
        rng = np.random.default_rng(0)
        box = ParamBox(np.zeros(2), np.ones(2), 0.1)
        sf = mn.SampledFunction(box, rng.uniform(size=box.n_nodes))
        am = mn.grid_argmin(sf, 0.05)
        assert am.min_value == sf.values.min()
        vals = {tuple(v) for v in sf.nodes[sf.values <= am.min_value + 0.05]}
        assert vals == {tuple(v) for v in am.minimizers}


class TestArgminSetDistance:
    def test_inside(self):
        am = mn.ArgminSet(np.array([[-1.0], [1.0]]), 0.0, 1e-9)
        assert mn.argmin_set_distance([1.0], am) == 0.0

    def test_between(self):
        am = mn.ArgminSet(np.array([[-1.0], [1.0]]), 0.0, 1e-9)
        assert mn.argmin_set_distance(0.3, am) == pytest.approx(0.7)

    def test_empty(self):
        with pytest.raises(EmptyArgmin):
            mn.argmin_set_distance([0.0], mn.ArgminSet(np.empty((0, 1)), 0.0, 1e-9))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30)
    def test_matches_scan(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(17, 3))
        q = rng.normal(size=3)
        scan = min(math.dist(q, p) for p in pts)
        assert mn.argmin_set_distance(q, mn.ArgminSet(pts, 0.0, 0.0)) == pytest.approx(scan, rel=1e-14)


class TestPerUnitArgmin:
    def test_zero_noise_truth(self, affine):
        batch = nw.generate_batch(nw.DataConfig(affine, beta_star=[0.6], noise_scale=0.0, seed=1), 3, 1)
        fit = mn.per_unit_argmin(batch, 0.7)
        np.testing.assert_allclose(fit.betas[:, 0], 0.6, atol=1e-12)
        assert fit.min_phi == pytest.approx(0.0, abs=1e-25)

    def test_single_unit_is_grid_argmin(self, affine):
        batch = nw.generate_batch(nw.DataConfig(affine, beta_star=[0.5], seed=9), 0, 3)
        fit = mn.per_unit_argmin(batch, 0.5, n=2)
        y, x = batch.Y[0, 2, 0], batch.X[2, 0]
        sf = sample_function(lambda b: (y - b * x) ** 2, affine.domain)
        am = mn.grid_argmin(sf, 0.0)
        assert fit.betas[0, 0] == am.minimizers[0, 0]
        assert fit.min_phi == pytest.approx(am.min_value, rel=1e-14)

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_matches_joint_search(self, affine, seed):
        batch = nw.generate_batch(nw.DataConfig(affine, beta_star=[1.0], noise_scale=0.1, seed=seed), 1, 1)
        fit = mn.per_unit_argmin(batch, 0.6)
        best, arg = joint_brute_force(batch, 0.6, 0, affine.domain)
        assert fit.min_phi == pytest.approx(best, rel=1e-12, abs=1e-15)
        np.testing.assert_array_equal(fit.betas, arg)

    def test_joint_search_two_dim(self):
        fam = nw.builtin_family("sin_feature", d=2, domain=ParamBox(np.full(2, -1.0), np.full(2, 1.0), 0.5))
        batch = nw.generate_batch(nw.DataConfig(fam, beta_star=[0.5, -0.5], seed=4), 1, 1)
        fit = mn.per_unit_argmin(batch, 0.4)
        best, arg = joint_brute_force(batch, 0.4, 0, fam.domain)
        assert fit.min_phi == pytest.approx(best, rel=1e-12)
        np.testing.assert_array_equal(fit.betas, arg)

    def test_lexicographic_ties(self):
        box = ParamBox(np.zeros(2), np.ones(2), 0.5)
        fam = nw.builtin_family("affine", d=2, domain=box)
        batch = nw.generate_batch(nw.DataConfig(fam, beta_star=[0.0, 0.0], seed=1), 0, 1)
        fit = mn.per_unit_argmin(batch, 0.5, loss_transform=lambda u, l: np.zeros_like(l))
        np.testing.assert_array_equal(fit.betas, [[0.0, 0.0]])

    def test_weighted_sum_definition(self, affine):
        batch = nw.generate_batch(nw.DataConfig(affine, seed=5), 5, 1)
        fit = mn.per_unit_argmin(batch, 0.8)
        losses = mn.unit_grid_losses(batch, 0, affine.domain)
        w = kernel_weights(0.8, 5).weights
        assert fit.min_phi == pytest.approx(float(w @ losses.min(axis=1)), rel=1e-14)
        assert fit.min_phi == pytest.approx(nw.phi_loss(fit.betas, 0.8, batch, 0), rel=1e-12)

    def test_even_indicator_injection(self, affine):
        N = infinite_tail_cutoff(0.9, 1e-6)
        batch = nw.generate_batch(nw.DataConfig(affine, seed=1), N, 1)
        fit = mn.per_unit_argmin(batch, 0.9, loss_transform=even_indicator_losses)
        assert abs(fit.min_phi - 0.5) < 0.002
        assert fit.min_phi == pytest.approx(1.81 / 3.61, abs=1e-6)

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.9), st.floats(-0.05, 0.05))
    @settings(max_examples=30, deadline=None)
    def test_continuous_in_alpha(self, seed, alpha, shift):
        fam = nw.builtin_family("affine")
        batch = nw.generate_batch(nw.DataConfig(fam, seed=seed), 6, 1)
        a = mn.per_unit_argmin(batch, alpha)
        b = mn.per_unit_argmin(batch, alpha + shift)
        dk = np.abs(kernel_weights(alpha, 6).weights - kernel_weights(alpha + shift, 6).weights).sum()
        assert abs(a.min_phi - b.min_phi) <= a.unit_minima.max() * dk + 1e-15

    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 0.95))
    @settings(max_examples=30, deadline=None)
    def test_kernel_and_window_means_close(self, seed, alpha):
        fam = nw.builtin_family("affine")
        N = 10
        batch = nw.generate_batch(nw.DataConfig(fam, seed=seed), N, 1)
        fit = mn.per_unit_argmin(batch, alpha)
        spread = np.abs(kernel_weights(alpha, N).weights - 1 / (2 * N + 1)).sum()
        assert abs(fit.min_phi - fit.mean_per_unit_min) <= fit.unit_minima.max() * spread + 1e-15


class TestTheoremSweep:
    def test_zero_noise(self, affine):
        cfg = nw.DataConfig(affine, beta_star=[1.0], noise_scale=0.0)
        report = mn.theorem_sweep(cfg, [0.5, 0.9], [2, 5], [0, 1])
        assert len(report.rows) == 8
        for r in report.rows:
            assert r.min_phi == pytest.approx(0.0, abs=1e-25)
            assert r.mean_per_unit_min == pytest.approx(0.0, abs=1e-25)
            assert r.minorant_min == pytest.approx(0.0, abs=1e-25)

    def test_rows_sorted(self, affine):
        cfg = nw.DataConfig(affine, beta_star=[1.0])
        report = mn.theorem_sweep(cfg, [0.9, 0.5], [4, 2], [3, 1])
        keys = [(r.alpha, r.N, r.seed) for r in report.rows]
        assert keys == sorted(keys)

    def test_threads_do_not_change_rows(self, affine):
        cfg = nw.DataConfig(affine, beta_star=[1.0])
        a = mn.theorem_sweep(cfg, [0.5, 0.9], [3, 8], [0, 1, 2])
        b = mn.theorem_sweep(cfg, [0.5, 0.9], [3, 8], [0, 1, 2], threads=4)
        assert a.rows == b.rows

    def test_even_indicator_injection(self, affine):
        cfg = nw.DataConfig(affine, beta_star=[1.0])
        N = infinite_tail_cutoff(0.9, 1e-6)
        report = mn.theorem_sweep(cfg, [0.9], [N], [0], loss_transform=even_indicator_losses)
        assert abs(report.rows[0].min_phi - 0.5) < 0.002

    def test_gap_shrinks_with_alpha(self, affine):
        cfg = nw.DataConfig(affine, beta_star=[1.0], noise_scale=0.1)
        report = mn.theorem_sweep(cfg, [0.5, 0.9, 0.99], [4, 16, 64], [0, 1, 2, 3, 4])
        gaps = [g for _, g in report.gaps_along_alpha(64)]
        assert gaps[0] > gaps[1] > gaps[2]
        for r in report.rows:
            assert all(math.isfinite(v) for v in r.as_list())

    def test_columns_recomputed(self, affine):
        cfg = nw.DataConfig(affine, beta_star=[1.0], noise_scale=0.1)
        report = mn.theorem_sweep(cfg, [0.7], [6], [11])
        row = report.rows[0]
        batch = nw.generate_batch(nw.DataConfig(affine, beta_star=[1.0], noise_scale=0.1, seed=11), 6, 1)
        losses = mn.unit_grid_losses(batch, 0, affine.domain)
        minima = losses.min(axis=1)
        w = kernel_weights(0.7, 6).weights
        assert row.min_phi == pytest.approx(math.fsum(w * minima), rel=1e-14)
        assert row.mean_per_unit_min == pytest.approx(minima.sum() / 13, rel=1e-14)
        # the minorant never exceeds the landscape
        assert row.minorant_min <= losses.mean(axis=0).min() + 1e-15

    def test_rejects_high_dimension(self):
        fam = nw.builtin_family("tanh_neuron")
        with pytest.raises(UnsupportedDimension):
            mn.theorem_sweep(nw.DataConfig(fam, beta_star=[0, 0, 0]), [0.5], [1], [0])

    def test_rejects_bad_alpha(self, affine):
        with pytest.raises(ValidationError):
            mn.theorem_sweep(nw.DataConfig(affine), [1.0], [1], [0])

    def test_cell_failure_names_cell(self, affine):
        def boom(units, losses):
            raise FloatingPointError("overflow")

        with pytest.raises(SweepCellError) as info:
            mn.theorem_sweep(nw.DataConfig(affine), [0.5], [1], [7], loss_transform=boom)
        assert info.value.cell == (0.5, 1, 7)
