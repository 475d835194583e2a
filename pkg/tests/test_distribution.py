"""Resample-if-rejected densities, divergences, and the certified bounds.

Every expected value here is either hand-computable on a 2-atom base or
checked against a brute-force enumeration of the sampling procedure."""

import numpy as np
import pytest
from scipy.stats import wasserstein_distance

from performa.distribution import (EmpiricalBase, certify_sensitivity, chi2,
                                   norm_ratio, rir_density, rir_sample, w1_1d)
from performa.errors import (DataError, DegenerateNormError, DomainError,
                             SupportError)
from performa.harness import SyntheticSpec, gen_synthetic
from performa.predictor import init_params


def const(c):
    return lambda X: np.full(X.shape[0], c)


def brute_force_strategic_density(base, preds_fn, delta):
    """Enumerate the one-round strategic sampler exactly: first draw i,
    accept with 1-g, on rejection draw j and keep (x_f, y) from i while
    taking the strategic block from j. Returns a dict cell -> probability
    with cell = (strategic bytes, nonstrategic bytes, y)."""
    s_idx, f_idx = base.strategic_idx, base.nonstrategic_idx
    g = preds_fn(base.X) + delta
    out = {}
    for i in range(base.n_atoms):
        cell_i = (base.X[i, s_idx].tobytes(), base.X[i, f_idx].tobytes(),
                  float(base.y[i]))
        out[cell_i] = out.get(cell_i, 0.0) + base.weights[i] * (1.0 - g[i])
        for j in range(base.n_atoms):
            cell = (base.X[j, s_idx].tobytes(), base.X[i, f_idx].tobytes(),
                    float(base.y[i]))
            out[cell] = out.get(cell, 0.0) + (base.weights[i] * g[i]
                                              * base.weights[j])
    return out


class TestEmpiricalBase:
    def test_duplicates_merge_with_summed_weight(self):
        X = np.array([[1.0, 2.0], [1.0, 2.0], [3.0, 4.0]])
        y = np.array([1.0, 1.0, 0.0])
        base = EmpiricalBase.from_arrays(X, y)
        assert base.n_atoms == 2
        np.testing.assert_allclose(base.weights, [2 / 3, 1 / 3])

    def test_same_features_different_labels_stay_separate(self):
        X = np.array([[1.0], [1.0]])
        base = EmpiricalBase.from_arrays(X, np.array([0.0, 1.0]))
        assert base.n_atoms == 2

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            EmpiricalBase(np.zeros((2, 1)), np.zeros(2), np.array([0.5, 0.6]),
                          np.array([], dtype=np.intp), np.array([0], dtype=np.intp))

    def test_partition_must_cover(self):
        with pytest.raises(ValueError):
            EmpiricalBase(np.zeros((1, 2)), np.zeros(1), np.ones(1),
                          np.array([0], dtype=np.intp),
                          np.array([], dtype=np.intp))

    def test_productized_is_outer_product(self, small_strategic_base):
        base = small_strategic_base
        prod = base.productized()
        U, a, V, yV, b, _, _ = base._strategic_blocks()
        assert prod.n_atoms == U.shape[0] * V.shape[0]
        np.testing.assert_allclose(prod.weights, np.outer(a, b).ravel())
        assert abs(prod.weights.sum() - 1.0) < 1e-12


class TestRirDensity:
    def test_constant_predictor_is_fixed_point(self, two_atom_base):
        ind = rir_density(two_atom_base, const(0.05), 0.9)
        np.testing.assert_array_equal(ind.weights, two_atom_base.weights)

    def test_two_atom_hand_value(self, two_atom_base):
        f = lambda X: np.where(X[:, 0] < 0.5, 0.0, 0.1)
        ind = rir_density(two_atom_base, f, 0.9)
        assert ind.c_theta == pytest.approx(0.95, abs=1e-15)
        np.testing.assert_allclose(ind.weights, [0.525, 0.475], atol=1e-15)

    def test_weights_sum_to_one_and_keep_support(self):
        rng = np.random.default_rng(0)
        base = gen_synthetic(SyntheticSpec(n_rows=50, rng_seed=1))
        for delta in (0.3, 0.9):
            f = init_params(base.input_dim, 6, delta, rng)
            ind = rir_density(base, f, delta)
            assert abs(ind.weights.sum() - 1.0) < 1e-10
            # each atom keeps at least delta times its base mass
            assert np.all(ind.weights >= delta * base.weights - 1e-15)

    def test_label_conditional_untouched(self):
        # atoms sharing x are reweighted by a common factor, so p(y|x) is
        # exactly the base conditional
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([0.0, 0.1, 0.0, 0.1])
        w = np.array([0.1, 0.3, 0.4, 0.2])
        base = EmpiricalBase.from_arrays(X, y, w)
        f = lambda M: 0.08 * M[:, 0]
        ind = rir_density(base, f, 0.9)
        for x_val in (0.0, 1.0):
            grp = base.X[:, 0] == x_val
            want = base.weights[grp] / base.weights[grp].sum()
            got = ind.weights[grp] / ind.weights[grp].sum()
            np.testing.assert_allclose(got, want, rtol=1e-14)

    def test_out_of_range_predictions_rejected(self, two_atom_base):
        with pytest.raises(DomainError):
            rir_density(two_atom_base, const(0.2), 0.9)
        with pytest.raises(DomainError):
            rir_density(two_atom_base, const(-0.01), 0.9)

    def test_delta_must_be_interior(self, two_atom_base):
        with pytest.raises(ValueError):
            rir_density(two_atom_base, const(0.0), 1.0)
        with pytest.raises(ValueError):
            rir_density(two_atom_base, const(0.0), 0.0)

    def test_unknown_mode(self, two_atom_base):
        with pytest.raises(ValueError):
            rir_density(two_atom_base, const(0.0), 0.9, mode="partial")

    def test_strategic_matches_brute_force_enumeration(self, small_strategic_base):
        base = small_strategic_base
        delta = 0.6
        rng = np.random.default_rng(2)
        f = init_params(2, 4, delta, rng)
        from performa.predictor import forward_batch
        ind = rir_density(base, f, delta, mode="strategic")
        want = brute_force_strategic_density(
            base, lambda M: forward_batch(f, M), delta)
        got = {}
        for i in range(ind.n_atoms):
            cell = (ind.X[i, base.strategic_idx].tobytes(),
                    ind.X[i, base.nonstrategic_idx].tobytes(), float(ind.y[i]))
            got[cell] = got.get(cell, 0.0) + ind.weights[i]
        assert set(got) == set(want)
        for cell in want:
            assert got[cell] == pytest.approx(want[cell], abs=1e-12)

    def test_strategic_on_product_base_matches_profile_formula(
            self, small_strategic_base):
        # on an independent base the density is w * (1 - g + C(x_f))
        base = small_strategic_base.productized()
        delta = 0.5
        f = init_params(2, 4, delta, np.random.default_rng(3))
        from performa.predictor import forward_batch
        ind = rir_density(base, f, delta, mode="strategic")
        preds = forward_batch(f, ind.X)
        g = preds + delta
        np.testing.assert_allclose(
            ind.weights, ind.base.weights * (1.0 - g + ind.c_theta), atol=1e-14)
        assert np.all(ind.c_theta >= delta - 1e-12)
        assert np.all(ind.c_theta <= 1.0 + 1e-12)


class TestRirSample:
    def test_two_atom_frequencies_within_3_sigma(self, two_atom_base):
        f = lambda X: np.where(X[:, 0] < 0.5, 0.0, 0.1)
        n = 200_000
        res = rir_sample(two_atom_base, f, 0.9, "full", n, rng=123)
        freq = res.frequencies()
        for got, want in zip(freq, (0.525, 0.475)):
            sd = np.sqrt(want * (1 - want) / n)
            assert abs(got - want) < 3 * sd

    def test_acceptance_rate_matches_one_minus_c(self, two_atom_base):
        f = lambda X: np.where(X[:, 0] < 0.5, 0.0, 0.1)
        n = 200_000
        res = rir_sample(two_atom_base, f, 0.9, "full", n, rng=5)
        want = 1.0 - 0.95
        sd = np.sqrt(want * (1 - want) / n)
        assert abs(res.acceptance_rate - want) < 3 * sd

    def test_strategic_draws_live_on_product_support(self, small_strategic_base):
        base = small_strategic_base
        f = const(0.1)
        res = rir_sample(base, f, 0.5, "strategic", 1000, rng=7)
        assert res.support.n_atoms == base.productized().n_atoms
        assert res.atom_idx.max() < res.support.n_atoms
        # non-strategic profile and label always come from the same source
        np.testing.assert_array_equal(
            res.X[:, base.nonstrategic_idx].ravel() >= 10.0,
            np.full(1000, True))

    def test_strategic_frequencies_match_density(self, small_strategic_base):
        base = small_strategic_base.productized()
        delta = 0.7
        f = init_params(2, 4, delta, np.random.default_rng(11))
        ind = rir_density(base, f, delta, "strategic")
        res = rir_sample(base, f, delta, "strategic", 200_000, rng=13)
        tv = 0.5 * np.abs(res.frequencies() - ind.weights).sum()
        assert tv < 4.0 * np.sqrt(ind.n_atoms / 200_000)

    def test_custom_g_is_validated(self, two_atom_base):
        with pytest.raises(DomainError):
            rir_sample(two_atom_base, const(0.05), 0.9, "full", 10, rng=0,
                       g=lambda preds: preds + 2.0)

    def test_custom_g_bypasses_certified_rule(self, two_atom_base):
        # a constant-rejection g leaves the base untouched regardless of f
        res = rir_sample(two_atom_base, const(0.05), 0.9, "full", 50_000,
                         rng=1, g=lambda preds: np.full_like(preds, 0.5))
        assert abs(res.acceptance_rate - 0.5) < 3 * np.sqrt(0.25 / 50_000)

    def test_delta_at_boundary_rejected_by_sampler(self, two_atom_base):
        with pytest.raises(ValueError):
            rir_sample(two_atom_base, const(0.0), 1.0, "full", 10, rng=0)

    def test_seeded_reproducibility(self, two_atom_base):
        a = rir_sample(two_atom_base, const(0.02), 0.9, "full", 1000, rng=99)
        b = rir_sample(two_atom_base, const(0.02), 0.9, "full", 1000, rng=99)
        np.testing.assert_array_equal(a.atom_idx, b.atom_idx)


class TestChi2:
    def test_zero_on_equal(self, two_atom_base):
        d = rir_density(two_atom_base, const(0.03), 0.9)
        assert chi2(d, d) == 0.0

    def test_hand_value(self, two_atom_base):
        f = lambda X: np.where(X[:, 0] < 0.5, 0.0, 0.1)
        d1 = rir_density(two_atom_base, f, 0.9)          # (0.525, 0.475)
        d2 = rir_density(two_atom_base, const(0.05), 0.9)  # (0.5, 0.5)
        assert chi2(d1, d2) == pytest.approx(0.0025, rel=1e-12)

    def test_sensitivity_bound_sampled(self):
        base = gen_synthetic(SyntheticSpec(n_rows=40, rng_seed=21))
        for delta in (0.4, 0.9):
            for k in range(30):
                rng = np.random.default_rng(np.random.SeedSequence(
                    entropy=31, spawn_key=(k,)))
                fa = init_params(base.input_dim, 6, delta, rng)
                fb = init_params(base.input_dim, 6, delta, rng)
                from performa.predictor import functional_distance
                dist2 = functional_distance(fa, fb, base.X, base.weights) ** 2
                val = chi2(rir_density(base, fb, delta),
                           rir_density(base, fa, delta))
                assert val <= dist2 / delta * (1 + 1e-9)

    def test_support_mismatch_rejected(self, two_atom_base):
        other = EmpiricalBase.from_arrays(np.array([[0.0], [2.0]]),
                                          np.array([0.0, 0.1]))
        d1 = rir_density(two_atom_base, const(0.0), 0.9)
        d2 = rir_density(other, const(0.0), 0.9)
        with pytest.raises(SupportError):
            chi2(d1, d2)


class TestNormRatio:
    def test_constant_pivot_gives_ratio_one(self, two_atom_base):
        f = lambda X: X[:, 0] * 0.05
        g = const(0.0)
        assert norm_ratio(f, g, two_atom_base, const(0.07), 0.9) == \
            pytest.approx(1.0, rel=1e-12)

    def test_hand_value(self, two_atom_base):
        # pivot-induced weights (0.525, 0.475); |f-g| = (0.1, 0.3)
        pivot = lambda X: np.where(X[:, 0] < 0.5, 0.0, 0.1)
        f = lambda X: np.where(X[:, 0] < 0.5, 0.1, 0.3)
        g = const(0.0)
        got = norm_ratio(f, g, two_atom_base, pivot, 0.9)
        assert got == pytest.approx(0.05 / 0.048, rel=1e-12)

    def test_bounds_over_random_triples(self):
        base = gen_synthetic(SyntheticSpec(n_rows=30, rng_seed=41))
        delta = 0.7
        lo, hi = 1 / (2 - delta), 1 / delta
        for k in range(200):
            rng = np.random.default_rng(np.random.SeedSequence(
                entropy=51, spawn_key=(k,)))
            fa, fb, pv = (init_params(base.input_dim, 6, delta, rng)
                          for _ in range(3))
            r = norm_ratio(fa, fb, base, pv, delta)
            assert lo * (1 - 1e-9) <= r <= hi * (1 + 1e-9)

    def test_degenerate_rejected(self, two_atom_base):
        with pytest.raises(DegenerateNormError):
            norm_ratio(const(0.01), const(0.01), two_atom_base, const(0.0), 0.9)


class TestW1:
    def test_identical(self):
        assert w1_1d([1.0, 2.0], [0.5, 0.5], [1.0, 2.0], [0.5, 0.5]) == 0.0

    def test_point_masses(self):
        assert w1_1d([1.5], [1.0], [2.5], [1.0]) == pytest.approx(1.0)

    def test_against_scipy(self):
        rng = np.random.default_rng(61)
        for _ in range(100):
            na, nb = rng.integers(1, 25, size=2)
            xa, xb = rng.normal(size=na), rng.normal(size=nb)
            wa = rng.random(na)
            wa /= wa.sum()
            wb = rng.random(nb)
            wb /= wb.sum()
            assert w1_1d(xa, wa, xb, wb) == pytest.approx(
                wasserstein_distance(xa, xb, wa, wb), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            w1_1d([], [], [1.0], [1.0])


class TestCertify:
    def test_full_mode_passes(self):
        base = gen_synthetic(SyntheticSpec(n_rows=64, rng_seed=71))
        rep = certify_sensitivity(base, 0.9, 100, rng_seed=3)
        assert rep.all_pass
        assert rep.epsilon_bound == pytest.approx(1 / 0.9)
        assert rep.c_bound == pytest.approx(1 / 1.1)
        assert rep.max_chi2_ratio <= rep.epsilon_bound

    def test_strategic_mode_passes(self, small_strategic_base):
        rep = certify_sensitivity(small_strategic_base, 0.5, 60,
                                  mode="strategic", rng_seed=5)
        assert rep.all_pass

    def test_zero_pairs_rejected(self, two_atom_base):
        with pytest.raises(ValueError):
            certify_sensitivity(two_atom_base, 0.9, 0)

    def test_report_serializes(self, two_atom_base):
        rep = certify_sensitivity(two_atom_base, 0.9, 3, rng_seed=1)
        doc = rep.to_dict()
        assert set(doc) == {"n_pairs", "max_chi2_ratio", "epsilon_bound",
                            "max_norm_ratio", "min_norm_ratio", "c_bound",
                            "C_bound", "all_pass"}
