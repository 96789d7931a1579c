"""Curvature-function families: values, gradients, and the admissibility suite."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curveflow.symfunc import (ConeVector, ConeViolationError, CurvatureFunction,
                               check_structure, elementary_symmetric,
                               normalized_sigma_k, sigma_k)

RNG = np.random.default_rng(20240817)


def sigma_bruteforce(lam, k):
    """Independent oracle: sum over all k-subsets of distinct entries."""
    if k == 0:
        return 1.0
    return sum(math.prod(combo) for combo in itertools.combinations(lam, k))


def all_families(n):
    fams = [CurvatureFunction.kth_root(n, k) for k in range(1, n + 1)]
    fams += [CurvatureFunction.quotient(n, l) for l in range(n)]
    fams += [CurvatureFunction.combined(n, l) for l in range(n)]
    return fams


class TestSigma:
    def test_unit_vector_normalizes(self):
        for n in (2, 3, 5, 8):
            ones = np.ones(n)
            for k in range(n + 1):
                assert normalized_sigma_k(ones, k) == pytest.approx(1.0, abs=1e-14)

    def test_example_1_2_3(self):
        assert sigma_k([1.0, 2.0, 3.0], 2) == pytest.approx(11.0, abs=1e-12)
        assert normalized_sigma_k([1.0, 2.0, 3.0], 2) == pytest.approx(11.0 / 3.0, abs=1e-12)

    def test_empty_product_convention(self):
        assert sigma_k([1.0, 2.0], 0) == 1.0

    def test_out_of_range_k(self):
        with pytest.raises(IndexError):
            sigma_k([1.0, 2.0], 3)
        with pytest.raises(IndexError):
            sigma_k([1.0, 2.0], -1)

    def test_matches_bruteforce_enumeration(self):
        for n in range(2, 9):
            for _ in range(20):
                lam = np.exp(RNG.uniform(-1.5, 1.5, n))
                for k in range(n + 1):
                    want = sigma_bruteforce(lam, k)
                    assert sigma_k(lam, k) == pytest.approx(want, rel=1e-12)

    def test_batched_evaluation(self):
        lam = np.exp(RNG.uniform(-1, 1, (40, 4)))
        e = elementary_symmetric(lam)
        for row, erow in zip(lam, e):
            for k in range(5):
                assert erow[k] == pytest.approx(sigma_bruteforce(row, k), rel=1e-12)


class TestConeVector:
    def test_valid_construction(self):
        v = ConeVector((1.0, 2.0, 0.5))
        assert v.n == 3
        assert np.allclose(v.as_array(), [1.0, 2.0, 0.5])

    def test_rejects_nonpositive(self):
        with pytest.raises(ConeViolationError):
            ConeVector((1.0, 0.0))
        with pytest.raises(ConeViolationError):
            ConeVector((1.0, -0.3))

    def test_rejects_below_relative_floor(self):
        with pytest.raises(ConeViolationError):
            ConeVector((1e5, 1e-12))  # 1e-12 < 1e-14 * 1e5


class TestValues:
    def test_combined_normalized_at_unit(self):
        for n in (2, 3, 4):
            for l in range(n):
                f = CurvatureFunction.combined(n, l)
                assert f.value(np.ones(n)) == pytest.approx(1.0, abs=1e-14)

    def test_combined_n2_l1_hand_value(self):
        # (H_2)^(1/2) = sqrt(2), H_2/H_1 = 2/(3/2) = 4/3 at (1, 2)
        f = CurvatureFunction.combined(2, 1)
        want = 0.5 * (math.sqrt(2.0) + 4.0 / 3.0)
        assert f.value(np.array([1.0, 2.0])) == pytest.approx(want, abs=1e-14)

    def test_degree_one_homogeneity(self):
        for f in all_families(3):
            lam = np.exp(RNG.uniform(-1, 1, 3))
            assert f.value(2 * lam) == pytest.approx(2 * f.value(lam), rel=1e-13)

    def test_cone_violation_raises(self):
        f = CurvatureFunction.combined(2, 1)
        with pytest.raises(ConeViolationError):
            f.value(np.array([1.0, -1.0]))

    def test_scale_consistency(self):
        base = CurvatureFunction.combined(2, 1)
        doubled = CurvatureFunction(family="combined", n=2, l=1, scale=2.0)
        lam = np.array([0.7, 1.9])
        assert doubled.value(lam) == pytest.approx(2 * base.value(lam), rel=1e-14)
        assert np.allclose(doubled.gradient(lam), 2 * base.gradient(lam), rtol=1e-14)


class TestGradients:
    def test_unit_vector_euler_split(self):
        for f in all_families(3):
            g = f.gradient(np.ones(3))
            assert np.allclose(g, g[0])  # symmetry forces equal entries
            assert np.sum(g) == pytest.approx(f.value(np.ones(3)), rel=1e-13)

    def test_matches_central_differences(self):
        for n in (2, 3, 4):
            for f in all_families(n):
                for _ in range(6):
                    lam = np.exp(RNG.uniform(-1, 1, n))
                    grad = f.gradient(lam)
                    step = 1e-5 * np.linalg.norm(lam)
                    for i in range(n):
                        lp, lm = lam.copy(), lam.copy()
                        lp[i] += step
                        lm[i] -= step
                        fd = (f.value(lp) - f.value(lm)) / (2 * step)
                        assert grad[i] == pytest.approx(fd, rel=1e-6)

    def test_euler_identity_random(self):
        for f in all_families(4):
            lam = np.exp(RNG.uniform(-1.2, 1.2, (50, 4)))
            vals = f.value(lam)
            grads = f.gradient(lam)
            gap = np.abs(np.sum(grads * lam, axis=-1) - vals) / vals
            assert gap.max() <= 1e-10

    @settings(max_examples=40, deadline=None)
    @given(st.permutations(list(range(3))),
           st.lists(st.floats(0.2, 5.0), min_size=3, max_size=3))
    def test_permutation_symmetry(self, perm, entries):
        f = CurvatureFunction.combined(3, 1)
        lam = np.asarray(entries)
        shuffled = lam[list(perm)]
        assert f.value(shuffled) == pytest.approx(f.value(lam), rel=1e-12)
        g = f.gradient(lam)
        gs = f.gradient(shuffled)
        assert np.allclose(sorted(g), sorted(gs), rtol=1e-10)


class TestStructureSuite:
    def test_combined_passes_everything(self):
        for n, l in ((2, 1), (3, 1), (2, 0), (3, 0)):
            report = check_structure(CurvatureFunction.combined(n, l),
                                     sample_count=400, seed=3)
            assert report.all_passed, "\n".join(report.summary_lines())

    def test_pure_quotient_fails_growth_only(self):
        report = check_structure(CurvatureFunction.quotient(2, 1),
                                 sample_count=400, seed=3)
        assert not report.row("unbounded-growth").passed
        for row in report.rows:
            if row.name != "unbounded-growth":
                assert row.passed, row

    def test_quotient_l0_is_gauss_root_and_grows(self):
        report = check_structure(CurvatureFunction.quotient(3, 0),
                                 sample_count=200, seed=5)
        assert report.row("unbounded-growth").passed

    def test_low_order_root_keeps_boundary_value(self):
        # the mean-curvature root stays positive on the cone boundary
        report = check_structure(CurvatureFunction.kth_root(3, 1),
                                 sample_count=200, seed=5)
        assert not report.row("boundary-vanishing").passed
        assert report.row("unbounded-growth").passed

    def test_scaled_family_breaks_normalization(self):
        f = CurvatureFunction(family="combined", n=2, l=1, scale=2.0)
        report = check_structure(f, sample_count=100, seed=1)
        assert not report.row("normalization").passed
        assert report.row("homogeneity").passed

    def test_deterministic_given_seed(self):
        f = CurvatureFunction.combined(2, 1)
        a = check_structure(f, sample_count=150, seed=11)
        b = check_structure(f, sample_count=150, seed=11)
        assert [(r.name, r.passed, r.worst) for r in a.rows] == \
               [(r.name, r.passed, r.worst) for r in b.rows]

    def test_rejects_bad_sample_count(self):
        with pytest.raises(ValueError):
            check_structure(CurvatureFunction.combined(2, 1), sample_count=0)


class TestFamilyValidation:
    def test_bad_indices(self):
        with pytest.raises(ValueError):
            CurvatureFunction.kth_root(2, 3)
        with pytest.raises(ValueError):
            CurvatureFunction.quotient(2, 2)
        with pytest.raises(ValueError):
            CurvatureFunction(family="nonsense", n=2)
