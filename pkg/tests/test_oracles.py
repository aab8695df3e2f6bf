import math

import numpy as np
import pytest

from epm import collapsed as cg
from epm import oracles as orc
from epm import truncated as tr
from epm.rng import RngHandle


class TestIntensityExpectationEpm:
    def test_unit_case(self):
        chk = orc.mc_intensity_expectation_epm(1, 1, 1, 1, 1, 1, 200000,
                                               RngHandle(0), T=64)
        assert chk.analytic == 1.0
        assert chk.passed

    def test_formula_substitution(self):
        chk = orc.mc_intensity_expectation_epm(2, 1, 1, 2, 3, 1, 200000,
                                               RngHandle(1), T=64)
        assert chk.analytic == pytest.approx(3.0)
        assert chk.passed

    def test_large_truncation_spot(self):
        chk = orc.mc_intensity_expectation_epm(0.8, 1.2, 1.5, 0.9, 1.1, 1.3,
                                               30000, RngHandle(2), T=1000)
        assert chk.passed

    def test_float32_draws_unbiased(self):
        chk = orc.mc_intensity_expectation_epm(1.0, 2.0, 2.0, 1.0, 0.7, 1.0,
                                               200000, RngHandle(3), T=64,
                                               dtype=np.float32)
        assert chk.passed


class TestIntensityExpectationDepm:
    def test_degenerate_simplices(self):
        chk = orc.mc_intensity_expectation_depm(1, 1, 1.5, 2.0, 100000,
                                                RngHandle(4), T=64)
        assert chk.analytic == pytest.approx(0.75)
        assert chk.passed

    def test_two_by_two(self):
        chk = orc.mc_intensity_expectation_depm(2, 2, 4.0, 1.0, 200000,
                                                RngHandle(5), T=64)
        assert chk.analytic == pytest.approx(1.0)
        assert chk.passed

    def test_ninety_square_formula(self):
        chk = orc.mc_intensity_expectation_depm(90, 90, 1.0, 1.0, 50000,
                                                RngHandle(6), T=64)
        assert chk.analytic == pytest.approx(1 / 8100)
        assert chk.passed

    def test_gamma0_scaling_degeneracy(self):
        # gamma0 = T * ghat with the product fixed: analytic value unchanged,
        # per-atom prior becomes Gamma(ghat, c0)
        T = 64
        chk = orc.mc_intensity_expectation_depm(2, 3, T * 0.7, 2.0, 200000,
                                                RngHandle(7), T=T)
        assert chk.analytic == pytest.approx(T * 0.7 / (6 * 2.0))
        assert chk.passed


class TestMarginalPriorMc:
    def test_empty_data_laplace_transform(self):
        stats = cg.CountStats(np.zeros(0, dtype=np.int64), np.zeros((2, 0)),
                              np.zeros((2, 0)), np.zeros(0, dtype=np.int64))
        chk = orc.verify_marginal_by_prior_mc(stats, 2, 1.0, 1.0, 1.5, 2.0,
                                              200000, RngHandle(8))
        assert chk.analytic == pytest.approx((2.0 / 3.0) ** 1.5, rel=1e-12)
        assert chk.passed

    def test_hand_case(self):
        stats = cg.CountStats(np.array([1]), np.array([[1]]), np.array([[1]]),
                              np.array([1]))
        chk = orc.verify_marginal_by_prior_mc(stats, 1, 1.0, 1.0, 1.0, 1.0,
                                              300000, RngHandle(9))
        assert chk.analytic == pytest.approx(0.25, rel=1e-10)
        assert chk.passed

    def test_two_by_two_m3(self):
        m_ik = np.array([[1, 1], [1, 0]], dtype=np.int64)
        m_jk = np.array([[1, 0], [1, 1]], dtype=np.int64)
        stats = cg.CountStats(np.array([1, 1, 1]), m_ik, m_jk,
                              np.array([2, 1]))
        chk = orc.verify_marginal_by_prior_mc(stats, 2, 1.0, 1.0, 1.0, 1.0,
                                              10**6, RngHandle(10))
        assert chk.passed


class TestPartitionLimit:
    def test_single_customer_exact_at_any_t(self):
        stats = cg.CountStats(np.array([1]), np.array([[1]]), np.array([[1]]),
                              np.array([1]))
        rep = orc.verify_partition_limit(stats, 1.0, 1.0, 1.0, 1.0)
        assert all(e < 1e-10 for e in rep.errors)
        assert rep.passed()

    def test_empty_exact(self):
        stats = cg.CountStats(np.zeros(0, dtype=np.int64), np.zeros((1, 0)),
                              np.zeros((1, 0)), np.zeros(0, dtype=np.int64))
        rep = orc.verify_partition_limit(stats, 1.0, 1.0, 0.8, 1.2)
        assert all(e < 1e-12 for e in rep.errors)

    def test_m4_two_blocks_monotone(self):
        m_ik = np.array([[2, 1], [1, 0]], dtype=np.int64)
        m_jk = np.array([[1, 1], [2, 0]], dtype=np.int64)
        stats = cg.CountStats(np.array([2, 1, 1]), m_ik, m_jk,
                              np.array([3, 1]))
        rep = orc.verify_partition_limit(stats, 1.0, 1.0, 1.0, 1.0)
        assert rep.monotone
        assert rep.final_error < 1e-6
        assert rep.errors[0] > rep.errors[-1]


class TestIdepmGenerator:
    def test_total_negative_binomial_mean(self):
        h = cg.IdepmHypers(1.0, 1.0, 2.0, 1.5)
        rng = RngHandle(11)
        totals = np.array([sum(int(a.sum()) for a in
                               orc.generate_idepm_counts(2, 2, h, rng))
                           for _ in range(30000)], dtype=float)
        want = 2.0 / 1.5
        se = totals.std(ddof=1) / math.sqrt(totals.size)
        assert abs(totals.mean() - want) <= 3.5 * se

    def test_crp_pair_probability(self):
        # P(two customers share the atom | M = 2) = 1 / (gamma0 + 1)
        h = cg.IdepmHypers(1.0, 1.0, 1.5, 1.0)
        rng = RngHandle(12)
        same = total = 0
        while total < 20000:
            atoms = orc.generate_idepm_counts(1, 1, h, rng)
            m = sum(int(a.sum()) for a in atoms)
            if m != 2:
                continue
            total += 1
            same += (len(atoms) == 1)
        p = same / total
        want = 1.0 / (1.5 + 1.0)
        se = math.sqrt(want * (1 - want) / total)
        assert abs(p - want) <= 3.5 * se

    def test_polya_urn_row_pair_probability(self):
        # P(second customer lands in the same row) = (alpha1+1)/(I alpha1 + 1)
        h = cg.IdepmHypers(0.6, 1.0, 1.0, 1.0)
        I = 3
        rng = RngHandle(13)
        same = total = 0
        while total < 20000:
            atoms = orc.generate_idepm_counts(I, 1, h, rng)
            pair = [a for a in atoms if a.sum() == 2]
            if not pair:
                continue
            total += 1
            same += int((pair[0].sum(axis=1) == 2).any())
        want = (0.6 + 1.0) / (I * 0.6 + 1.0)
        se = math.sqrt(want * (1 - want) / total)
        assert abs(same / total - want) <= 3.5 * se

    def test_configuration_frequency_matches_marginal(self):
        # 1x1 matrix: P(M=0) and P(M=1) against the closed-form marginal
        h = cg.IdepmHypers(1.0, 1.0, 1.0, 1.0)
        rng = RngHandle(14)
        n = 60000
        m0 = m1 = 0
        for _ in range(n):
            atoms = orc.generate_idepm_counts(1, 1, h, rng)
            m = sum(int(a.sum()) for a in atoms)
            m0 += (m == 0)
            m1 += (m == 1)
        stats1 = cg.CountStats(np.array([1]), np.array([[1]]),
                               np.array([[1]]), np.array([1]))
        p1 = math.exp(cg.log_marginal_infinite(stats1, 1.0, 1.0, 1.0, 1.0))
        p0 = (1.0 / 2.0) ** 1.0  # (c0/(c0+1))^gamma0
        for freq, want in ((m0 / n, p0), (m1 / n, p1)):
            se = math.sqrt(want * (1 - want) / n)
            assert abs(freq - want) <= 3.5 * se


class TestGeweke:
    @pytest.mark.parametrize("variant", ["epm", "depm", "idepm"])
    def test_samplers_preserve_prior(self, variant):
        checks = orc.geweke_joint_test(variant, (2, 2, 2), 30000,
                                       RngHandle(hash(variant) % 1000))
        for c in checks.values():
            assert c.passed(4.0), c.describe()

    def test_negative_control_truncated(self):
        checks = orc.geweke_joint_test("depm", (2, 2, 2), 30000,
                                       RngHandle(15), corrupt=True)
        assert max(c.max_abs_z for c in checks.values()) > 10.0

    def test_negative_control_idepm(self):
        checks = orc.geweke_joint_test("idepm", (2, 2, 2), 30000,
                                       RngHandle(16), corrupt=True)
        assert max(c.max_abs_z for c in checks.values()) > 10.0

    def test_factor_marginals_epm(self):
        h = tr.Hyperparameters("epm", gamma0=1.0, c0=1.0, e0=1.0, f0=1.0,
                               a1=1.0, a2=1.5, b1=1.0, b2=2.0)
        checks = orc.geweke_param_test("epm", (2, 2, 2), 30000,
                                       RngHandle(17), h)
        for c in checks.values():
            assert c.passed(4.0), c.describe()

    def test_factor_marginals_depm(self):
        h = tr.Hyperparameters("depm", gamma0=1.0, c0=1.0, e0=1.0, f0=1.0,
                               alpha1=0.8, alpha2=1.2)
        checks = orc.geweke_param_test("depm", (3, 2, 2), 30000,
                                       RngHandle(18), h)
        for c in checks.values():
            assert c.passed(4.0), c.describe()


class TestMomentChecks:
    def test_ztp(self):
        for lam in (0.5, 1.0, 10.0):
            chk = orc.ztp_moment_check(lam, 100000, RngHandle(int(lam * 7)))
            assert chk.passed, chk.describe()

    def test_antoniak(self):
        for (n_c, a) in ((3, 1.0), (10, 0.5), (25, 2.0)):
            chk = orc.antoniak_moment_check(n_c, a, 100000,
                                            RngHandle(n_c))
            assert chk.passed, chk.describe()


class TestSuiteRunner:
    def test_unknown_suite_rejected(self):
        with pytest.raises(ValueError):
            orc.run_oracle_suites(["nope"])

    def test_moments_suite_passes(self):
        rows, ok = orc.run_oracle_suites(["moments"], seed=3, n=50000)
        assert ok
        assert len(rows) == 6
        assert all(r[0] == "moments" for r in rows)

    def test_expectations_suite_dispatch(self):
        rows, ok = orc.run_oracle_suites(["expectations"], seed=4, n=20000,
                                         T=16)
        names = [r[1] for r in rows]
        assert any(n.startswith("theorem1") for n in names)
        assert any(n.startswith("theorem2") for n in names)
        assert ok
