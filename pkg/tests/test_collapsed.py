import itertools
import math

import numpy as np
import pytest

from epm import collapsed as cg
from epm.data import SparseBinaryMatrix
from epm.rng import RngHandle


def hypers(alpha1=1.0, alpha2=1.0, gamma0=1.0, c0=1.0):
    return cg.IdepmHypers(alpha1, alpha2, gamma0, c0, e0=0.5, f0=0.5)


def tiny_state(seed=0, **kw):
    x = SparseBinaryMatrix(2, 2, {(0, 0), (0, 1), (1, 1)})
    return cg.init_collapsed_state(x, hypers(**kw), RngHandle(seed)), x


class TestInit:
    def test_every_edge_seated(self):
        s, x = tiny_state()
        assert s.total_customers == len(x.ones)
        assert np.all(s.m_e == 1)
        s.audit()

    def test_respects_init_atoms_cap(self):
        s, _ = tiny_state()
        assert s.K <= 16

    def test_crp_seating_mode(self):
        x = SparseBinaryMatrix(2, 2, {(0, 0), (1, 1)})
        s = cg.init_collapsed_state(x, hypers(), RngHandle(1), init_atoms=0)
        assert s.K >= 1
        s.audit()


class TestAssignments:
    def test_single_customer_opens_new_atom(self):
        x = SparseBinaryMatrix(1, 1, {(0, 0)})
        s = cg.init_collapsed_state(x, hypers(), RngHandle(2))
        old_id = s.atom_ids[0]
        cg.sample_assignments(s)
        # after removal no atoms exist; the sole customer must open a fresh one
        assert s.K == 1
        assert s.m_k[0] == 1
        assert s.atom_ids[0] != old_id
        s.audit()

    def test_symmetric_atoms_equal_probability(self):
        # two atoms with identical statistics attract a new unit equally
        h = hypers(alpha1=0.7, alpha2=1.3, gamma0=0.5)
        atom = np.zeros((2, 2), dtype=np.int64)
        atom[0, 0] = atom[1, 1] = 2
        rng = RngHandle(3)
        counts = np.zeros(2, dtype=np.int64)
        n = 40000
        for _ in range(n):
            s = cg.CollapsedState.from_atom_counts(2, 2, [atom, atom], h, rng)
            s.m_e = s.m_e + 1  # one extra incoming customer at edge 0
            col = s._assign_unit(0, 0, 0)
            if col < 2:
                counts[col] += 1
        p = counts / counts.sum()
        se = math.sqrt(0.25 / counts.sum())
        assert abs(p[0] - 0.5) <= 4 * se

    def test_decrement_below_zero_raises(self):
        s, _ = tiny_state()
        s.m_ek[0, 0] = 0
        with pytest.raises(RuntimeError):
            s._remove_unit(0, int(s.rows[0]), int(s.cols[0]), 0)

    def test_fast_and_python_paths_identical(self):
        for seed in (1, 5):
            states = []
            for fast in (True, False):
                x = SparseBinaryMatrix(3, 3, {(0, 0), (0, 1), (1, 1), (2, 2)})
                s = cg.init_collapsed_state(x, hypers(), RngHandle(seed))
                for _ in range(4):
                    cg.sample_assignments(s, use_fast=fast)
                states.append(s)
            a, b = states
            assert a.K == b.K
            assert np.array_equal(a.m_ek[:, :a.K], b.m_ek[:, :b.K])
            assert a.atom_ids == b.atom_ids


def enumerate_scan_outcomes(atom_mats, edges, I, J, h):
    """Exact end-state distribution of one assignment scan.

    Independent pure-python re-simulation of the sequential rule: edges in
    row-major order, per-edge snapshot on arrival, one customer at a time;
    emptied atoms keep zero weight, new atoms append. Outcomes are
    canonicalized as sorted per-atom cell-count structures.
    """
    results = {}
    edges = sorted(edges)

    def canon(mats):
        atoms = []
        for mat in mats:
            if mat.sum() == 0:
                continue
            cells = tuple(sorted((i, j, int(mat[i, j]))
                                 for i in range(I) for j in range(J)
                                 if mat[i, j] > 0))
            atoms.append(cells)
        return tuple(sorted(atoms))

    def weights(mats, i, j):
        w = []
        for mat in mats:
            mk = mat.sum()
            if mk <= 0:
                w.append(0.0)
                continue
            w.append(mk
                     * (h.alpha1 + mat[i].sum()) / (I * h.alpha1 + mk)
                     * (h.alpha2 + mat[:, j].sum()) / (J * h.alpha2 + mk))
        return w, h.gamma0 / (I * J)

    def do_units(mats, e_idx, i, j, pending, prob):
        if not pending:
            do_edge(mats, e_idx + 1, prob)
            return
        k0 = pending[0]
        base = [m.copy() for m in mats]
        base[k0][i, j] -= 1
        w, w_new = weights(base, i, j)
        total = sum(w) + w_new
        for k, wk in enumerate(w):
            if wk <= 0.0:
                continue
            nxt = [m.copy() for m in base]
            nxt[k][i, j] += 1
            do_units(nxt, e_idx, i, j, pending[1:], prob * wk / total)
        nxt = [m.copy() for m in base]
        fresh = np.zeros((I, J), dtype=np.int64)
        fresh[i, j] = 1
        nxt.append(fresh)
        do_units(nxt, e_idx, i, j, pending[1:], prob * w_new / total)

    def do_edge(mats, e_idx, prob):
        if e_idx == len(edges):
            key = canon(mats)
            results[key] = results.get(key, 0.0) + prob
            return
        i, j = edges[e_idx]
        pending = []
        for k, mat in enumerate(mats):  # snapshot on arrival, column order
            pending.extend([k] * int(mat[i, j]))
        do_units(mats, e_idx, i, j, pending, prob)

    do_edge([m.copy() for m in atom_mats], 0, 1.0)
    return results


class TestScanAgainstEnumeration:
    def test_m3_scan_frequencies(self):
        # 2x2 matrix, M=3 customers; compare one full scan's end-state
        # distribution with exact enumeration of the sequential rule.
        h = hypers(alpha1=0.8, alpha2=1.1, gamma0=0.9, c0=1.0)
        atom0 = np.array([[1, 1], [0, 0]], dtype=np.int64)
        atom1 = np.array([[0, 0], [0, 1]], dtype=np.int64)
        edges = [(0, 0), (0, 1), (1, 1)]

        exact = enumerate_scan_outcomes([atom0, atom1], edges, 2, 2, h)
        assert abs(sum(exact.values()) - 1.0) < 1e-12

        rng = RngHandle(4)
        n = 60000
        freq = {}
        for _ in range(n):
            s = cg.CollapsedState.from_atom_counts(
                2, 2, [atom0, atom1], h, rng)
            cg.sample_assignments(s)
            key = tuple(sorted(
                tuple(sorted((int(s.rows[e]), int(s.cols[e]), int(s.m_ek[e, k]))
                             for e in range(s.n_edges) if s.m_ek[e, k] > 0))
                for k in range(s.K)))
            freq[key] = freq.get(key, 0) + 1
        assert set(freq) <= set(exact)
        for key, p in sorted(exact.items(), key=lambda kv: -kv[1]):
            if p < 0.01:
                continue
            se = math.sqrt(p * (1 - p) / n)
            assert abs(freq.get(key, 0) / n - p) <= 3.5 * se, (key, p)


class TestInstantiate:
    def test_k_zero_only_rest(self):
        x = SparseBinaryMatrix(2, 2, set())
        s = cg.init_collapsed_state(x, hypers(), RngHandle(5))
        cg.instantiate_parameters(s)
        assert s.K == 0 and s.lam.size == 0
        assert s.lam_rest > 0

    def test_lambda_conditional_mean(self):
        h = hypers(c0=2.0)
        atom = np.zeros((2, 2), dtype=np.int64)
        atom[0, 0] = 7
        s = cg.CollapsedState.from_atom_counts(2, 2, [atom], h, RngHandle(6))
        draws = np.array([(cg.instantiate_parameters(s), s.lam[0])[1]
                          for _ in range(20000)])
        want = 7.0 / (h.c0 + 1.0)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - want) <= 3.5 * se

    def test_simplex_columns(self):
        s, _ = tiny_state(seed=7)
        cg.instantiate_parameters(s)
        assert np.allclose(s.phi.sum(axis=0), 1.0, atol=1e-9)
        assert np.allclose(s.psi.sum(axis=0), 1.0, atol=1e-9)


class TestCounts:
    def test_zero_entries_stay_zero(self):
        s, x = tiny_state(seed=8)
        cg.instantiate_parameters(s)
        cg.sample_counts(s, x)
        dense = np.zeros((2, 2), dtype=np.int64)
        dense[s.rows, s.cols] = s.m_e
        assert dense[1, 0] == 0
        for (i, j) in x.ones:
            assert dense[i, j] >= 1

    def test_single_atom_partition(self):
        atom = np.array([[2, 1], [0, 3]], dtype=np.int64)
        x = SparseBinaryMatrix.from_dense(atom > 0)
        s = cg.CollapsedState.from_atom_counts(2, 2, [atom], hypers(),
                                               RngHandle(9))
        cg.instantiate_parameters(s)
        cg.sample_counts(s, x)
        assert s.K == 1
        assert np.array_equal(s.m_ek[:, 0], s.m_e)

    def test_ztp_totals_moment(self):
        s0, x = tiny_state(seed=10)
        cg.instantiate_parameters(s0)
        lam0, phi0, psi0 = s0.lam.copy(), s0.phi.copy(), s0.psi.copy()
        atoms = []
        for k in range(s0.K):
            mat = np.zeros((2, 2), dtype=np.int64)
            mat[s0.rows, s0.cols] = s0.m_ek[:, k]
            atoms.append(mat)
        rate0 = ((phi0[s0.rows] * psi0[s0.cols]) * lam0).sum(axis=1)
        want = rate0 / (1.0 - np.exp(-rate0))
        rng = RngHandle(99)
        draws = np.empty((20000, s0.n_edges))
        for r in range(draws.shape[0]):
            s = cg.CollapsedState.from_atom_counts(2, 2, atoms, hypers(), rng)
            s.lam, s.phi, s.psi = lam0.copy(), phi0.copy(), psi0.copy()
            s.lam_rest = s0.lam_rest
            cg.sample_counts(s, x)
            draws[r] = s.m_e
        se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - want) <= 4 * se)

    def test_k_zero_with_ones_seats_by_crp(self):
        x = SparseBinaryMatrix(2, 2, {(0, 0), (1, 1)})
        s = cg.CollapsedState(x, hypers(), RngHandle(11))
        cg.instantiate_parameters(s)
        cg.sample_counts(s, x)
        assert s.K >= 1
        assert np.all(s.m_e == 1)
        s.audit()


class TestMarginalLikelihood:
    def test_hand_case_quarter(self):
        stats = cg.CountStats(np.array([1]), np.array([[1]]),
                              np.array([[1]]), np.array([1]))
        lp = cg.log_marginal_infinite(stats, 1.0, 1.0, 1.0, 1.0)
        assert lp == pytest.approx(math.log(0.25), abs=1e-12)

    def test_empty_data(self):
        stats = cg.CountStats(np.zeros(0, dtype=np.int64),
                              np.zeros((2, 0)), np.zeros((3, 0)),
                              np.zeros(0, dtype=np.int64))
        for g0, c0 in ((1.0, 1.0), (0.5, 2.0)):
            lp = cg.log_marginal_infinite(stats, 1.0, 1.0, g0, c0)
            assert lp == pytest.approx(g0 * math.log(c0 / (c0 + 1.0)),
                                       abs=1e-12)

    def test_truncated_hand_case(self):
        stats = cg.CountStats(np.array([1]), np.array([[1]]),
                              np.array([[1]]), np.array([1]))
        lp = cg.log_marginal_truncated(stats, 1, 1.0, 1.0, 1.0, 1.0)
        assert lp == pytest.approx(math.log(0.25), abs=1e-12)
        # partition form with T = K = 1 multiplies by 1! / 0! = 1
        lp_part = cg.log_marginal_truncated(stats, 1, 1.0, 1.0, 1.0, 1.0,
                                            partition=True)
        assert lp_part == pytest.approx(lp, abs=1e-12)

    def test_truncation_limit_convergence(self):
        stats = cg.CountStats(
            np.array([2, 1, 1]),
            np.array([[2, 1], [1, 0]]), np.array([[1, 1], [2, 0]]),
            np.array([3, 1]))
        lp_inf = cg.log_marginal_infinite(stats, 0.7, 1.2, 0.9, 1.5)
        errs = [abs(cg.log_marginal_truncated(stats, T, 0.7, 1.2, 0.9, 1.5,
                                              partition=True) - lp_inf)
                for T in (10**2, 10**3, 10**4, 10**5, 10**6)]
        assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
        assert errs[-1] < 1e-6

    def test_label_exchangeability(self):
        rng = RngHandle(12)
        m_ik = rng.gen.integers(0, 5, size=(3, 4))
        m_k = m_ik.sum(axis=0) + 1
        m_jk = np.zeros((2, 4), dtype=np.int64)
        m_jk[0] = m_k - 1
        m_jk[1] = 1
        m_ik[0] += m_k - m_ik.sum(axis=0)  # make marginals consistent
        m_e = np.array([int(m_k.sum())])
        stats = cg.CountStats(m_e, m_ik, m_jk, m_k)
        base = cg.log_marginal_infinite(stats, 0.6, 0.8, 1.1, 0.9)
        for perm in itertools.permutations(range(4)):
            p = list(perm)
            stats_p = cg.CountStats(m_e, m_ik[:, p], m_jk[:, p], m_k[p])
            assert cg.log_marginal_infinite(stats_p, 0.6, 0.8, 1.1, 0.9) == \
                pytest.approx(base, abs=1e-9)

    def test_k_above_t_rejected(self):
        stats = cg.CountStats(np.array([2]), np.array([[1, 1]]),
                              np.array([[1, 1]]), np.array([1, 1]))
        with pytest.raises(ValueError):
            cg.log_marginal_truncated(stats, 1, 1.0, 1.0, 1.0, 1.0)


class TestHypers:
    def test_gamma0_conditional_mean(self):
        h = hypers(gamma0=1.0, c0=2.0)
        atom = np.zeros((2, 2), dtype=np.int64)
        atom[0, 0] = 3
        atom2 = np.zeros((2, 2), dtype=np.int64)
        atom2[1, 1] = 2
        s = cg.CollapsedState.from_atom_counts(2, 2, [atom, atom2], h,
                                               RngHandle(13))
        rate = h.f0 - math.log(h.c0 / (h.c0 + 1.0))
        want = (h.e0 + 2) / rate
        draws = []
        for _ in range(20000):
            h.alpha1 = h.alpha2 = 1.0
            h.gamma0, h.c0 = 1.0, 2.0
            cg.sample_hypers_idepm(s)
            draws.append(h.gamma0)
        draws = np.array(draws)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - want) <= 3.5 * se

    def test_k_zero_gamma0(self):
        x = SparseBinaryMatrix(2, 2, set())
        s = cg.init_collapsed_state(x, hypers(gamma0=0.8, c0=1.0),
                                    RngHandle(14))
        h = s.hypers
        rate = h.f0 - math.log(h.c0 / (h.c0 + 1.0))
        want = h.e0 / rate
        draws = []
        for _ in range(20000):
            h.gamma0, h.c0 = 0.8, 1.0
            cg.sample_hypers_idepm(s)
            draws.append(h.gamma0)
        draws = np.array(draws)
        se = draws.std(ddof=1) / math.sqrt(draws.size)
        assert abs(draws.mean() - want) <= 3.5 * se


class TestSweep:
    def test_all_zero_matrix(self):
        x = SparseBinaryMatrix(3, 3, set())
        s = cg.init_collapsed_state(x, hypers(), RngHandle(15))
        for _ in range(3):
            cg.collapsed_sweep(s, x)
            assert s.K == 0

    def test_assignment_preserves_total(self):
        s, x = tiny_state(seed=16)
        m0 = s.total_customers
        cg.sample_assignments(s)
        assert s.total_customers == m0

    def test_atom_liveness_and_audit(self):
        x = SparseBinaryMatrix(4, 4, {(0, 0), (0, 1), (1, 1), (2, 2),
                                      (3, 3), (2, 3)})
        s = cg.init_collapsed_state(x, hypers(), RngHandle(17))
        for _ in range(10):
            cg.collapsed_sweep(s, x)
            assert s.K >= 1
            assert np.all(s.m_k[:s.K] >= 1)
            s.audit()
