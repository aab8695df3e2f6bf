import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epm import collapsed as cg
from epm import truncated as tr
from epm.data import HoldoutSplit, SparseBinaryMatrix
from epm.evaluate import (
    PROB_EPS,
    PredictiveEnsemble,
    ensemble_scores,
    posterior_predictive,
    pr_auc,
    tdll,
)
from epm.rng import RngHandle


def split_for(labels):
    entries = tuple((0, j, int(v)) for j, v in enumerate(labels))
    train = SparseBinaryMatrix(1, len(labels), set())
    return HoldoutSplit(train, entries)


class TestTdll:
    def test_coin_flip(self):
        split = split_for([1, 0, 1])
        ens = PredictiveEnsemble(np.full((4, 3), 0.5))
        assert tdll(ens, split) == pytest.approx(math.log(0.5), abs=1e-12)

    def test_perfect_oracle_clamped(self):
        split = split_for([1, 0])
        ens = PredictiveEnsemble(np.array([[1.0, 0.0]]))
        assert tdll(ens, split) == pytest.approx(math.log(1 - PROB_EPS),
                                                 abs=1e-15)

    def test_mean_prob_then_log(self):
        split = split_for([1])
        ens = PredictiveEnsemble(np.array([[0.2], [0.6]]))
        assert tdll(ens, split) == pytest.approx(math.log(0.4), abs=1e-12)
        # the alternative aggregation averages the logs instead
        want = 0.5 * (math.log(0.2) + math.log(0.6))
        assert tdll(ens, split, aggregate="mean-log") == pytest.approx(
            want, abs=1e-12)

    def test_invariant_under_reordering(self):
        rng = RngHandle(0)
        probs = rng.gen.random((6, 10))
        labels = (rng.gen.random(10) < 0.4).astype(int)
        split = split_for(labels)
        base = tdll(PredictiveEnsemble(probs), split)
        perm = rng.gen.permutation(10)
        split_p = split_for(labels[perm])
        assert tdll(PredictiveEnsemble(probs[:, perm]), split_p) == \
            pytest.approx(base, abs=1e-12)
        samp = rng.gen.permutation(6)
        assert tdll(PredictiveEnsemble(probs[samp]), split) == \
            pytest.approx(base, abs=1e-12)

    def test_zero_probability_on_positive_clamped(self):
        split = split_for([1])
        ens = PredictiveEnsemble(np.array([[0.0]]))
        assert tdll(ens, split) == pytest.approx(math.log(PROB_EPS), rel=1e-9)


def pr_auc_bruteforce(scores, labels):
    """Exhaustive reference: every distinct threshold, same anchor/trapezoid."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = (labels == 1).sum()
    points = []
    for t in sorted(set(scores), reverse=True):
        sel = scores >= t
        tp = int(((labels == 1) & sel).sum())
        points.append((tp / n_pos, tp / int(sel.sum())))
    area = 0.0
    prev_r, prev_p = 0.0, points[0][1]
    for r, p in points:
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return area


class TestPrAuc:
    def test_perfect_ranking(self):
        assert pr_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_all_scores_identical(self):
        labels = [1, 0, 0, 1, 0]
        assert pr_auc([0.3] * 5, labels) == pytest.approx(2 / 5, abs=1e-12)

    def test_matches_bruteforce_small(self):
        rng = RngHandle(1)
        for trial in range(300):
            n = int(rng.gen.integers(2, 9))
            labels = (rng.gen.random(n) < 0.5).astype(int)
            if labels.sum() == 0:
                labels[0] = 1
            scores = np.round(rng.gen.random(n), 1)  # force some ties
            mine = pr_auc(scores, labels)
            ref = pr_auc_bruteforce(scores, labels)
            assert mine == pytest.approx(ref, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = RngHandle(2)
        scores = rng.gen.random(40)
        labels = (rng.gen.random(40) < 0.3).astype(int)
        labels[0] = 1
        base = pr_auc(scores, labels)
        for f in (lambda s: 2 * s + 1, lambda s: np.exp(s),
                  lambda s: s ** 3):
            assert pr_auc(f(scores), labels) == pytest.approx(base, abs=1e-12)

    def test_reversed_perfect_is_minimum(self):
        labels = np.array([1, 1, 0, 0, 0])
        scores = np.array([0.1, 0.2, 0.8, 0.9, 0.95])  # positives last
        mine = pr_auc(scores, labels)
        assert mine == pytest.approx(pr_auc_bruteforce(scores, labels),
                                     abs=1e-12)
        # no ranking of this prevalence scores below the reversed-perfect one
        rng = RngHandle(3)
        for _ in range(200):
            other = rng.gen.random(5)
            assert pr_auc(other, labels) >= mine - 1e-12

    def test_no_positives_rejected(self):
        with pytest.raises(ValueError):
            pr_auc([0.1, 0.2], [0, 0])

    @given(st.integers(min_value=1, max_value=6), st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_bruteforce_agreement_property(self, n, seed):
        rng = RngHandle(seed)
        labels = (rng.gen.random(n) < 0.5).astype(int)
        labels[int(rng.gen.integers(0, n))] = 1
        scores = np.round(rng.gen.random(n), 1)
        assert pr_auc(scores, labels) == pytest.approx(
            pr_auc_bruteforce(scores, labels), abs=1e-12)


class TestPosteriorPredictive:
    def _truncated_state(self, seed=0):
        x = SparseBinaryMatrix(3, 3, {(0, 0), (1, 1), (2, 2)})
        rng = RngHandle(seed)
        h = tr.initial_hypers("depm", rng, e0=0.5, f0=0.5)
        return tr.init_state(x, 2, h, rng)

    def test_single_state(self):
        s = self._truncated_state()
        entries = [(0, 0), (1, 2)]
        ens = posterior_predictive([s], entries)
        assert ens.probs.shape == (1, 2)
        assert ens.probs[0, 0] == pytest.approx(
            tr.link_probability(s, 0, 0), abs=1e-12)

    def test_duplicated_state_identical_rows(self):
        s = self._truncated_state(1)
        ens = posterior_predictive([s, s], [(0, 1), (2, 0)])
        assert np.array_equal(ens.probs[0], ens.probs[1])

    def test_two_atom_hand_state(self):
        x = SparseBinaryMatrix(2, 2, {(0, 0)})
        rng = RngHandle(2)
        h = tr.Hyperparameters("depm", gamma0=1.0, c0=1.0, alpha1=1.0,
                               alpha2=1.0)
        s = tr.init_state(x, 2, h, rng)
        s.phi = np.array([[0.3, 0.6], [0.7, 0.4]])
        s.psi = np.array([[0.5, 0.9], [0.5, 0.1]])
        s.lam = np.array([2.0, 1.0])
        want = 1.0 - math.exp(-(0.3 * 0.5 * 2.0 + 0.6 * 0.9 * 1.0))
        ens = posterior_predictive([s], [(0, 0)])
        assert ens.probs[0, 0] == pytest.approx(want, abs=1e-12)

    def test_collapsed_state_uses_active_atoms(self):
        x = SparseBinaryMatrix(2, 2, {(0, 0), (1, 1)})
        rng = RngHandle(3)
        s = cg.init_collapsed_state(
            x, cg.IdepmHypers(1.0, 1.0, 1.0, 1.0), rng)
        cg.instantiate_parameters(s)
        ens = posterior_predictive([s], [(0, 0), (0, 1)])
        rate = float((s.phi[0] * s.psi[0] * s.lam).sum())
        assert ens.probs[0, 0] == pytest.approx(1 - math.exp(-rate),
                                                abs=1e-12)

    def test_probability_bounds_validated(self):
        with pytest.raises(ValueError):
            PredictiveEnsemble(np.array([[0.5, 1.2]]))

    def test_scores_are_sample_means(self):
        probs = np.array([[0.2, 0.4], [0.6, 0.8]])
        assert np.allclose(ensemble_scores(PredictiveEnsemble(probs)),
                           [0.4, 0.6])
