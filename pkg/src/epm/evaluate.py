"""Held-out evaluation: active-atom traces, TDLL, and PR-AUC.

TDLL follows the posterior-predictive reading: the link probability is
averaged across retained samples first, then logged, then averaged across
test entries. The mean-of-logs alternative stays available via
``aggregate="mean-log"``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import collapsed, truncated
from .data import HoldoutSplit

#: probability clamp applied before any log
PROB_EPS = 1e-12


@dataclass
class PredictiveEnsemble:
    """Per-entry link probabilities for each retained posterior sample."""

    probs: np.ndarray  # (n_samples, n_entries)

    def __post_init__(self):
        self.probs = np.atleast_2d(np.asarray(self.probs, dtype=float))
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise ValueError("link probabilities must lie in [0, 1]")

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]


@dataclass
class EvalReport:
    """Summary metrics plus per-iteration traces for one chain."""

    k_mean: float
    tdll: float
    tdauc_pr: float
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    elapsed_s: np.ndarray = field(default_factory=lambda: np.zeros(0))
    k_trace: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    tdll_trace: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def trace_rows(self):
        for it, el, k, ll in zip(self.iterations, self.elapsed_s,
                                 self.k_trace, self.tdll_trace):
            yield int(it), float(el), int(k), float(ll)


def posterior_predictive(states, entries) -> PredictiveEnsemble:
    """Evaluate link probabilities for each state in a retained-sample list."""
    if not states:
        raise ValueError("need at least one state")
    rows = []
    for s in states:
        if isinstance(s, truncated.TruncatedState):
            rows.append(truncated.link_probabilities(s, entries))
        elif isinstance(s, collapsed.CollapsedState):
            rows.append(collapsed.link_probabilities(s, entries))
        else:
            raise TypeError(f"unsupported state type {type(s)!r}")
    return PredictiveEnsemble(np.vstack(rows))


def tdll(ens: PredictiveEnsemble, split: HoldoutSplit,
         aggregate: str = "mean-prob") -> float:
    """Average log-likelihood of the held-out entries taking their true values."""
    labels = np.array([v for (_, _, v) in split.test_entries], dtype=float)
    if ens.probs.shape[1] != labels.size:
        raise ValueError("ensemble is not aligned with the test entries")
    like = np.where(labels[None, :] == 1.0, ens.probs, 1.0 - ens.probs)
    like = np.clip(like, PROB_EPS, 1.0 - PROB_EPS)
    if aggregate == "mean-prob":
        return float(np.mean(np.log(np.clip(like.mean(axis=0),
                                            PROB_EPS, 1.0 - PROB_EPS))))
    if aggregate == "mean-log":
        return float(np.mean(np.log(like)))
    raise ValueError(f"unknown aggregate {aggregate!r}")


def pr_auc(scores, labels) -> float:
    """Area under the precision-recall curve.

    Descending-score sweep with ties grouped, trapezoidal integration in
    recall between successive distinct thresholds, anchored at (recall 0,
    precision of the top group).
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be matching 1-d arrays")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise ValueError("PR-AUC needs at least one positive label")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    y_sorted = (labels[order] == 1).astype(np.int64)
    # indices where a threshold group ends (last occurrence of each score)
    boundary = np.flatnonzero(np.diff(s_sorted) != 0)
    ends = np.append(boundary, s_sorted.size - 1)
    tp = np.cumsum(y_sorted)[ends]
    seen = ends + 1
    recall = tp / n_pos
    precision = tp / seen
    prev_r, prev_p = 0.0, precision[0]
    area = 0.0
    for r, p in zip(recall, precision):
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return float(area)


def ensemble_scores(ens: PredictiveEnsemble) -> np.ndarray:
    """Posterior-mean link probability per entry (the ranking score)."""
    return ens.probs.mean(axis=0)


def summarize(ens: PredictiveEnsemble, split: HoldoutSplit, k_values,
              aggregate: str = "mean-prob") -> EvalReport:
    labels = np.array([v for (_, _, v) in split.test_entries])
    return EvalReport(
        k_mean=float(np.mean(k_values)),
        tdll=tdll(ens, split, aggregate=aggregate),
        tdauc_pr=pr_auc(ensemble_scores(ens), labels),
    )
