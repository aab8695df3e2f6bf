"""Truly infinite DEPM (IDEPM): collapsed Gibbs over counts and assignments.

Factors and atom weights are marginalized out; the persistent state is the
customer layout (per-edge per-atom counts) plus hyperparameters. Atoms live in
a dense compact list with swap-remove deletion; stable ids keep traces and
mid-scan snapshots valid across deletions.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .data import SparseBinaryMatrix
from .distributions import TINY, sample_ztp_array, sample_antoniak_total
from .rng import RngHandle
from .truncated import INTENSITY_FLOOR

try:
    from numba import njit as _njit
except ImportError:  # pure-python fallback stays exactly equivalent
    _njit = None

_INITIAL_CAPACITY = 8


def _assign_scan(rows, cols, m_e, m_ek, m_ik, m_jk, m_k, used, u, t, e_start,
                 wbuf, snap, alpha1, alpha2, gamma0):
    """One customer-by-customer reassignment pass (resumable at edge granularity).

    Atoms emptied mid-scan keep their column with zero weight (they can never
    be rejoined; fresh atoms get fresh columns), so column indices stay stable
    for the whole scan; the caller compresses dead columns afterwards.
    Returns (next_edge_or_-1, uniforms_consumed, used_columns).
    """
    E = rows.size
    I = m_ik.shape[0]
    J = m_jk.shape[0]
    cap = m_ek.shape[1]
    w_new = gamma0 / (I * J)
    ia = I * alpha1
    ja = J * alpha2
    e = e_start
    while e < E:
        me = m_e[e]
        if me == 0:
            e += 1
            continue
        if used + me > cap:
            return e, t, used  # caller grows capacity and resumes here
        i = rows[e]
        j = cols[e]
        nsnap = used
        for k in range(nsnap):
            snap[k] = m_ek[e, k]
        for k0 in range(nsnap):
            for _ in range(snap[k0]):
                m_ek[e, k0] -= 1
                m_ik[i, k0] -= 1
                m_jk[j, k0] -= 1
                m_k[k0] -= 1
                tot = 0.0
                for k in range(used):
                    mk = m_k[k]
                    if mk > 0:
                        w = (mk
                             * (alpha1 + m_ik[i, k]) / (ia + mk)
                             * (alpha2 + m_jk[j, k]) / (ja + mk))
                    else:
                        w = 0.0
                    wbuf[k] = w
                    tot += w
                r = u[t] * (tot + w_new)
                t += 1
                if r >= tot:
                    knew = used
                    used += 1
                else:
                    acc = 0.0
                    knew = used - 1
                    for k in range(used):
                        acc += wbuf[k]
                        if r < acc:
                            knew = k
                            break
                m_ek[e, knew] += 1
                m_ik[i, knew] += 1
                m_jk[j, knew] += 1
                m_k[knew] += 1
        e += 1
    return -1, t, used


if _njit is not None:
    _assign_scan_fast = _njit(cache=True)(_assign_scan)
else:
    _assign_scan_fast = _assign_scan


@dataclass
class IdepmHypers:
    alpha1: float
    alpha2: float
    gamma0: float
    c0: float
    e0: float = 0.01
    f0: float = 0.01

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "gamma0", "c0", "e0", "f0"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive, got {v!r}")

    def copy(self):
        return replace(self)


def initial_idepm_hypers(rng: RngHandle, e0: float = 0.01,
                         f0: float = 0.01) -> IdepmHypers:
    """Starting hyperparameters at the hyperprior mean.

    Draws from Gamma(e0, f0) at the default e0=f0=0.01 frequently underflow;
    a near-zero initial gamma0 makes the very first CRP seating herd every
    customer into one atom, a mode single-site Gibbs cannot leave.
    """
    mean = e0 / f0
    return IdepmHypers(mean, mean, mean, mean, e0, f0)


@dataclass
class CountStats:
    """Count statistics over occupied atoms, as consumed by the marginal likelihoods."""

    m_e: np.ndarray   # (E,) per-edge totals
    m_ik: np.ndarray  # (I, K) row marginals
    m_jk: np.ndarray  # (J, K) column marginals
    m_k: np.ndarray   # (K,) atom totals

    @property
    def n_active(self) -> int:
        return int(self.m_k.size)


class CollapsedState:
    """Dynamic-atom sampler state for one IDEPM chain."""

    def __init__(self, x: SparseBinaryMatrix, hypers: IdepmHypers, rng: RngHandle):
        arr = x.ones_array()
        self.n_rows, self.n_cols = x.n_rows, x.n_cols
        self.rows = arr[:, 0].copy()
        self.cols = arr[:, 1].copy()
        E = self.rows.size
        self.m_e = np.zeros(E, dtype=np.int64)
        self.hypers = hypers
        self.rng = rng
        self.K = 0
        self._cap = _INITIAL_CAPACITY
        self.m_ek = np.zeros((E, self._cap), dtype=np.int64)
        self.m_ik = np.zeros((self.n_rows, self._cap), dtype=np.int64)
        self.m_jk = np.zeros((self.n_cols, self._cap), dtype=np.int64)
        self.m_k = np.zeros(self._cap, dtype=np.int64)
        self.atom_ids: list = []
        self._col_of: dict = {}
        self._next_id = 0
        self._scatters = None
        # instantiated parameters over active atoms (count step, prediction)
        self.phi = None
        self.psi = None
        self.lam = None
        self.lam_rest = None

    # -- construction ------------------------------------------------------

    @classmethod
    def from_atom_counts(cls, n_rows: int, n_cols: int, atom_cells,
                         hypers: IdepmHypers, rng: RngHandle) -> "CollapsedState":
        """Build a consistent state from per-atom (I, J) count matrices."""
        atom_cells = [np.asarray(a, dtype=np.int64) for a in atom_cells]
        total = np.zeros((n_rows, n_cols), dtype=np.int64)
        for a in atom_cells:
            if a.shape != (n_rows, n_cols) or np.any(a < 0):
                raise ValueError("atom count matrices must be nonnegative (I, J)")
            total += a
        x = SparseBinaryMatrix.from_dense(total > 0)
        s = cls(x, hypers, rng)
        s.m_e = total[s.rows, s.cols].copy()
        for a in atom_cells:
            if a.sum() == 0:
                continue
            col = s._new_atom()
            counts = a[s.rows, s.cols]
            s.m_ek[:, col] = counts
            s.m_ik[:, col] = a.sum(axis=1)
            s.m_jk[:, col] = a.sum(axis=0)
            s.m_k[col] = a.sum()
        return s

    # -- bookkeeping -------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return self.rows.size

    @property
    def total_customers(self) -> int:
        return int(self.m_e.sum())

    def stats(self) -> CountStats:
        K = self.K
        return CountStats(self.m_e.copy(), self.m_ik[:, :K].copy(),
                          self.m_jk[:, :K].copy(), self.m_k[:K].copy())

    def _grow(self):
        new_cap = self._cap * 2
        for name in ("m_ek", "m_ik", "m_jk"):
            old = getattr(self, name)
            fresh = np.zeros((old.shape[0], new_cap), dtype=np.int64)
            fresh[:, :self._cap] = old
            setattr(self, name, fresh)
        m_k = np.zeros(new_cap, dtype=np.int64)
        m_k[:self._cap] = self.m_k
        self.m_k = m_k
        self._cap = new_cap

    def _new_atom(self) -> int:
        if self.K == self._cap:
            self._grow()
        col = self.K
        aid = self._next_id
        self._next_id += 1
        self.atom_ids.append(aid)
        self._col_of[aid] = col
        self.K += 1
        return col

    def _delete_atom(self, col: int):
        last = self.K - 1
        dead_id = self.atom_ids[col]
        if col != last:
            moved_id = self.atom_ids[last]
            self.m_ek[:, col] = self.m_ek[:, last]
            self.m_ik[:, col] = self.m_ik[:, last]
            self.m_jk[:, col] = self.m_jk[:, last]
            self.m_k[col] = self.m_k[last]
            self.atom_ids[col] = moved_id
            self._col_of[moved_id] = col
        self.m_ek[:, last] = 0
        self.m_ik[:, last] = 0
        self.m_jk[:, last] = 0
        self.m_k[last] = 0
        self.atom_ids.pop()
        del self._col_of[dead_id]
        self.K = last

    def _compress_columns(self, used: int, k_start: int):
        """Drop zero-total columns left by an assignment scan; keep stable ids.

        Columns below `k_start` keep their pre-scan ids; surviving columns
        created during the scan receive fresh ids.
        """
        alive = np.flatnonzero(self.m_k[:used] > 0)
        new_k = alive.size
        for arr in (self.m_ek, self.m_ik, self.m_jk):
            arr[:, :new_k] = arr[:, alive]
            arr[:, new_k:used] = 0
        self.m_k[:new_k] = self.m_k[alive]
        self.m_k[new_k:used] = 0
        new_ids = []
        col_of = {}
        for pos, col in enumerate(alive.tolist()):
            if col < k_start:
                aid = self.atom_ids[col]
            else:
                aid = self._next_id
                self._next_id += 1
            new_ids.append(aid)
            col_of[aid] = pos
        self.atom_ids = new_ids
        self._col_of = col_of
        self.K = new_k

    def _remove_unit(self, e: int, i: int, j: int, col: int):
        if self.m_ek[e, col] <= 0:
            raise RuntimeError("count decrement below zero (bookkeeping bug)")
        self.m_ek[e, col] -= 1
        self.m_ik[i, col] -= 1
        self.m_jk[j, col] -= 1
        self.m_k[col] -= 1
        if self.m_k[col] == 0:
            self._delete_atom(col)

    def _add_unit(self, e: int, i: int, j: int, col: int):
        self.m_ek[e, col] += 1
        self.m_ik[i, col] += 1
        self.m_jk[j, col] += 1
        self.m_k[col] += 1

    def _assign_unit(self, e: int, i: int, j: int) -> int:
        """Seat one customer per the CRP-style predictive and update statistics."""
        h = self.hypers
        K = self.K
        w_new = h.gamma0 / (self.n_rows * self.n_cols)
        if K:
            mk = self.m_k[:K].astype(float)
            w = (mk
                 * (h.alpha1 + self.m_ik[i, :K]) / (self.n_rows * h.alpha1 + mk)
                 * (h.alpha2 + self.m_jk[j, :K]) / (self.n_cols * h.alpha2 + mk))
            cum = np.cumsum(w)
            total = cum[-1]
        else:
            total = 0.0
        u = self.rng.gen.random() * (total + w_new)
        if u >= total:
            col = self._new_atom()
        else:
            col = int(np.searchsorted(cum, u, side="right"))
        self._add_unit(e, i, j, col)
        return col

    def _scatter_matrices(self):
        if self._scatters is None:
            E = self.n_edges
            ones = np.ones(E, dtype=np.int64)
            self._scatters = (
                sparse.csr_matrix((ones, (self.rows, np.arange(E))),
                                  shape=(self.n_rows, E)),
                sparse.csr_matrix((ones, (self.cols, np.arange(E))),
                                  shape=(self.n_cols, E)),
            )
        return self._scatters

    def _set_active_counts(self, m_ek_active: np.ndarray):
        """Replace the counts of the active atoms, rebuild marginals, drop dead atoms."""
        K = self.K
        self.m_ek[:, :K] = m_ek_active
        self.m_ek[:, K:] = 0
        self.m_e = self.m_ek[:, :K].sum(axis=1)
        row_scatter, col_scatter = self._scatter_matrices()
        self.m_ik[:, :K] = np.asarray(row_scatter @ m_ek_active)
        self.m_ik[:, K:] = 0
        self.m_jk[:, :K] = np.asarray(col_scatter @ m_ek_active)
        self.m_jk[:, K:] = 0
        self.m_k[:K] = m_ek_active.sum(axis=0)
        self.m_k[K:] = 0
        for col in range(self.K - 1, -1, -1):
            if self.m_k[col] == 0:
                self._delete_atom(col)

    def audit(self) -> None:
        """Rebuild all statistics from m_ek by direct summation; raise on mismatch."""
        K = self.K
        m_ik = np.zeros((self.n_rows, K), dtype=np.int64)
        m_jk = np.zeros((self.n_cols, K), dtype=np.int64)
        np.add.at(m_ik, self.rows, self.m_ek[:, :K])
        np.add.at(m_jk, self.cols, self.m_ek[:, :K])
        ok = (np.array_equal(m_ik, self.m_ik[:, :K])
              and np.array_equal(m_jk, self.m_jk[:, :K])
              and np.array_equal(self.m_ek[:, :K].sum(axis=0), self.m_k[:K])
              and np.array_equal(self.m_ek[:, :K].sum(axis=1), self.m_e)
              and np.all(self.m_k[:K] > 0)
              and np.all(self.m_ek[:, K:] == 0))
        if not ok:
            raise AssertionError("collapsed statistics disagree with direct sums")


def init_collapsed_state(x: SparseBinaryMatrix, hypers: IdepmHypers,
                         rng: RngHandle, init_atoms: int = 16) -> CollapsedState:
    """Start a chain: one customer per one-entry on one of `init_atoms` random atoms.

    A moderately over-dispersed start mixes best here. Sequential CRP seating
    (``init_atoms=0``) herds nearly everything into the first atom, which
    single-site moves cannot split; fully singleton starts trigger a mass
    merge that overshoots past the mode.
    """
    s = CollapsedState(x, hypers, rng)
    if init_atoms > 0 and s.n_edges:
        k0 = min(init_atoms, s.n_edges)
        cols = [s._new_atom() for _ in range(k0)]
        assign = rng.gen.integers(0, k0, size=s.n_edges)
        for e in range(s.n_edges):
            s.m_e[e] = 1
            s._add_unit(e, int(s.rows[e]), int(s.cols[e]), cols[assign[e]])
        for col in range(s.K - 1, -1, -1):
            if s.m_k[col] == 0:
                s._delete_atom(col)
    else:
        for e in range(s.n_edges):
            s.m_e[e] = 1
            s._assign_unit(e, int(s.rows[e]), int(s.cols[e]))
    return s


def sample_assignments(s: CollapsedState, use_fast: bool = True) -> None:
    """Reseat every customer, one at a time, per the CRP-style predictive.

    Edges are scanned row-major; within an edge the customers present at scan
    time are snapshotted, so units moved during the scan are not resampled
    twice. One uniform is consumed per customer, so the draw sequence is
    identical with or without the compiled kernel.
    """
    M = int(s.m_e.sum())
    if M == 0:
        return
    u = s.rng.gen.random(M)
    scan = _assign_scan_fast if use_fast else _assign_scan
    k_start = s.K
    used = s.K
    e, t = 0, 0
    while True:
        need = used + int(s.m_e.max()) + 1
        while s._cap < need:
            s._grow()
        wbuf = np.empty(s._cap)
        snap = np.empty(s._cap, dtype=np.int64)
        e, t, used = scan(s.rows, s.cols, s.m_e, s.m_ek, s.m_ik, s.m_jk,
                          s.m_k, used, u, t, e, wbuf, snap,
                          s.hypers.alpha1, s.hypers.alpha2, s.hypers.gamma0)
        if e < 0:
            break
    s._compress_columns(used, k_start)


def instantiate_parameters(s: CollapsedState) -> None:
    """Draw phi, psi, lam for the active atoms and the residual mass lam_rest."""
    h = s.hypers
    gen = s.rng.gen
    K = s.K
    if K:
        g = np.maximum(gen.standard_gamma(h.alpha1 + s.m_ik[:, :K]), TINY)
        s.phi = g / g.sum(axis=0)
        g = np.maximum(gen.standard_gamma(h.alpha2 + s.m_jk[:, :K]), TINY)
        s.psi = g / g.sum(axis=0)
        s.lam = np.maximum(gen.standard_gamma(s.m_k[:K].astype(float))
                           / (h.c0 + 1.0), TINY)
    else:
        s.phi = np.zeros((s.n_rows, 0))
        s.psi = np.zeros((s.n_cols, 0))
        s.lam = np.zeros(0)
    s.lam_rest = max(float(gen.standard_gamma(h.gamma0) / (h.c0 + 1.0)), TINY)


def sample_counts(s: CollapsedState, x: SparseBinaryMatrix) -> None:
    """Redraw per-edge totals (ZTP over the active-atom intensity) and repartition.

    Atoms left with zero total are removed. If called with no active atoms
    while one-entries exist (initialization-only path), each edge receives one
    customer, seated by the CRP prior weights.
    """
    if (x.n_rows, x.n_cols) != (s.n_rows, s.n_cols):
        raise ValueError("matrix shape does not match state")
    if s.n_edges == 0:
        return
    if s.K == 0:
        for e in range(s.n_edges):
            s.m_e[e] = 1
            s._assign_unit(e, int(s.rows[e]), int(s.cols[e]))
        return
    if s.lam is None or s.lam.size != s.K:
        raise RuntimeError("instantiate_parameters must run before sample_counts")
    w = (s.phi[s.rows] * s.psi[s.cols]) * s.lam
    rate = w.sum(axis=1)
    m_e = sample_ztp_array(s.rng, np.maximum(rate, INTENSITY_FLOOR))
    dead = rate <= 0
    if np.any(dead):
        w[dead] = 1.0
        rate = w.sum(axis=1)
    m_ek = s.rng.gen.multinomial(m_e, w / rate[:, None])
    s._set_active_counts(m_ek)


def sample_hypers_idepm(s: CollapsedState) -> None:
    """Update alpha1, alpha2 (Beta/Antoniak augmentation over active atoms),
    gamma0, and c0 (via a fresh instantiation of the atom weights)."""
    h = s.hypers
    gen = s.rng.gen
    K = s.K
    m_k = s.m_k[:K]

    def one_side(alpha, n_side, m_side):
        if K:
            v = np.maximum(gen.beta(n_side * alpha, m_k.astype(float)), TINY)
            log_v_sum = np.log(v).sum()
        else:
            log_v_sum = 0.0
        w = sample_antoniak_total(s.rng, m_side, alpha) if K else 0
        rate = h.f0 - n_side * log_v_sum
        if not np.isfinite(rate) or rate <= 0:
            raise RuntimeError("non-positive rate in alpha update")
        return max(float(gen.standard_gamma(h.e0 + w) / rate), TINY)

    h.alpha1 = one_side(h.alpha1, s.n_rows, s.m_ik[:, :K])
    h.alpha2 = one_side(h.alpha2, s.n_cols, s.m_jk[:, :K])

    rate = h.f0 - np.log(h.c0 / (h.c0 + 1.0))
    h.gamma0 = max(float(gen.standard_gamma(h.e0 + K) / rate), TINY)

    # c0 conditions on freshly drawn atom weights plus the residual mass
    lam_sum = float(np.maximum(gen.standard_gamma(m_k.astype(float)), TINY).sum()
                    / (h.c0 + 1.0)) if K else 0.0
    lam_rest = max(float(gen.standard_gamma(h.gamma0) / (h.c0 + 1.0)), TINY)
    h.c0 = max(float(gen.standard_gamma(h.e0 + h.gamma0)
                     / (h.f0 + lam_rest + lam_sum)), TINY)


def collapsed_sweep(s: CollapsedState, x: SparseBinaryMatrix) -> CollapsedState:
    """One scan: assignments, instantiate parameters, counts, hyperparameters."""
    sample_assignments(s)
    instantiate_parameters(s)
    sample_counts(s, x)
    sample_hypers_idepm(s)
    return s


def count_active_atoms(s: CollapsedState) -> int:
    return s.K


def link_probabilities(s: CollapsedState, entries) -> np.ndarray:
    """1 - exp(-intensity) over instantiated active atoms for (i, j) pairs."""
    if s.lam is None or s.lam.size != s.K:
        raise RuntimeError("instantiate_parameters must run before prediction")
    if len(entries) == 0:
        return np.zeros(0)
    idx = np.asarray(entries, dtype=np.int64)
    if s.K == 0:
        return np.zeros(idx.shape[0])
    rates = ((s.phi[idx[:, 0]] * s.psi[idx[:, 1]]) * s.lam).sum(axis=1)
    return -np.expm1(-rates)


# -- marginal likelihoods ---------------------------------------------------


def _dirichlet_side_terms(alpha, n_side, m_side, m_k):
    a_total = n_side * alpha
    lp = (gammaln(a_total) - gammaln(a_total + m_k)).sum()
    lp += (gammaln(alpha + m_side) - gammaln(alpha)).sum()
    return lp


def log_marginal_infinite(stats: CountStats, alpha1: float, alpha2: float,
                          gamma0: float, c0: float) -> float:
    """Log marginal likelihood of the IDEPM for (m, [z]) over occupied atoms."""
    m_k = stats.m_k
    if np.any(m_k <= 0):
        raise ValueError("occupied atoms must have positive totals")
    I, J = stats.m_ik.shape[0], stats.m_jk.shape[0]
    K = stats.n_active
    lp = -gammaln(stats.m_e + 1.0).sum()
    lp += _dirichlet_side_terms(alpha1, I, stats.m_ik, m_k)
    lp += _dirichlet_side_terms(alpha2, J, stats.m_jk, m_k)
    lp += K * np.log(gamma0) + gamma0 * np.log(c0 / (c0 + 1.0))
    lp += (gammaln(m_k) - m_k * np.log(c0 + 1.0)).sum()
    return float(lp)


def log_marginal_truncated(stats: CountStats, T: int, alpha1: float,
                           alpha2: float, gamma0: float, c0: float,
                           partition: bool = False) -> float:
    """Log marginal of the truncated DEPM for (m, z); K_+ occupied of T atoms.

    With ``partition=True`` returns the partition form, i.e. adds
    log T!/(T-K_+)!.
    """
    K = stats.n_active
    if K > T:
        raise ValueError("more occupied atoms than truncation level")
    m_k = stats.m_k
    if np.any(m_k <= 0):
        raise ValueError("occupied atoms must have positive totals")
    I, J = stats.m_ik.shape[0], stats.m_jk.shape[0]
    eps = gamma0 / T
    lp = -gammaln(stats.m_e + 1.0).sum()
    lp += _dirichlet_side_terms(alpha1, I, stats.m_ik, m_k)
    lp += _dirichlet_side_terms(alpha2, J, stats.m_jk, m_k)
    lp += (gammaln(eps + m_k) - gammaln(eps)).sum()
    lp += K * eps * np.log(c0) - (eps + m_k).sum() * np.log(c0 + 1.0)
    lp += (T - K) * eps * np.log(c0 / (c0 + 1.0))
    if partition:
        # log T!/(T-K)! summed directly to dodge lgamma cancellation at huge T
        lp += sum(np.log(T - l) for l in range(K))
    return float(lp)


def log_marginal_likelihood(s: CollapsedState) -> float:
    """Eq.-5 log marginal of the current state."""
    return log_marginal_infinite(s.stats(), s.hypers.alpha1, s.hypers.alpha2,
                                 s.hypers.gamma0, s.hypers.c0)
