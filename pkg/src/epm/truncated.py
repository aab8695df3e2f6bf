"""Truncated edge partition models: EPM, CEPM, and DEPM Gibbs sweeps.

All three models share the latent-count structure

    x[i,j] = 1(m[i,j,.] >= 1),   m[i,j,.] ~ Poisson(sum_k F[i,k] G[j,k] lam[k])

with gamma factors F=U, G=V (EPM/CEPM) or column-stochastic factors F=phi,
G=psi under Dirichlet priors (DEPM), and truncated gamma-process weights
lam[k] ~ Gamma(gamma0/T, c0).

The shape/concentration hyperparameter updates (a1, a2, alpha1, alpha2,
gamma0) are derived with a factor block or lam integrated out; each such
update therefore redraws the block it marginalizes before returning, so the
composed sweep remains a valid blocked Gibbs sampler.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.special import gammaln, logsumexp

from .data import SparseBinaryMatrix
from .distributions import (
    TINY,
    sample_antoniak_total,
    sample_ztp_array,
)
from .rng import RngHandle

VARIANTS = ("epm", "cepm", "depm")

#: rate floor applied before the ZTP draw at one-entries (measure-zero event
#: under the model, reachable through float underflow)
INTENSITY_FLOOR = 1e-300

#: grid for the CEPM shape updates: 1/(1+a) = 0.01, 0.02, ..., 0.99
CEPM_GRID = 1.0 / (np.arange(1, 100) / 100.0) - 1.0


@dataclass
class Hyperparameters:
    """Model hyperparameters; which fields are live depends on the variant."""

    variant: str
    gamma0: float
    c0: float
    e0: float = 0.01
    f0: float = 0.01
    a1: float = None
    a2: float = None
    b1: float = None
    b2: float = None
    alpha1: float = None
    alpha2: float = None
    C1: float = None
    C2: float = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.validate()

    def validate(self):
        req = ["gamma0", "c0", "e0", "f0"]
        if self.variant in ("epm", "cepm"):
            req += ["a1", "a2", "b1", "b2"]
        if self.variant == "cepm":
            req += ["C1", "C2"]
        if self.variant == "depm":
            req += ["alpha1", "alpha2"]
        for name in req:
            v = getattr(self, name)
            if v is None or not np.isfinite(v) or v <= 0:
                raise ValueError(f"{self.variant}: {name} must be positive, got {v!r}")
        if self.variant == "cepm":
            if not (np.isclose(self.b1, self.C1 * self.a1, rtol=1e-12)
                    and np.isclose(self.b2, self.C2 * self.a2, rtol=1e-12)):
                raise ValueError("CEPM constraint b1=C1*a1, b2=C2*a2 violated")

    def copy(self):
        return replace(self)


def initial_hypers(variant: str, rng: RngHandle, e0: float = 0.01,
                   f0: float = 0.01, C1: float = None, C2: float = None) -> Hyperparameters:
    """Starting hyperparameters at the hyperprior mean e0/f0.

    Draws from the Gamma(e0, f0) hyperprior at the default e0=f0=0.01 land
    tens of orders of magnitude from one (P[X < 1e-150] is a few percent per
    hyperparameter); a rate starting at 1e-150 parks the chain at the far end
    of the model's scale-flat direction, which the near-scale-free hyperprior
    never pulls back. The argument `rng` is kept for call-site symmetry.
    """
    del rng
    mean = e0 / f0
    gamma0 = c0 = mean
    if variant == "depm":
        return Hyperparameters("depm", gamma0, c0, e0, f0,
                               alpha1=mean, alpha2=mean)
    if variant == "cepm":
        if C1 is None or C2 is None:
            raise ValueError("CEPM needs C1 and C2")
        return Hyperparameters("cepm", gamma0, c0, e0, f0, a1=mean, a2=mean,
                               b1=C1 * mean, b2=C2 * mean, C1=C1, C2=C2)
    return Hyperparameters("epm", gamma0, c0, e0, f0,
                           a1=mean, a2=mean, b1=mean, b2=mean)


class LatentCounts:
    """Per-edge atom counts m[i,j,k] over a fixed edge list, with cached marginals."""

    def __init__(self, n_rows: int, n_cols: int, rows, cols, T: int):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        order = np.lexsort((cols, rows))  # row-major iteration order
        self.n_rows, self.n_cols, self.T = n_rows, n_cols, T
        self.rows, self.cols = rows[order], cols[order]
        E = self.rows.size
        self.m_ek = np.zeros((E, T), dtype=np.int64)
        self.m_e = np.zeros(E, dtype=np.int64)
        ones = np.ones(E, dtype=np.int64)
        self._row_scatter = sparse.csr_matrix(
            (ones, (self.rows, np.arange(E))), shape=(n_rows, E))
        self._col_scatter = sparse.csr_matrix(
            (ones, (self.cols, np.arange(E))), shape=(n_cols, E))
        self._refresh_marginals()

    @classmethod
    def for_matrix(cls, x: SparseBinaryMatrix, T: int) -> "LatentCounts":
        arr = x.ones_array()
        return cls(x.n_rows, x.n_cols, arr[:, 0], arr[:, 1], T)

    @property
    def n_edges(self) -> int:
        return self.rows.size

    @property
    def total(self) -> int:
        return int(self.m_e.sum())

    def set_edge_counts(self, m_ek: np.ndarray) -> None:
        if m_ek.shape != self.m_ek.shape:
            raise ValueError("edge count shape mismatch")
        self.m_ek = np.asarray(m_ek, dtype=np.int64)
        self.m_e = self.m_ek.sum(axis=1)
        self._refresh_marginals()

    def _refresh_marginals(self):
        self.m_ik = np.asarray(self._row_scatter @ self.m_ek)
        self.m_jk = np.asarray(self._col_scatter @ self.m_ek)
        self.m_k = self.m_ek.sum(axis=0)

    def audit(self) -> None:
        """Recompute every cached marginal by direct summation; raise on mismatch."""
        m_ik = np.zeros((self.n_rows, self.T), dtype=np.int64)
        m_jk = np.zeros((self.n_cols, self.T), dtype=np.int64)
        np.add.at(m_ik, self.rows, self.m_ek)
        np.add.at(m_jk, self.cols, self.m_ek)
        if not (np.array_equal(m_ik, self.m_ik)
                and np.array_equal(m_jk, self.m_jk)
                and np.array_equal(self.m_ek.sum(axis=0), self.m_k)
                and np.array_equal(self.m_ek.sum(axis=1), self.m_e)):
            raise AssertionError("cached count marginals disagree with direct sums")


@dataclass
class TruncatedState:
    """Mutable sampler state for one truncated chain."""

    variant: str
    T: int
    n_rows: int
    n_cols: int
    hypers: Hyperparameters
    counts: LatentCounts
    rng: RngHandle
    U: np.ndarray = None
    V: np.ndarray = None
    phi: np.ndarray = None
    psi: np.ndarray = None
    lam: np.ndarray = None

    @property
    def row_factor(self) -> np.ndarray:
        return self.phi if self.variant == "depm" else self.U

    @property
    def col_factor(self) -> np.ndarray:
        return self.psi if self.variant == "depm" else self.V


def _floored_gamma(gen, shape, rate):
    return np.maximum(gen.standard_gamma(shape) / rate, TINY)


def _draw_simplex_columns(gen, alphas):
    g = np.maximum(gen.standard_gamma(alphas), TINY)
    return g / g.sum(axis=0)


def draw_prior_parameters(s: TruncatedState) -> None:
    """Draw factors and atom weights from their priors (initialization, Geweke)."""
    h = s.hypers
    gen = s.rng.gen
    if s.variant == "depm":
        s.phi = _draw_simplex_columns(gen, np.full((s.n_rows, s.T), h.alpha1))
        s.psi = _draw_simplex_columns(gen, np.full((s.n_cols, s.T), h.alpha2))
    else:
        s.U = _floored_gamma(gen, np.full((s.n_rows, s.T), h.a1), h.b1)
        s.V = _floored_gamma(gen, np.full((s.n_cols, s.T), h.a2), h.b2)
    s.lam = _floored_gamma(gen, np.full(s.T, h.gamma0 / s.T), h.c0)


def init_state(x: SparseBinaryMatrix, T: int, hypers: Hyperparameters,
               rng: RngHandle, warm_start: bool = True) -> TruncatedState:
    """Build a starting state: prior factors, warm atom weights, random counts.

    All T atom weights start at Gamma(1, 1) scale and each one-entry places a
    single customer on a uniformly random atom, the same policy for every
    variant. Cold starts (prior-drawn weights at shape gamma0/T plus a
    count-sampling pass, ``warm_start=False``) leave one or two atoms holding
    every customer after the first partition, and single-site sweeps then sit
    in that basin regardless of what the posterior prefers.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if hypers.variant == "cepm" and hypers.C1 is None:
        raise ValueError("CEPM hyperparameters need C1, C2")
    counts = LatentCounts.for_matrix(x, T)
    s = TruncatedState(variant=hypers.variant, T=T, n_rows=x.n_rows,
                       n_cols=x.n_cols, hypers=hypers, counts=counts, rng=rng)
    draw_prior_parameters(s)
    if warm_start:
        s.lam = np.maximum(rng.gen.standard_gamma(1.0, size=T), TINY)
        E = counts.n_edges
        if E:
            m_ek = np.zeros((E, T), dtype=np.int64)
            m_ek[np.arange(E), rng.gen.integers(0, T, size=E)] = 1
            counts.set_edge_counts(m_ek)
    else:
        sample_latent_counts(s, x)
    return s


def _edge_weights(s: TruncatedState) -> np.ndarray:
    """Per-edge per-atom Poisson rates F[i,k] G[j,k] lam[k], shape (E, T)."""
    return (s.row_factor[s.counts.rows] * s.col_factor[s.counts.cols]) * s.lam


def intensity(s: TruncatedState, i: int, j: int) -> float:
    """Poisson rate sum_k F[i,k] G[j,k] lam[k] for entry (i, j)."""
    if not (0 <= i < s.n_rows and 0 <= j < s.n_cols):
        raise IndexError("entry out of range")
    return float(np.dot(s.row_factor[i] * s.col_factor[j], s.lam))


def link_probability(s: TruncatedState, i: int, j: int) -> float:
    """P(x[i,j] = 1) = 1 - exp(-intensity)."""
    return -float(np.expm1(-intensity(s, i, j)))


def link_probabilities(s: TruncatedState, entries) -> np.ndarray:
    """Vectorized link probabilities for a sequence of (i, j) pairs."""
    if len(entries) == 0:
        return np.zeros(0)
    idx = np.asarray(entries, dtype=np.int64)
    rates = ((s.row_factor[idx[:, 0]] * s.col_factor[idx[:, 1]]) * s.lam).sum(axis=1)
    return -np.expm1(-rates)


def sample_latent_counts(s: TruncatedState, x: SparseBinaryMatrix) -> None:
    """Redraw m[i,j,.] ~ ZTP(intensity) at one-entries, then partition across atoms.

    Zero entries keep m = 0 (the edge list only covers ones). Degenerate rows
    whose partition weights all underflow fall back to a uniform partition.
    """
    c = s.counts
    if (x.n_rows, x.n_cols) != (s.n_rows, s.n_cols):
        raise ValueError("matrix shape does not match state")
    if c.n_edges == 0:
        return
    w = _edge_weights(s)
    rate = w.sum(axis=1)
    m_e = sample_ztp_array(s.rng, np.maximum(rate, INTENSITY_FLOOR))
    dead = rate <= 0
    if np.any(dead):
        w[dead] = 1.0
        rate = w.sum(axis=1)
    p = w / rate[:, None]
    m_ek = s.rng.gen.multinomial(m_e, p)
    c.set_edge_counts(m_ek)


def _draw_U(s):
    h = s.hypers
    sv_lam = s.V.sum(axis=0) * s.lam
    s.U = _floored_gamma(s.rng.gen, h.a1 + s.counts.m_ik, h.b1 + sv_lam)


def _draw_V(s):
    h = s.hypers
    su_lam = s.U.sum(axis=0) * s.lam
    s.V = _floored_gamma(s.rng.gen, h.a2 + s.counts.m_jk, h.b2 + su_lam)


def _draw_phi(s):
    s.phi = _draw_simplex_columns(s.rng.gen, s.hypers.alpha1 + s.counts.m_ik)


def _draw_psi(s):
    s.psi = _draw_simplex_columns(s.rng.gen, s.hypers.alpha2 + s.counts.m_jk)


def sample_factors_epm(s: TruncatedState) -> None:
    """Gamma-conjugate redraw of U then V (EPM and CEPM)."""
    if s.variant not in ("epm", "cepm"):
        raise ValueError("sample_factors_epm needs an EPM/CEPM state")
    _draw_U(s)
    _draw_V(s)


def sample_factors_depm(s: TruncatedState) -> None:
    """Dirichlet-conjugate redraw of each phi and psi column (DEPM)."""
    if s.variant != "depm":
        raise ValueError("sample_factors_depm needs a DEPM state")
    _draw_phi(s)
    _draw_psi(s)


def sample_factors(s: TruncatedState) -> None:
    if s.variant == "depm":
        sample_factors_depm(s)
    else:
        sample_factors_epm(s)


def _draw_lambda(s, rate_scale: float = 1.0):
    h = s.hypers
    shape = h.gamma0 / s.T + s.counts.m_k
    if s.variant == "depm":
        rate = h.c0 + 1.0
    else:
        rate = h.c0 + s.U.sum(axis=0) * s.V.sum(axis=0)
    s.lam = _floored_gamma(s.rng.gen, shape, rate * rate_scale)


def sample_lambda(s: TruncatedState) -> None:
    """Gamma-conjugate redraw of the atom weights."""
    _draw_lambda(s)


def _shape_conditional_rate(f0, n_side, b, other_sum_lam):
    # Each log term is <= 0, so the rate only grows past f0.
    rate = f0 - n_side * np.log(b / (b + other_sum_lam)).sum()
    if not np.isfinite(rate) or rate <= 0:
        raise RuntimeError("non-positive rate in shape update (corrupt state)")
    return rate


def sample_hyper_shapes_epm(s: TruncatedState) -> None:
    """Antoniak-augmented conjugate update of a1 and a2 (EPM only).

    Each update integrates its factor block out of the count likelihood, so
    the block (U for a1, V for a2) is redrawn immediately afterwards.
    """
    if s.variant != "epm":
        raise ValueError("sample_hyper_shapes_epm needs an EPM state")
    h, c = s.hypers, s.counts
    w1 = sample_antoniak_total(s.rng, c.m_ik, h.a1)
    rate1 = _shape_conditional_rate(h.f0, s.n_rows, h.b1, s.V.sum(axis=0) * s.lam)
    h.a1 = max(float(s.rng.gen.standard_gamma(h.e0 + w1) / rate1), TINY)
    _draw_U(s)
    w2 = sample_antoniak_total(s.rng, c.m_jk, h.a2)
    rate2 = _shape_conditional_rate(h.f0, s.n_cols, h.b2, s.U.sum(axis=0) * s.lam)
    h.a2 = max(float(s.rng.gen.standard_gamma(h.e0 + w2) / rate2), TINY)
    _draw_V(s)


def cepm_grid_log_weights(m_mat: np.ndarray, other_sum_lam: np.ndarray,
                          n_side: int, C: float, e0: float, f0: float,
                          grid: np.ndarray = CEPM_GRID) -> np.ndarray:
    """Unnormalized log posterior over the CEPM shape grid.

    The likelihood is the count model with the matching factor block
    marginalized; the prior factor is the Gamma(e0, f0) density at the grid
    point (no reparameterization Jacobian).
    """
    vals, cnt = np.unique(m_mat, return_counts=True)
    lw = np.empty(grid.size)
    n_cells = m_mat.size
    for g, a in enumerate(grid):
        b = C * a
        lik = n_side * a * np.log(b / (b + other_sum_lam)).sum()
        lik += float(cnt @ gammaln(a + vals)) - n_cells * gammaln(a)
        lw[g] = lik + (e0 - 1.0) * np.log(a) - f0 * a
    return lw


def _grid_draw(rng, log_weights):
    if not np.any(np.isfinite(log_weights)):
        raise RuntimeError("all CEPM grid weights vanished (overflow bug)")
    p = np.exp(log_weights - logsumexp(log_weights))
    p /= p.sum()
    return int(rng.gen.choice(log_weights.size, p=p))


def sample_hyper_shapes_cepm(s: TruncatedState) -> None:
    """Grid Gibbs update of a1 and a2 over 1/(1+a) = 0.01..0.99 (CEPM only).

    Maintains the constraints b1 = C1*a1 and b2 = C2*a2, and redraws the
    factor block each update marginalizes.
    """
    if s.variant != "cepm":
        raise ValueError("sample_hyper_shapes_cepm needs a CEPM state")
    h, c = s.hypers, s.counts
    lw1 = cepm_grid_log_weights(c.m_ik, s.V.sum(axis=0) * s.lam,
                                s.n_rows, h.C1, h.e0, h.f0)
    h.a1 = float(CEPM_GRID[_grid_draw(s.rng, lw1)])
    h.b1 = h.C1 * h.a1
    _draw_U(s)
    lw2 = cepm_grid_log_weights(c.m_jk, s.U.sum(axis=0) * s.lam,
                                s.n_cols, h.C2, h.e0, h.f0)
    h.a2 = float(CEPM_GRID[_grid_draw(s.rng, lw2)])
    h.b2 = h.C2 * h.a2
    _draw_V(s)


def sample_hyper_alphas_depm(s: TruncatedState) -> None:
    """Beta/Antoniak-augmented conjugate update of alpha1 and alpha2 (DEPM only).

    Empty atoms contribute Beta(I*alpha, 0) == point mass at one (log v = 0).
    Redraws phi after the alpha1 update and psi after alpha2.
    """
    if s.variant != "depm":
        raise ValueError("sample_hyper_alphas_depm needs a DEPM state")
    h, c = s.hypers, s.counts
    active = c.m_k > 0

    def one_side(alpha, n_side, m_side):
        v = np.ones(s.T)
        if np.any(active):
            v[active] = s.rng.gen.beta(n_side * alpha, c.m_k[active])
        w = sample_antoniak_total(s.rng, m_side, alpha)
        rate = h.f0 - n_side * np.log(np.maximum(v, TINY)).sum()
        if not np.isfinite(rate) or rate <= 0:
            raise RuntimeError("non-positive rate in alpha update")
        return max(float(s.rng.gen.standard_gamma(h.e0 + w) / rate), TINY)

    h.alpha1 = one_side(h.alpha1, s.n_rows, c.m_ik)
    _draw_phi(s)
    h.alpha2 = one_side(h.alpha2, s.n_cols, c.m_jk)
    _draw_psi(s)


def sample_gamma0_truncated(s: TruncatedState) -> None:
    """Antoniak-augmented conjugate update of gamma0; redraws lam afterwards."""
    h, c = s.hypers, s.counts
    w = sample_antoniak_total(s.rng, c.m_k, h.gamma0 / s.T)
    if s.variant == "depm":
        rate = h.f0 - np.log(h.c0 / (h.c0 + 1.0))
    else:
        susv = s.U.sum(axis=0) * s.V.sum(axis=0)
        rate = h.f0 - np.log(h.c0 / (h.c0 + susv)).sum() / s.T
    if not np.isfinite(rate) or rate <= 0:
        raise RuntimeError("non-positive rate in gamma0 update")
    h.gamma0 = max(float(s.rng.gen.standard_gamma(h.e0 + w) / rate), TINY)
    _draw_lambda(s)


def sample_hyper_rates(s: TruncatedState) -> None:
    """Gamma-conjugate updates of the rate hyperparameters.

    EPM: b1, b2, c0. CEPM: c0 only (b1, b2 follow the constraints). DEPM: c0.
    """
    h = s.hypers
    gen = s.rng.gen
    if s.variant == "epm":
        h.b1 = max(float(gen.standard_gamma(h.e0 + s.n_rows * s.T * h.a1)
                         / (h.f0 + s.U.sum())), TINY)
        h.b2 = max(float(gen.standard_gamma(h.e0 + s.n_cols * s.T * h.a2)
                         / (h.f0 + s.V.sum())), TINY)
    h.c0 = max(float(gen.standard_gamma(h.e0 + h.gamma0)
                     / (h.f0 + s.lam.sum())), TINY)


def sample_hyper_shapes(s: TruncatedState) -> None:
    if s.variant == "epm":
        sample_hyper_shapes_epm(s)
    elif s.variant == "cepm":
        sample_hyper_shapes_cepm(s)
    else:
        sample_hyper_alphas_depm(s)


def gibbs_sweep(s: TruncatedState, x: SparseBinaryMatrix) -> TruncatedState:
    """One full scan: counts, factors, lambda, then hyperparameters."""
    sample_latent_counts(s, x)
    sample_factors(s)
    sample_lambda(s)
    sample_hyper_shapes(s)
    sample_gamma0_truncated(s)
    sample_hyper_rates(s)
    return s


def count_active_atoms(s: TruncatedState) -> int:
    """Number of atoms with m[.,.,k] > 0."""
    return int((s.counts.m_k > 0).sum())
