"""Random-variate generators and special functions used by the samplers.

Conventions: gamma distributions are parameterized by (shape, rate), i.e.
density proportional to x^(shape-1) * exp(-rate * x). All draws go through an
:class:`~epm.rng.RngHandle` for reproducibility.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .rng import RngHandle

# Additive floor: keeps normalized weights / parameter draws strictly positive
# when gamma variates underflow (common at shapes around 1e-2 and below).
TINY = 1e-300

# Inversion beyond this count cannot happen for lambda < 10 (P < 1e-300);
# the cap only guards against float pathologies.
_ZTP_MAX_INVERSION = 512


def _check_positive(name, value):
    if not np.all(np.isfinite(value)) or not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")


def sample_gamma(rng: RngHandle, shape: float, rate: float) -> float:
    """Draw from Gamma(shape, rate)."""
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    return rng.gen.standard_gamma(shape) / rate


def sample_beta(rng: RngHandle, a: float, b: float) -> float:
    """Draw from Beta(a, b)."""
    _check_positive("a", a)
    _check_positive("b", b)
    return float(rng.gen.beta(a, b))


def sample_dirichlet(rng: RngHandle, alphas) -> np.ndarray:
    """Draw from Dirichlet(alphas).

    Returns a vector of strictly positive coordinates summing to one (gamma
    draws that underflow to zero are floored at TINY before normalizing).
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or alphas.size < 1:
        raise ValueError("alphas must be a non-empty 1-d array")
    _check_positive("alphas", alphas)
    if alphas.size == 1:
        return np.array([1.0])
    g = rng.gen.standard_gamma(alphas)
    g = np.maximum(g, TINY)
    return g / g.sum()


def sample_multinomial(rng: RngHandle, n: int, weights) -> np.ndarray:
    """Partition `n` items across categories with the given nonnegative weights."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        if n == 0:
            return np.zeros(w.size, dtype=np.int64)
        raise ValueError("all-zero weights with n > 0")
    return rng.gen.multinomial(n, w / total).astype(np.int64)


def sample_ztp(rng: RngHandle, lam: float) -> int:
    """Draw from the zero-truncated Poisson: Poisson(lam) conditioned on >= 1.

    Sequential inverse-CDF for lam < 10 (exact, short loops); for lam >= 10,
    rejection on plain Poisson draws (retry probability exp(-lam) <= 5e-5).
    """
    _check_positive("lam", lam)
    if lam >= 10.0:
        while True:
            k = int(rng.gen.poisson(lam))
            if k > 0:
                return k
    u = rng.gen.random()
    # P(1) = lam / (e^lam - 1); P(k+1) = P(k) * lam / (k+1)
    p = lam / np.expm1(lam)
    c = p
    k = 1
    while u > c and k < _ZTP_MAX_INVERSION:
        k += 1
        p *= lam / k
        c += p
    return k


def sample_ztp_array(rng: RngHandle, lams: np.ndarray) -> np.ndarray:
    """Vectorized :func:`sample_ztp` over an array of rates."""
    lams = np.asarray(lams, dtype=float)
    _check_positive("lams", lams)
    out = np.zeros(lams.shape, dtype=np.int64)

    big = lams >= 10.0
    if np.any(big):
        pending = np.flatnonzero(big)
        while pending.size:
            draws = rng.gen.poisson(lams[pending])
            out[pending] = draws
            pending = pending[draws == 0]

    small = ~big
    if np.any(small):
        idx = np.flatnonzero(small)
        lam_s = lams[idx]
        u = rng.gen.random(idx.size)
        p = lam_s / np.expm1(lam_s)
        c = p.copy()
        k_val = np.ones(idx.size, dtype=np.int64)
        active = u > c
        k = 1
        while np.any(active) and k < _ZTP_MAX_INVERSION:
            k += 1
            p[active] *= lam_s[active] / k
            c[active] += p[active]
            k_val[active] = k
            active &= u > c
        out[idx] = k_val
    return out


def sample_antoniak(rng: RngHandle, n: int, a: float) -> int:
    """Number of occupied CRP tables after seating `n` customers at concentration `a`.

    Sampled by the exact construction sum_{p=1..n} Bernoulli(a / (a + p - 1)).
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    _check_positive("a", a)
    if n == 0:
        return 0
    q = a / (a + np.arange(n, dtype=float))
    return int((rng.gen.random(n) < q).sum())


def sample_antoniak_total(rng: RngHandle, counts, a: float) -> int:
    """Sum of independent Antoniak(count_i, a) draws over an array of counts.

    The hyperparameter updates only ever need the total table count, so the
    per-count Bernoulli sequences are concatenated into one vectorized pass.
    """
    _check_positive("a", a)
    counts = np.asarray(counts, dtype=np.int64).ravel()
    counts = counts[counts > 0]
    if counts.size == 0:
        return 0
    total = int(counts.sum())
    # positions 0..c_i-1 within each count block
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.arange(total, dtype=np.int64) - offsets
    q = a / (a + pos.astype(float))
    return int((rng.gen.random(total) < q).sum())


def log_gamma_fn(x):
    """Natural log of the gamma function; accepts scalars or arrays, x > 0."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"log_gamma_fn requires x > 0, got {x!r}")
    out = gammaln(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out
