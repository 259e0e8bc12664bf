"""Special functions, samplers and log-probability kernels.

Everything here works in log space. Probabilities only leave this module
as log values; a log-probability of zero mass is ``LOG_ZERO`` (``-inf``),
which ``scipy.special.logsumexp`` and plain addition propagate safely.

Samplers take an explicit :class:`numpy.random.Generator` and never touch
global random state, so every draw is a function of (arguments, seed).
Most kernels broadcast over leading axes, with classes on the last axis.
"""

from itertools import combinations
from math import comb

import numpy as np
from scipy.special import gammaln, psi, xlogy

from .exceptions import DomainError, EmptyPoolError

LOG_ZERO = -np.inf
_SMALL_ALPHA = 0.1


def _check_positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be finite and strictly positive, got {x!r}")
    return arr


def _as_scalar(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def log_gamma(x):
    """Natural log of the gamma function for ``x > 0``."""
    return _as_scalar(gammaln(_check_positive(x)))


def digamma(x):
    """Derivative of :func:`log_gamma`, defined for ``x > 0``."""
    return _as_scalar(psi(_check_positive(x)))


def gamma_logpdf(x, a, b):
    """Log density of Gamma(shape ``a``, rate ``b``) at ``x``."""
    x = _check_positive(x)
    a = _check_positive(a, "a")
    b = _check_positive(b, "b")
    return _as_scalar(a * np.log(b) - gammaln(a) + (a - 1.0) * np.log(x) - b * x)


def enumerate_counts(n, k):
    """All length-``k`` non-negative integer vectors summing to ``n``.

    Returns an array of shape ``(comb(n + k - 1, k - 1), k)``, ordered
    lexicographically descending in the first coordinate.
    """
    if n < 0 or k < 1:
        raise ValueError("need n >= 0 and k >= 1")
    rows = []
    for bars in combinations(range(n + k - 1), k - 1):
        edges = (-1,) + bars + (n + k - 1,)
        rows.append([edges[i + 1] - edges[i] - 1 for i in range(k)])
    out = np.array(rows, dtype=np.int64).reshape(-1, k)
    assert len(out) == comb(n + k - 1, k - 1)
    return out


# --------------------------------------------------------------------------
# samplers


def dirichlet_sample(alpha, rng, size=None):
    """Draw from Dirichlet(``alpha``).

    ``size`` prepends leading axes; ``alpha`` may itself be batched. Gamma
    variates are generated in log space (``G = G' * U**(1/a)`` with
    ``G' ~ Gamma(a + 1)``) when any concentration is below 0.1, so tiny
    concentrations do not underflow to an all-zero draw.
    """
    alpha = _check_positive(alpha, "alpha")
    shape = alpha.shape if size is None else tuple(np.atleast_1d(size)) + alpha.shape
    alpha = np.broadcast_to(alpha, shape)
    if alpha.min() >= _SMALL_ALPHA:
        g = rng.standard_gamma(alpha)
        return g / g.sum(axis=-1, keepdims=True)
    log_g =np.log(rng.standard_gamma(alpha + 1.0)) + np.log(rng.random(shape)) / alpha
    log_g -= log_g.max(axis=-1, keepdims=True)
    g = np.exp(log_g)
    return g / g.sum(axis=-1, keepdims=True)


def multinomial_sample(n, p, rng, size=None):
    """Draw counts from Multinomial(``n``, ``p``); ``n`` and ``p`` broadcast."""
    n = np.asarray(n)
    if np.any(n < 0):
        raise ValueError("number of draws must be non-negative")
    p = np.asarray(p, dtype=float)
    p = p / p.sum(axis=-1, keepdims=True)
    return rng.multinomial(n, p, size=size)


def dirmult_sample(n, alpha, rng, size=None):
    """Draw counts from the Dirichlet-Multinomial DirMult(``n``, ``alpha``)."""
    pi = dirichlet_sample(alpha, rng, size=size)
    n = np.asarray(n)
    if n.ndim:
        n = np.broadcast_to(n, pi.shape[:-1])
    return multinomial_sample(n, pi, rng)


def draw_vote_without_replacement(remaining, rng):
    """Pick a class with probability proportional to its remaining votes.

    The caller is responsible for decrementing ``remaining``.
    """
    remaining = np.asarray(remaining)
    total = remaining.sum()
    if total < 1:
        raise EmptyPoolError("no votes left in the pool")
    return int(np.searchsorted(np.cumsum(remaining), rng.integers(total), side="right"))


def random_argmax(x, rng):
    """Argmax over the last axis with ties broken uniformly at random."""
    x = np.asarray(x)
    tied = x == x.max(axis=-1, keepdims=True)
    out = tied.argmax(axis=-1)
    multi = tied.sum(axis=-1) > 1
    if np.any(multi):
        # only rows with ties consume random numbers
        if out.ndim == 0:
            return int(np.where(tied, rng.random(tied.shape), -1.0).argmax())
        rows = tied[multi]
        out[multi] = np.where(rows, rng.random(rows.shape), -1.0).argmax(axis=-1)
    return int(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# log-probability kernels


def _check_total(x, n):
    if np.any(x.sum(axis=-1) != n):
        raise ValueError("counts do not sum to the declared number of draws")


def multinomial_logpmf(x, n, p):
    """Log pmf of Multinomial(``n``, ``p``) at counts ``x``."""
    x = np.asarray(x)
    n = np.asarray(n)
    _check_total(x, n)
    p = np.asarray(p, dtype=float)
    out = gammaln(n + 1.0) - gammaln(x + 1.0).sum(axis=-1) + xlogy(x, p).sum(axis=-1)
    return _as_scalar(out)


def dirmult_logpmf(x, n, alpha):
    """Log pmf of the compound Dirichlet-Multinomial DirMult(``n``, ``alpha``).

    Includes the multinomial coefficient, so it is a pmf over count
    vectors rather than over ordered vote sequences.
    """
    x = np.asarray(x)
    n = np.asarray(n)
    _check_total(x, n)
    alpha = np.asarray(alpha, dtype=float)
    a_sum = alpha.sum(axis=-1)
    out = (
        gammaln(a_sum)
        + gammaln(n + 1.0)
        - gammaln(a_sum + n)
        + (gammaln(alpha + x) - gammaln(alpha) - gammaln(x + 1.0)).sum(axis=-1)
    )
    return _as_scalar(out)


def dirmult_grad_alpha(x, n, alpha):
    """Gradient of :func:`dirmult_logpmf` with respect to ``alpha``."""
    x = np.asarray(x)
    alpha = np.asarray(alpha, dtype=float)
    a_sum = alpha.sum(axis=-1, keepdims=True)
    n = np.asarray(n, dtype=float)[..., None]
    return psi(a_sum) - psi(a_sum + n) + psi(alpha + x) - psi(alpha)


def log_binom(n, k):
    """log C(n, k), with ``LOG_ZERO`` where ``k > n`` or ``k < 0``."""
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    valid = (k >= 0) & (k <= n)
    kk = np.where(valid, k, 0.0)
    out = np.where(valid, gammaln(n + 1.0) - gammaln(kk + 1.0) - gammaln(n - kk + 1.0), LOG_ZERO)
    return _as_scalar(out)


def mv_hypergeo_logpmf(sub, total, n_draw):
    """Log pmf of drawing histogram ``sub`` without replacement from ``total``.

    Zero-probability outcomes (some ``sub_k > total_k``) give ``LOG_ZERO``.
    """
    sub = np.asarray(sub)
    total = np.asarray(total)
    _check_total(sub, n_draw)
    pool = total.sum(axis=-1)
    if np.any(np.asarray(n_draw) > pool):
        raise ValueError("cannot draw more items than the pool holds")
    out = np.sum(log_binom(total, sub), axis=-1) - log_binom(pool, n_draw)
    return _as_scalar(out)
