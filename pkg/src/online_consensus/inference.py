"""Posterior beliefs over the consensus class given partially queried votes."""

from dataclasses import dataclass

import numpy as np

from .distributions import (
    dirichlet_sample,
    dirmult_logpmf,
    enumerate_counts,
    multinomial_sample,
    random_argmax,
)
from .likelihood import EXACT_SUPPORT_LIMIT, _check_support

DEFAULT_MC_SAMPLES = 2048


@dataclass(frozen=True, eq=False)
class ConsensusPosterior:
    """Probability of each class being the consensus vote."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def acc(self):
        """Posterior probability that the most likely class is the consensus."""
        return float(self.probs.max())

    @property
    def argmax_class(self):
        return int(np.argmax(self.probs))

    @classmethod
    def from_samples(cls, winners, k):
        return cls(np.bincount(winners, minlength=k) / len(winners))


def guaranteed_winner(votes, pool_size):
    """Class that wins the full pool no matter how the rest vote, else None."""
    votes = np.asarray(votes)
    remaining = pool_size - votes.sum()
    order = np.argsort(votes)[::-1]
    lead = votes[order[0]]
    runner_up = votes[order[1]] if votes.size > 1 else 0
    if lead - runner_up > remaining:
        return int(order[0])
    return None


def consensus_posterior_finexp(votes, alpha, pool_size, m, rng):
    """Monte-Carlo consensus posterior for a finite pool of ``pool_size`` experts.

    Completes the unseen votes ``m`` times from DirMult(remaining,
    alpha + votes) and counts how often each class is the plurality, with
    simulated ties resolved at random.
    """
    votes = np.asarray(votes, dtype=np.int64)
    remaining = pool_size - int(votes.sum())
    if remaining < 0:
        raise ValueError("more votes than the pool holds")
    if m < 1:
        raise ValueError("need at least one Monte-Carlo sample")
    k = votes.size
    if remaining == 0:
        winners = random_argmax(np.broadcast_to(votes, (m, k)), rng)
        return ConsensusPosterior.from_samples(winners, k)
    post = np.asarray(alpha, dtype=float) + votes
    pi = dirichlet_sample(post, rng, size=m)
    full = votes + multinomial_sample(remaining, pi, rng)
    return ConsensusPosterior.from_samples(random_argmax(full, rng), k)


def consensus_posterior_infexp(votes, alpha, m, rng):
    """Monte-Carlo consensus posterior in the infinite-pool limit.

    The consensus is the largest entry of the population vote shares,
    drawn from Dirichlet(alpha + votes).
    """
    if m < 1:
        raise ValueError("need at least one Monte-Carlo sample")
    post = np.asarray(alpha, dtype=float) + np.asarray(votes)
    pi = dirichlet_sample(post, rng, size=m)
    return ConsensusPosterior.from_samples(random_argmax(pi, rng), post.size)


def consensus_posterior_exact_finexp(votes, alpha, pool_size, limit=EXACT_SUPPORT_LIMIT):
    """Exact finite-pool consensus posterior by enumerating completions.

    Tied completions split their mass evenly between the tied classes.
    """
    votes = np.asarray(votes, dtype=np.int64)
    k = votes.size
    remaining = pool_size - int(votes.sum())
    if remaining < 0:
        raise ValueError("more votes than the pool holds")
    _check_support(remaining, k, limit)
    extra = enumerate_counts(remaining, k)
    logp = np.atleast_1d(dirmult_logpmf(extra, remaining, np.asarray(alpha, dtype=float) + votes))
    weight = np.exp(logp)
    full = votes + extra
    top = full == full.max(axis=1, keepdims=True)
    share = top / top.sum(axis=1, keepdims=True)
    return ConsensusPosterior(weight @ share)


def predict(posterior, rng):
    """Most probable consensus class; exact ties are broken at random."""
    return random_argmax(posterior.probs, rng)
