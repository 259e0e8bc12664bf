"""Querying policies.

A policy sees one sample at a time. The harness calls :meth:`Policy.start`
when a sample arrives, then :meth:`Policy.decide` after every queried vote
until it returns a commit, then :meth:`Policy.finish`.

:class:`ThresholdPolicy` is the Bayesian method: keep querying until the
posterior probability of the predicted consensus exceeds ``rho``. The
other three are baselines that draw a query count from a binomial up front.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .distributions import random_argmax
from .inference import (
    DEFAULT_MC_SAMPLES,
    ConsensusPosterior,
    consensus_posterior_finexp,
    consensus_posterior_infexp,
    guaranteed_winner,
    predict,
)
from .likelihood import OptimizerConfig, optimize_map
from .prior import HyperPriorConfig, PriorParams, Regime, alpha_from, prior_mode


class ThresholdRegime(str, Enum):
    FINEXP = "FinExp"
    INFEXP = "InfExp"
    FIXED_FIN = "FixedFin"
    FIXED_INF = "FixedInf"

    @property
    def inference(self):
        return Regime.FINEXP if self in (ThresholdRegime.FINEXP, ThresholdRegime.FIXED_FIN) else Regime.INFEXP

    @property
    def learns(self):
        return self in (ThresholdRegime.FINEXP, ThresholdRegime.INFEXP)


@dataclass(frozen=True)
class Decision:
    """Either ask for another vote or commit to ``label``."""

    query: bool
    label: int = -1
    acc: float = float("nan")


QUERY = Decision(True)


def commit(label, acc=float("nan")):
    return Decision(False, int(label), float(acc))


class Policy:
    name = "policy"
    learns = False

    def __init__(self, pool_size):
        self.pool_size = int(pool_size)

    def start(self, f, rng):
        pass

    def decide(self, votes, f, rng):
        raise NotImplementedError

    def finish(self, f, votes, label, rng):
        pass

    def predict_without_votes(self, f, rng):
        """Prediction when no expert can be queried."""
        return commit(random_argmax(f, rng))

    def describe(self):
        return {"policy": self.name}


class ThresholdPolicy(Policy):
    """Query until the posterior accuracy of the prediction exceeds ``rho``.

    Also commits once the pool is exhausted or the current leader can no
    longer be caught, in which case the posterior accuracy is exactly one.
    """

    name = "threshold"

    def __init__(
        self,
        rho,
        regime,
        pool_size,
        params=None,
        hyper=None,
        mc_samples=DEFAULT_MC_SAMPLES,
        optimizer=None,
    ):
        super().__init__(pool_size)
        if not 0.0 <= rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        self.rho = float(rho)
        self.regime = ThresholdRegime(regime)
        self.hyper = hyper or HyperPriorConfig.default(self.regime.inference)
        self.mc_samples = int(mc_samples)
        self.optimizer = optimizer or OptimizerConfig()
        self.params = params

    @property
    def learns(self):
        return self.regime.learns

    def _ensure_params(self, k):
        if self.params is None:
            if self.regime.learns:
                self.params = prior_mode(self.hyper, k)
            else:
                self.params = PriorParams.fixed(k)

    def posterior(self, votes, f, rng):
        self._ensure_params(len(f))
        alpha = alpha_from(f, self.params)
        if self.regime.inference is Regime.FINEXP:
            return consensus_posterior_finexp(votes, alpha, self.pool_size, self.mc_samples, rng)
        return consensus_posterior_infexp(votes, alpha, self.mc_samples, rng)

    def decide(self, votes, f, rng):
        votes = np.asarray(votes)
        if votes.sum() >= self.pool_size:
            post = ConsensusPosterior((votes == votes.max()).astype(float))
            return commit(predict(post, rng), post.acc)
        winner = guaranteed_winner(votes, self.pool_size)
        if winner is not None:
            return commit(winner, 1.0)
        post = self.posterior(votes, f, rng)
        if post.acc > self.rho:
            return commit(predict(post, rng), post.acc)
        return QUERY

    def predict_without_votes(self, f, rng):
        post = self.posterior(np.zeros(len(f), dtype=np.int64), f, rng)
        return commit(predict(post, rng), post.acc)

    def refit(self, window, rng):
        """Re-estimate the prior parameters on ``window``, warm-started."""
        if not self.regime.learns or len(window) == 0:
            return
        self._ensure_params(window.arrays()[0].shape[1])
        self.params = optimize_map(window, self.hyper, self.optimizer, self.params, rng)

    def describe(self):
        return {"policy": self.name, "regime": self.regime.value, "rho": self.rho}


def random_draw_count(beta, pool_size, rng):
    """Number of experts a binomial baseline may query for one sample."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    return int(rng.binomial(pool_size, beta))


def entropy_beta(f, v):
    """``clip(v * H(f), 0, 1)`` with ``H(f) = -(1/K) sum f log f`` in nats."""
    if v < 0:
        raise ValueError("entropy scale must be non-negative")
    f = np.asarray(f, dtype=float)
    h = -np.sum(f[f > 0] * np.log(f[f > 0])) / f.size
    return float(np.clip(v * h, 0.0, 1.0))


class BinomialPolicy(Policy):
    """Draw ``Q ~ Binomial(N, beta_t)`` and query up to ``Q`` experts.

    Stops early once further queries within the budget cannot change the
    plurality of the queried votes. Predicts that plurality, or the
    classifier's argmax when nothing was queried.
    """

    def __init__(self, pool_size):
        super().__init__(pool_size)
        self.budget = 0

    def beta(self, f, rng):
        raise NotImplementedError

    def start(self, f, rng):
        self.budget = random_draw_count(self.beta(f, rng), self.pool_size, rng)

    def decide(self, votes, f, rng):
        votes = np.asarray(votes)
        n = int(votes.sum())
        if n == 0:
            return QUERY if self.budget > 0 else commit(random_argmax(f, rng))
        top = np.sort(votes)[::-1]
        margin = top[0] - (top[1] if top.size > 1 else 0)
        if n < self.budget and margin <= self.budget - n:
            return QUERY
        return commit(random_argmax(votes, rng))


class RandomPolicy(BinomialPolicy):
    name = "random"

    def __init__(self, beta, pool_size):
        super().__init__(pool_size)
        if not 0.0 <= beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        self.fixed_beta = float(beta)

    def beta(self, f, rng):
        return self.fixed_beta

    def describe(self):
        return {"policy": self.name, "beta": self.fixed_beta}


class EntropyPolicy(BinomialPolicy):
    name = "entropy"

    def __init__(self, scale, pool_size):
        super().__init__(pool_size)
        if scale < 0:
            raise ValueError("scale must be non-negative")
        self.scale = float(scale)

    def beta(self, f, rng):
        return entropy_beta(f, self.scale)

    def describe(self):
        return {"policy": self.name, "scale": self.scale}


class ModelPickerPolicy(BinomialPolicy):
    """Single-model adaptation of exponential-weights model selection.

    Keeps a cumulative loss per class. Exponential weights
    ``q = softmax(-eta * loss)`` are mixed with the classifier output into
    ``p = sum_k f_k q_k``, and the query probability is the Bernoulli
    variance ``4 p (1 - p)`` times ``scale``, clipped to [0, 1]. After a
    sample with queried votes every class other than the queried plurality
    takes a unit loss.

    This construction is a reconstruction; the original method selects
    between several models.
    """

    name = "model_picker"

    def __init__(self, scale, pool_size, k=None, eta=0.3):
        super().__init__(pool_size)
        if scale < 0 or eta < 0:
            raise ValueError("scale and eta must be non-negative")
        self.scale = float(scale)
        self.eta = float(eta)
        self.losses = None if k is None else np.zeros(k)

    def weights(self, k):
        if self.losses is None:
            self.losses = np.zeros(k)
        z = -self.eta * self.losses
        z -= z.max()
        q = np.exp(z)
        return q / q.sum()

    def beta(self, f, rng):
        f = np.asarray(f, dtype=float)
        p = float(np.clip(np.dot(f, self.weights(f.size)), 0.0, 1.0))
        return float(np.clip(self.scale * 4.0 * p * (1.0 - p), 0.0, 1.0))

    def finish(self, f, votes, label, rng):
        votes = np.asarray(votes)
        if votes.sum() < 1:
            return
        self.weights(votes.size)
        plurality = random_argmax(votes, rng)
        miss = np.ones(votes.size)
        miss[plurality] = 0.0
        self.losses = self.losses + miss

    def describe(self):
        return {"policy": self.name, "scale": self.scale, "eta": self.eta}


POLICY_KINDS = ("threshold", "random", "entropy", "model_picker")


def make_policy(kind, value, pool_size, regime="InfExp", **kwargs):
    """Build a policy from its kind and its single swept hyperparameter."""
    if kind == "threshold":
        return ThresholdPolicy(value, regime, pool_size, **kwargs)
    if kind == "random":
        return RandomPolicy(value, pool_size)
    if kind == "entropy":
        return EntropyPolicy(value, pool_size)
    if kind == "model_picker":
        return ModelPickerPolicy(value, pool_size, eta=kwargs.get("eta", 0.3))
    raise ValueError(f"unknown policy kind {kind!r}; expected one of {POLICY_KINDS}")
