"""Learnable prior parameters and the map from classifier output to a
Dirichlet concentration."""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .distributions import gamma_logpdf

PROB_FLOOR = 1e-8
MODE_FLOOR = 1e-2


class Regime(str, Enum):
    """Finite expert pool (exact) or the infinite-pool limit."""

    FINEXP = "FinExp"
    INFEXP = "InfExp"


@dataclass(frozen=True, eq=False)
class PriorParams:
    """The triple (theta, phi, tau).

    ``theta`` is how many expert votes the classifier is worth, ``phi`` is
    the concentration floor shared by every class and ``tau`` is a per-class
    calibration exponent applied to the classifier's log-probabilities.
    """

    theta: float
    phi: float
    tau: np.ndarray

    def __post_init__(self):
        tau = np.array(self.tau, dtype=float).reshape(-1)
        tau.setflags(write=False)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "phi", float(self.phi))
        if self.theta <= 0 or self.phi <= 0 or np.any(tau <= 0):
            raise ValueError("prior parameters must be strictly positive")

    def __eq__(self, other):
        if not isinstance(other, PriorParams):
            return NotImplemented
        return np.array_equal(self.as_vector(), other.as_vector())

    __hash__ = object.__hash__

    @property
    def n_classes(self):
        return self.tau.size

    @classmethod
    def fixed(cls, k):
        """All-ones parameters used by the non-learning regimes."""
        return cls(1.0, 1.0, np.ones(k))

    def to_log_vector(self):
        return np.log(np.concatenate([[self.theta, self.phi], self.tau]))

    @classmethod
    def from_log_vector(cls, v):
        v = np.exp(np.asarray(v, dtype=float))
        return cls(v[0], v[1], v[2:])

    def as_vector(self):
        return np.concatenate([[self.theta, self.phi], self.tau])

    def to_dict(self):
        return {"theta": self.theta, "phi": self.phi, "tau": self.tau.tolist()}


@dataclass(frozen=True)
class HyperPriorConfig:
    """Gamma(shape, rate) hyperpriors on theta, phi and every tau_k."""

    theta: tuple = (1.1, 1.0)
    phi: tuple = (1.1, 1.0)
    tau: tuple = (1.1, 1.0)
    regime: Regime = Regime.FINEXP

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        for pair in (self.theta, self.phi, self.tau):
            if len(pair) != 2 or min(pair) <= 0:
                raise ValueError(f"hyperprior pairs need positive (shape, rate), got {pair}")

    @classmethod
    def default(cls, regime):
        """Gamma(1.1, 1) for the finite regime, Gamma(3, 2) for the limit."""
        regime = Regime(regime)
        pair = (1.1, 1.0) if regime is Regime.FINEXP else (3.0, 2.0)
        return cls(pair, pair, pair, regime)

    @classmethod
    def from_dict(cls, d):
        regime = Regime(d.get("regime", Regime.FINEXP))
        base = cls.default(regime)
        return cls(
            tuple(d.get("theta", base.theta)),
            tuple(d.get("phi", base.phi)),
            tuple(d.get("tau", base.tau)),
            regime,
        )


def clamp_probs(f):
    """Normalize, clamp to ``[1e-8, 1]`` and renormalize.

    Normalizing first keeps the result invariant to rescaling ``f``.
    """
    f = np.asarray(f, dtype=float)
    f = np.clip(f / f.sum(axis=-1, keepdims=True), PROB_FLOOR, 1.0)
    return f / f.sum(axis=-1, keepdims=True)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def alpha_from(f, params):
    """Dirichlet concentration ``theta * softmax(tau * log f) + phi``.

    ``f`` may be a single probability vector or a stack of them.
    """
    s = _softmax(params.tau * np.log(clamp_probs(f)))
    return params.theta * s + params.phi


def log_prior(params, hyper):
    """Log density of ``params`` under the Gamma hyperpriors."""
    out = gamma_logpdf(params.theta, *hyper.theta) + gamma_logpdf(params.phi, *hyper.phi)
    return out + float(np.sum(gamma_logpdf(params.tau, *hyper.tau)))


def _mode(pair):
    a, b = pair
    return (a - 1.0) / b if a > 1 else MODE_FLOOR


def prior_mode(hyper, k):
    """Parameters at the hyperprior modes, floored at 0.01 when ``a <= 1``."""
    return PriorParams(_mode(hyper.theta), _mode(hyper.phi), np.full(k, _mode(hyper.tau)))
