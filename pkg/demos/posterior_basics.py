"""
Consensus posteriors from a handful of votes
=============================================

Three experts are asked about a two-class item; one has answered so far.
How likely is it that class 0 ends up as the majority of all three?
"""

import numpy as np

from online_consensus import (
    PriorParams,
    alpha_from,
    consensus_posterior_exact_finexp,
    consensus_posterior_finexp,
    consensus_posterior_infexp,
)

rng = np.random.default_rng(0)

# a flat prior: alpha = [1, 1]
alpha = np.array([1.0, 1.0])
votes = np.array([1, 0])

# the two unseen votes follow a Polya urn started at [2, 1]:
# [+2, +0] w.p. 1/2, [+1, +1] w.p. 1/3, [+0, +2] w.p. 1/6
exact = consensus_posterior_exact_finexp(votes, alpha, pool_size=3)
print("exact P(consensus = 0):", exact.probs[0])
print("5/6                   :", 5 / 6)

mc = consensus_posterior_finexp(votes, alpha, 3, 100_000, rng)
print("Monte-Carlo estimate  :", mc.probs[0])

###############################################################################
# Growing the pool
# ----------------
# With more experts the finite-pool posterior approaches the one that
# treats the consensus as the argmax of the latent class distribution.

alpha = np.array([1.0, 1.5, 0.8])
votes = np.array([2, 1, 0])
limit = consensus_posterior_infexp(votes, alpha, 200_000, rng).probs
print("\ninfinite pool:", np.round(limit, 4))
for pool in (3, 5, 20, 50, 500):
    fin = consensus_posterior_finexp(votes, alpha, pool, 200_000, rng).probs
    print(f"N = {pool:3d}     :", np.round(fin, 4), " max gap", round(float(np.abs(fin - limit).max()), 4))

###############################################################################
# Where alpha comes from
# ----------------------
# The prior concentration mixes the classifier's probabilities, sharpened
# or flattened per class by tau, with a uniform floor phi.

f = np.array([0.7, 0.2, 0.1])
for tau in ([1.0, 1.0, 1.0], [0.3, 1.0, 1.0], [3.0, 1.0, 1.0]):
    a = alpha_from(f, PriorParams(theta=4.0, phi=0.5, tau=tau))
    print("tau", tau, "-> alpha", np.round(a, 3))
