"""
Adapting to a shift in classifier quality
==========================================

The first half of the stream comes from a sharp classifier, the second
from a much flatter one. A learning threshold policy keeps refitting its
prior on a sliding window, so its spending rises after the shift while
its error stays put.
"""

import numpy as np

from online_consensus import RunConfig, StreamSample, SyntheticConfig, ThresholdPolicy, generate_stream, make_shift_stream, metrics, run_sequence
from online_consensus.harness import moving_average

N, half = 6, 400
clean = generate_stream(SyntheticConfig(k=5, n_experts=N, n_samples=half, sharpness=3.0, seed=2))
noisy = generate_stream(SyntheticConfig(k=5, n_experts=N, n_samples=half, sharpness=1.0, seed=3))
noisy = [StreamSample("n" + s.id, s.f, s.vote_pool) for s in noisy]
stream = make_shift_stream(clean, noisy, seed=0)

for regime in ("InfExp", "FixedInf"):
    log = run_sequence(stream, ThresholdPolicy(0.9, regime, N, mc_samples=256), RunConfig(N, window=200, seed=0))
    m = metrics(log, boundary=half)
    print(f"{regime:9s} pre: error {m['pre']['error_rate']:.3f} cost {m['pre']['mean_cost']:.2f}"
          f"   post: error {m['post']['error_rate']:.3f} cost {m['post']['mean_cost']:.2f}"
          f"   classifier error {m['pre']['model_error']:.3f} -> {m['post']['model_error']:.3f}")
    cost = moving_average([s["n_queried"] for s in log.steps])
    print("   moving-average cost every 100 steps:", np.round(cost[99::100], 2))
