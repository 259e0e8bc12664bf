"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the lines are
also collected in the "acceptance criteria" section of the summary.
"""

import math
import time

import numpy as np
import pytest

from online_consensus.datagen import SyntheticConfig, diagonal_confusion, generate_prior_stream, generate_stream
from online_consensus.distributions import (
    dirmult_logpmf,
    enumerate_counts,
    multinomial_logpmf,
    mv_hypergeo_logpmf,
)
from online_consensus.harness import (
    RunConfig,
    find_budget_run,
    metrics,
    per_class_model_accuracy,
    run_sequence,
    run_two_phase,
    tau_accuracy_correlation,
    tie_floor,
)
from online_consensus.inference import (
    consensus_posterior_exact_finexp,
    consensus_posterior_finexp,
    consensus_posterior_infexp,
)
from online_consensus.likelihood import (
    ObservationRecord,
    WindowDataset,
    finexp_loglik_exact,
    finexp_loglik_is,
    map_gradient,
    map_loss,
    proposal_logpmf,
)
from online_consensus.policies import RandomPolicy, ThresholdPolicy
from online_consensus.prior import HyperPriorConfig, PriorParams, Regime

pytestmark = pytest.mark.slow


def random_params(g, k):
    return PriorParams(g.uniform(0.5, 5.0), g.uniform(0.1, 2.0), g.uniform(0.5, 2.0, size=k))


def miscalibrated(seed, n_samples, n_experts=6):
    # per-class temperatures spanning [0.3, 3]
    cfg = SyntheticConfig(
        k=5, n_experts=n_experts, n_samples=n_samples, temperatures=np.geomspace(0.3, 3.0, 5), seed=seed
    )
    return generate_stream(cfg)


# --------------------------------------------------------------------------
# 1. importance sampling against exhaustive enumeration


def test_importance_sampling_matches_enumeration(criterion):
    start = time.perf_counter()
    g = np.random.default_rng(1)
    worst, count = 0.0, 0
    for k in (2, 3):
        for pool in range(1, 7):
            for n in range(1, pool + 1):
                for votes in enumerate_counts(n, k):
                    rec = ObservationRecord(g.dirichlet(np.ones(k)), votes)
                    params = random_params(g, k)
                    exact = finexp_loglik_exact(rec, params, pool)
                    est = finexp_loglik_is(rec, params, pool, 100_000, g)
                    worst = max(worst, abs(math.expm1(est - exact)))
                    count += 1
    elapsed = time.perf_counter() - start
    criterion(1, worst < 0.02 and elapsed < 30, f"{count} records, max relative error {worst:.4f}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 2. finite pool converges to the infinite-pool posterior


def test_finite_pool_limit(criterion):
    start = time.perf_counter()
    alpha, votes = np.array([1.0, 1.5, 0.8]), np.array([2, 1, 0])
    m = 200_000
    inf = consensus_posterior_infexp(votes, alpha, m, np.random.default_rng(2)).probs
    gaps = {}
    for pool in (50, 500):
        fin = consensus_posterior_finexp(votes, alpha, pool, m, np.random.default_rng(3)).probs
        gaps[pool] = float(np.max(np.abs(fin - inf)))
    elapsed = time.perf_counter() - start
    ok = gaps[50] <= 0.05 and gaps[500] <= 0.02 and elapsed < 60
    criterion(2, ok, f"gap N=50 {gaps[50]:.4f}, N=500 {gaps[500]:.4f}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 3. hand-enumerated posterior


def test_hand_enumerated_posterior(criterion):
    exact = consensus_posterior_exact_finexp([1, 0], [1.0, 1.0], 3).probs[0]
    mc = consensus_posterior_finexp([1, 0], [1.0, 1.0], 3, 100_000, np.random.default_rng(4)).probs[0]
    ok = abs(exact - 5 / 6) < 1e-12 and abs(mc - 5 / 6) <= 0.01
    criterion(3, ok, f"exact {exact:.15f}, Monte-Carlo {mc:.4f}, target {5 / 6:.6f}")


# --------------------------------------------------------------------------
# 4. analytic gradient against central differences


def test_gradient_against_finite_differences(criterion):
    start = time.perf_counter()
    hyper = HyperPriorConfig.default(Regime.INFEXP)
    g = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        k = int(g.integers(2, 6))
        pool = int(g.integers(1, 8))
        records = []
        for _ in range(int(g.integers(1, 40))):
            n = int(g.integers(1, pool + 1))
            records.append(ObservationRecord(g.dirichlet(np.ones(k)), g.multinomial(n, g.dirichlet(np.ones(k)))))
        data = WindowDataset.from_records(records, pool)
        params = random_params(g, k)
        x = params.to_log_vector()
        grad = map_gradient(params, data, hyper)
        fd = np.zeros_like(x)
        for i in range(x.size):
            e = np.zeros_like(x)
            e[i] = 1e-6
            up = map_loss(PriorParams.from_log_vector(x + e), data, hyper)
            down = map_loss(PriorParams.from_log_vector(x - e), data, hyper)
            fd[i] = (up - down) / 2e-6
        worst = max(worst, np.linalg.norm(grad - fd) / np.linalg.norm(fd))
    elapsed = time.perf_counter() - start
    criterion(4, worst < 1e-4 and elapsed < 60, f"50 windows, max relative error {worst:.2e}, {elapsed:.1f}s")


# --------------------------------------------------------------------------
# 5. every pmf sums to one


def test_pmf_normalization(criterion):
    g = np.random.default_rng(6)
    worst, checks = 0.0, 0

    def check(log_terms):
        nonlocal worst, checks
        worst = max(worst, abs(math.fsum(np.exp(np.asarray(log_terms, float))) - 1.0))
        checks += 1

    for k in range(2, 5):
        for n in range(0, 9):
            xs = enumerate_counts(n, k)
            alpha = g.uniform(0.2, 3.0, size=k)
            p = g.dirichlet(np.ones(k))
            check(multinomial_logpmf(xs, n, p))
            check(dirmult_logpmf(xs, n, alpha))
            # the importance proposal over completions of a partial histogram
            for votes in enumerate_counts(min(n, 3), k):
                check(proposal_logpmf(votes + enumerate_counts(n, k), votes, n + int(votes.sum())))
            # hypergeometric sub-histograms of a full pool, every draw size
            total = g.multinomial(8, p)
            for d in range(9):
                subs = [s for s in enumerate_counts(d, k) if np.all(s <= total)]
                check(mv_hypergeo_logpmf(np.array(subs), np.broadcast_to(total, (len(subs), k)), d))
            # the finite-pool likelihood is a distribution over observed votes
            params = random_params(g, k)
            f = g.dirichlet(np.ones(k))
            for m in range(1, min(n, 4) + 1):
                check([finexp_loglik_exact(ObservationRecord(f, v), params, n) for v in enumerate_counts(m, k)])
    criterion(5, worst <= 1e-9, f"{checks} supports, max |sum - 1| {worst:.1e}")


# --------------------------------------------------------------------------
# 6. calibration of the reported expected accuracy


def test_expected_accuracy_is_calibrated(criterion):
    start = time.perf_counter()
    params = PriorParams.fixed(5)
    stream = generate_prior_stream(SyntheticConfig(k=5, n_experts=7, n_samples=10_000, seed=11), params)
    parts, ok = [], True
    for i, rho in enumerate((0.7, 0.8, 0.9)):
        policy = ThresholdPolicy(rho, "FixedFin", 7, mc_samples=1024)
        log = run_sequence(stream, policy, RunConfig(7, seed=20 + i))
        sel = [s for s in log.steps if s["acc"] is not None and rho <= s["acc"] <= rho + 0.05]
        acc = float(np.mean([s["correct"] for s in sel]))
        ok &= acc >= rho - 0.03
        parts.append(f"rho {rho}: {acc:.3f} over {len(sel)}")
    elapsed = time.perf_counter() - start
    criterion(6, ok and elapsed < 600, "; ".join(parts) + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 7. threshold policy beats Random at matched budgets


def test_threshold_dominates_random(criterion):
    start = time.perf_counter()
    budgets, n_seeds, pool = (0.5, 1.0, 2.0), 10, 6
    results = {b: {"threshold": [], "random": []} for b in budgets}
    for seed in range(n_seeds):
        stream = miscalibrated(100 + seed, 400)
        for b in budgets:
            # acc moves in steps of 1/M; coarse M leaves cost gaps wider than a bucket near rho = 1
            th = find_budget_run(
                lambda rho: run_sequence(stream, ThresholdPolicy(rho, "InfExp", pool, mc_samples=1024), RunConfig(pool, seed=seed)),
                b,
            )
            rn = find_budget_run(lambda beta: run_sequence(stream, RandomPolicy(beta, pool), RunConfig(pool, seed=seed)), b)
            for name, found in (("threshold", th), ("random", rn)):
                results[b][name].append(None if found is None else metrics(found[1]))
    ok, parts = True, []
    for b in budgets:
        runs = results[b]
        if any(m is None for m in runs["threshold"] + runs["random"]):
            ok = False
            parts.append(f"{b:g}: bucket not reached")
            continue
        mean = {name: {key: np.mean([m[key] for m in ms]) for key in ("error_rate", "tie_adjusted_error", "mean_cost")} for name, ms in runs.items()}
        ok &= mean["threshold"]["error_rate"] < mean["random"]["error_rate"]
        ok &= mean["threshold"]["tie_adjusted_error"] < mean["random"]["tie_adjusted_error"]
        parts.append(
            f"{b:g}: {mean['threshold']['error_rate']:.3f} vs {mean['random']['error_rate']:.3f}"
            f" (cost {mean['threshold']['mean_cost']:.2f}/{mean['random']['mean_cost']:.2f})"
        )
    elapsed = time.perf_counter() - start
    criterion(7, ok and elapsed < 1200, "threshold vs random error, " + "; ".join(parts) + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 8. learned tau tracks per-class classifier accuracy


def test_tau_tracks_class_accuracy(criterion):
    start = time.perf_counter()
    parts, ok = [], True
    for regime in ("InfExp", "FinExp"):
        corr, costs = [], []
        for seed in range(3):
            # per-class accuracy from 0.3 to 0.95; less accurate classes are also overconfident
            cfg = SyntheticConfig(
                k=5, n_experts=6, n_samples=1000, seed=seed,
                confusion=diagonal_confusion(np.linspace(0.3, 0.95, 5)), temperatures=np.geomspace(0.5, 2.0, 5),
            )
            policy = ThresholdPolicy(0.95, regime, 6, mc_samples=256)
            log = run_sequence(generate_stream(cfg), policy, RunConfig(6, seed=seed))
            corr.append(tau_accuracy_correlation(policy.params, per_class_model_accuracy(log, 5)))
            costs.append(metrics(log)["mean_cost"])
        ok &= min(corr) >= 0.5 and min(costs) >= 1.0
        parts.append(f"{regime} pearson {', '.join(f'{c:.2f}' for c in corr)} (cost >= {min(costs):.2f})")
    elapsed = time.perf_counter() - start
    criterion(8, ok and elapsed < 600, "; ".join(parts) + f"; {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 9. query-free second phase beats the raw classifier


def test_two_phase_gain(criterion):
    start = time.perf_counter()
    gains = []
    for seed in range(10):
        stream = miscalibrated(200 + seed, 2000)
        policy = ThresholdPolicy(0.9, "InfExp", 6, mc_samples=512)
        log = run_two_phase(stream, policy, RunConfig(6, phase_boundary=1000, seed=seed))
        post = log.steps[1000:]
        ours = np.mean([s["correct"] for s in post])
        raw = np.mean([s["model_prediction"] == s["ground_truth"] for s in post])
        gains.append(100 * (ours - raw))
    elapsed = time.perf_counter() - start
    gain = float(np.mean(gains))
    criterion(9, gain >= 0.5 and elapsed < 600, f"mean gain {gain:.2f} points (min {min(gains):.2f}), {elapsed:.0f}s")


# --------------------------------------------------------------------------
# 10. exhaustive querying reaches the tie floor


def test_exhaustive_policies_hit_tie_floor(criterion):
    parts, ok = [], True
    for seed in range(3):
        stream = miscalibrated(300 + seed, 300)
        floor = tie_floor(stream)
        for name, policy in (
            ("rho=1 InfExp", ThresholdPolicy(1.0, "InfExp", 6, mc_samples=128)),
            ("rho=1 FinExp", ThresholdPolicy(1.0, "FinExp", 6, mc_samples=128)),
            ("beta=1 Random", RandomPolicy(1.0, 6)),
        ):
            err = metrics(run_sequence(stream, policy, RunConfig(6, seed=seed)))["tie_adjusted_error"]
            ok &= abs(err - floor) <= 1e-12
            if seed == 0:
                parts.append(f"{name} {err:.4f}")
        if seed == 0:
            parts.append(f"floor {floor:.4f}")
    criterion(10, ok, "seed 0: " + ", ".join(parts) + "; 3 seeds checked")


# --------------------------------------------------------------------------
# 11. determinism


def test_runs_are_byte_identical(criterion, tmp_path):
    stream = miscalibrated(400, 200)
    runs = [
        lambda: run_sequence(stream, ThresholdPolicy(0.8, "InfExp", 6, mc_samples=128), RunConfig(6, refit_interval=25, seed=1)),
        lambda: run_sequence(stream, ThresholdPolicy(0.8, "FinExp", 6, mc_samples=128), RunConfig(6, refit_interval=50, seed=2)),
        lambda: run_two_phase(stream, ThresholdPolicy(0.9, "InfExp", 6, mc_samples=128), RunConfig(6, phase_boundary=100, seed=3)),
        lambda: run_sequence(stream, RandomPolicy(0.4, 6), RunConfig(6, seed=4)),
    ]
    ok = True
    for i, run in enumerate(runs):
        a, b = tmp_path / f"a{i}.jsonl", tmp_path / f"b{i}.jsonl"
        run().write(a)
        run().write(b)
        ok &= a.read_bytes() == b.read_bytes()
    criterion(11, ok, f"{len(runs)} configurations replayed twice, logs identical: {ok}")
