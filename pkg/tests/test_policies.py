import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from online_consensus.datagen import SyntheticConfig, generate_stream
from online_consensus.harness import RunConfig, metrics, run_sequence
from online_consensus.policies import (
    EntropyPolicy,
    ModelPickerPolicy,
    RandomPolicy,
    ThresholdPolicy,
    ThresholdRegime,
    entropy_beta,
    make_policy,
    random_draw_count,
)
from online_consensus.prior import PriorParams, Regime


def rng(seed=0):
    return np.random.default_rng(seed)


def unit_alpha_params():
    # uniform f with theta=2, tau=1 and a vanishing phi gives alpha = [1, 1]
    return PriorParams(2.0, 1e-12, [1.0, 1.0])


# --------------------------------------------------------------------------
# threshold policy


def test_regime_properties():
    assert ThresholdRegime("FixedFin").inference is Regime.FINEXP
    assert ThresholdRegime("FixedInf").inference is Regime.INFEXP
    assert ThresholdRegime("InfExp").learns and not ThresholdRegime("FixedInf").learns


def test_rho_zero_commits_without_queries():
    f = np.array([0.2, 0.5, 0.3])
    for regime in ThresholdRegime:
        d = ThresholdPolicy(0.0, regime, 5).decide(np.zeros(3, dtype=int), f, rng())
        assert not d.query and 0.0 < d.acc <= 1.0


@pytest.mark.parametrize("rho, expect_query", [(0.8, False), (0.9, True)])
def test_five_sixths_threshold(rho, expect_query):
    pol = ThresholdPolicy(rho, "FinExp", 3, params=unit_alpha_params())
    d = pol.decide(np.array([1, 0]), np.array([0.5, 0.5]), rng(1))
    assert d.query is expect_query
    if not expect_query:
        assert d.label == 0 and d.acc == pytest.approx(5 / 6, abs=0.03)


def test_rho_one_stops_only_when_decided():
    pol = ThresholdPolicy(1.0, "FinExp", 5, params=PriorParams(2.0, 0.5, [1.0, 1.0]))
    f = np.array([0.5, 0.5])
    assert pol.decide(np.array([2, 0]), f, rng()).query
    d = pol.decide(np.array([3, 0]), f, rng())
    assert not d.query and d.label == 0 and d.acc == 1.0
    d = pol.decide(np.array([3, 2]), f, rng())
    assert not d.query and d.label == 0
    d = pol.decide(np.array([1, 1]), f, rng())
    assert d.query


def test_exhausted_tie_commits_to_a_tied_class():
    pol = ThresholdPolicy(1.0, "FixedFin", 4)
    labels = {pol.decide(np.array([2, 2, 0]), np.array([0.2, 0.3, 0.5]), rng(s)).label for s in range(40)}
    assert labels == {0, 1}


def test_threshold_validation():
    with pytest.raises(ValueError):
        ThresholdPolicy(1.5, "InfExp", 3)
    with pytest.raises(ValueError):
        ThresholdPolicy(0.5, "Bogus", 3)


def test_threshold_initial_params():
    p = ThresholdPolicy(0.5, "InfExp", 3)
    p.decide(np.zeros(3, dtype=int), np.full(3, 1 / 3), rng())
    assert p.params == PriorParams(1.0, 1.0, np.ones(3))
    p = ThresholdPolicy(0.5, "FinExp", 3)
    p.decide(np.zeros(3, dtype=int), np.full(3, 1 / 3), rng())
    assert p.params.theta == pytest.approx(0.1)
    p = ThresholdPolicy(0.5, "FixedInf", 3)
    p.decide(np.zeros(3, dtype=int), np.full(3, 1 / 3), rng())
    assert p.params == PriorParams.fixed(3)


def small_stream(seed, n=40):
    return generate_stream(SyntheticConfig(k=3, n_experts=5, n_samples=n, seed=seed))


@pytest.mark.parametrize("regime", ["FixedFin", "FixedInf"])
def test_fixed_regimes_never_change_params(regime):
    pol = ThresholdPolicy(0.9, regime, 5, mc_samples=256)
    run_sequence(small_stream(1), pol, RunConfig(5, refit_interval=5, seed=1))
    assert pol.params == PriorParams.fixed(3)


def test_learning_regime_refits():
    pol = ThresholdPolicy(0.9, "InfExp", 5, mc_samples=256)
    run_sequence(small_stream(2), pol, RunConfig(5, refit_interval=10, seed=2))
    assert pol.params != PriorParams(1.0, 1.0, np.ones(3))


def test_cost_is_monotone_in_rho():
    rhos = np.linspace(0.05, 0.95, 10)
    costs = []
    for rho in rhos:
        per_seed = []
        for seed in range(20):
            pol = ThresholdPolicy(rho, "FixedInf", 5, mc_samples=256)
            log = run_sequence(small_stream(seed, 15), pol, RunConfig(5, seed=seed))
            per_seed.append(metrics(log)["mean_cost"])
        costs.append(np.mean(per_seed))
    assert stats.spearmanr(rhos, costs).statistic >= 0.95


# --------------------------------------------------------------------------
# baselines


def test_random_draw_count():
    assert all(random_draw_count(0.0, 6, rng(s)) == 0 for s in range(20))
    assert all(random_draw_count(1.0, 6, rng(s)) == 6 for s in range(20))
    g = rng(3)
    draws = [random_draw_count(0.5, 6, g) for _ in range(100_000)]
    assert np.mean(draws) == pytest.approx(3.0, abs=0.02)
    with pytest.raises(ValueError):
        random_draw_count(1.2, 6, g)


def test_entropy_beta():
    assert entropy_beta([1.0, 0.0, 0.0], 5.0) == 0.0
    assert entropy_beta(np.full(10, 0.1), 1.0) == pytest.approx(math.log(10) / 10)
    assert entropy_beta(np.full(10, 0.1), 1.0) == pytest.approx(0.2303, abs=1e-4)
    assert entropy_beta(np.full(10, 0.1), 100.0) == 1.0
    with pytest.raises(ValueError):
        entropy_beta([0.5, 0.5], -1.0)


def test_model_picker_beta():
    k, scale = 4, 0.7
    mp = ModelPickerPolicy(scale, 6, k=k)
    f = np.eye(k)[0]
    assert mp.beta(f, rng()) == pytest.approx(min(1.0, scale * 4 * (1 / k) * (1 - 1 / k)))
    half = ModelPickerPolicy(1.0, 6, k=2)
    assert half.beta(np.array([0.5, 0.5]), rng()) == pytest.approx(1.0)
    confident = ModelPickerPolicy(1.0, 6, k=3)
    confident.losses = np.array([0.0, 500.0, 500.0])
    assert confident.beta(np.eye(3)[0], rng()) == pytest.approx(0.0, abs=1e-12)


def test_model_picker_update():
    mp = ModelPickerPolicy(1.0, 6, k=3)
    mp.finish(None, np.array([0, 2, 1]), 1, rng())
    assert np.array_equal(mp.losses, [1.0, 0.0, 1.0])
    mp.finish(None, np.array([0, 0, 0]), 2, rng())
    assert np.array_equal(mp.losses, [1.0, 0.0, 1.0])


def test_binomial_early_stop():
    pol = RandomPolicy(1.0, 5)
    pol.start(np.array([0.5, 0.5]), rng())
    assert pol.budget == 5
    f = np.array([0.5, 0.5])
    assert pol.decide(np.array([0, 0]), f, rng()).query
    assert pol.decide(np.array([2, 0]), f, rng()).query
    d = pol.decide(np.array([3, 0]), f, rng())
    assert not d.query and d.label == 0
    zero = RandomPolicy(0.0, 5)
    zero.start(f, rng())
    assert zero.decide(np.array([0, 0]), np.array([0.3, 0.7]), rng()).label == 1


@settings(max_examples=60, deadline=None)
@given(
    f=arrays(float, 4, elements=st.floats(0.0, 1.0)).filter(lambda v: v.sum() > 0).map(lambda v: v / v.sum()),
    scale=st.floats(0.0, 1000.0),
    losses=arrays(float, 4, elements=st.floats(0.0, 100.0)),
)
def test_betas_stay_in_unit_interval(f, scale, losses):
    assert 0.0 <= entropy_beta(f, scale) <= 1.0
    mp = ModelPickerPolicy(scale, 6, k=4)
    mp.losses = losses
    assert 0.0 <= mp.beta(f, rng()) <= 1.0


def test_make_policy():
    assert isinstance(make_policy("threshold", 0.5, 3, regime="FinExp"), ThresholdPolicy)
    assert isinstance(make_policy("random", 0.5, 3), RandomPolicy)
    assert isinstance(make_policy("entropy", 2.0, 3), EntropyPolicy)
    mp = make_policy("model_picker", 2.0, 3, eta=0.1)
    assert isinstance(mp, ModelPickerPolicy) and mp.eta == 0.1
    with pytest.raises(ValueError):
        make_policy("oracle", 1.0, 3)


@pytest.mark.parametrize(
    "policy",
    [
        lambda: ThresholdPolicy(1.0, "FixedInf", 5, mc_samples=128),
        lambda: RandomPolicy(1.0, 5),
        lambda: EntropyPolicy(1000.0, 5),
        lambda: ModelPickerPolicy(1000.0, 5),
    ],
)
def test_every_policy_terminates_within_pool(policy):
    log = run_sequence(small_stream(5, 30), policy(), RunConfig(5, seed=5))
    assert log.valid and len(log.steps) == 30
    assert all(0 <= s["n_queried"] <= 5 for s in log.steps)
