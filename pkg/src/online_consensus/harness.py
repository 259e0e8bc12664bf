"""Online replay of a vote stream against a querying policy.

Every random choice in a run is drawn from a generator seeded by
``(run seed, timestep, purpose, index)``. Two policies replayed on the same
stream and seed therefore see the same ground-truth tie-breaks and the
same order of expert votes, however many votes each of them buys.
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .distributions import draw_vote_without_replacement, random_argmax
from .exceptions import CorrelationUndefinedError, EmptyPoolError
from .likelihood import ObservationRecord, WindowDataset

logger = logging.getLogger(__name__)

BUDGETS = (0.5, 1.0, 2.0, 3.0)
MOVING_AVERAGE_WINDOW = 100

# purpose codes for per-timestep generators
_TRUTH, _START, _DECIDE, _VOTE, _FINISH, _REFIT, _FREE = range(7)


def step_rng(seed, t, purpose, index=0):
    return np.random.default_rng([int(seed), int(t), purpose, int(index)])


@dataclass
class RunConfig:
    """Replay settings.

    ``window=None`` keeps every record for refits. ``mc_samples``, when
    set, overrides the policy's Monte-Carlo sample count for its posterior.
    """

    pool_size: int
    window: int = 500
    refit_interval: int = 20
    mc_samples: int = None
    phase_boundary: int = 1000
    shift_boundary: int = 1200
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 1 or self.refit_interval < 1:
            raise ValueError("pool_size and refit_interval must be positive")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be positive or None")


@dataclass
class EpisodeLog:
    steps: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    valid: bool = True
    final_params: dict = None

    @property
    def cost(self):
        return self.steps[-1]["cost"] if self.steps else 0

    def summary(self, boundary=None):
        out = metrics(self, boundary)
        out.pop("error_moving_average")
        out.pop("cost_moving_average")
        out.update(valid=self.valid, final_params=self.final_params, metadata=self.metadata)
        return out

    def to_jsonl(self, boundary=None):
        lines = [json.dumps(s, sort_keys=True) for s in self.steps]
        lines.append(json.dumps({"summary": self.summary(boundary)}, sort_keys=True))
        return "\n".join(lines) + "\n"

    def write(self, path, boundary=None):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_jsonl(boundary))

    @classmethod
    def read(cls, path):
        steps, summary = [], {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                rec = json.loads(line)
                if "summary" in rec:
                    summary = rec["summary"]
                else:
                    steps.append(rec)
        return cls(steps, summary.get("metadata", {}), summary.get("valid", True), summary.get("final_params"))


def ground_truth(sample, rng, k=None):
    """Plurality of the full vote pool, ties broken uniformly at random."""
    return random_argmax(sample.histogram(k), rng)


def _params_hash(policy):
    params = getattr(policy, "params", None)
    if params is None:
        return None
    return hashlib.sha256(params.as_vector().tobytes()).hexdigest()[:16]


def _play(sample, t, policy, seed, k, allow_queries=True):
    """Run one sample to commitment; returns (decision, queried votes)."""
    f = sample.f
    votes = np.zeros(k, dtype=np.int64)
    if not allow_queries:
        return policy.predict_without_votes(f, step_rng(seed, t, _FREE)), votes
    remaining = sample.histogram(k).copy()
    policy.start(f, step_rng(seed, t, _START))
    for i in range(len(sample.vote_pool) + 1):
        decision = policy.decide(votes, f, step_rng(seed, t, _DECIDE, i))
        if not decision.query:
            policy.finish(f, votes, decision.label, step_rng(seed, t, _FINISH))
            return decision, votes
        c = draw_vote_without_replacement(remaining, step_rng(seed, t, _VOTE, i))
        remaining[c] -= 1
        votes[c] += 1
    raise EmptyPoolError(f"policy kept querying an exhausted pool at t={t}")


def _replay(stream, policy, cfg, free_from=None, window_capacity=None):
    if not stream:
        raise ValueError("stream is empty")
    k = stream[0].f.size
    if cfg.mc_samples is not None and hasattr(policy, "mc_samples"):
        policy.mc_samples = int(cfg.mc_samples)
    window = WindowDataset(cfg.pool_size, window_capacity)
    log = EpisodeLog(metadata={"seed": cfg.seed, "run_config": asdict(cfg), **policy.describe()})
    cost = 0
    for t, sample in enumerate(stream):
        if len(sample.vote_pool) != cfg.pool_size:
            raise ValueError(f"sample {sample.id} has {len(sample.vote_pool)} votes, expected {cfg.pool_size}")
        free = free_from is not None and t >= free_from
        if free and t == free_from and policy.learns and len(window):
            policy.refit(window, step_rng(cfg.seed, t, _REFIT))
        truth = ground_truth(sample, step_rng(cfg.seed, t, _TRUTH), k)
        try:
            decision, votes = _play(sample, t, policy, cfg.seed, k, allow_queries=not free)
        except Exception:
            logger.exception("policy failed at t=%d; returning partial log", t)
            log.valid = False
            break
        n = int(votes.sum())
        cost += n
        hist = sample.histogram(k)
        tied = np.flatnonzero(hist == hist.max())
        log.steps.append(
            {
                "t": t,
                "id": sample.id,
                "n_queried": n,
                "votes": votes.tolist(),
                "prediction": decision.label,
                "model_prediction": int(np.argmax(sample.f)),
                "ground_truth": truth,
                "correct": decision.label == truth,
                "expected_correct": 1.0 / len(tied) if decision.label in tied else 0.0,
                "cost": cost,
                "acc": None if np.isnan(decision.acc) else decision.acc,
                "theta_hash": _params_hash(policy),
                "phase": "free" if free else "query",
            }
        )
        if n >= 1 and not free:
            window.add(ObservationRecord(sample.f, votes))
        if policy.learns and not free and (t + 1) % cfg.refit_interval == 0:
            policy.refit(window, step_rng(cfg.seed, t, _REFIT))
    params = getattr(policy, "params", None)
    log.final_params = None if params is None else params.to_dict()
    return log


def run_sequence(stream, policy, cfg):
    """Replay ``stream`` with querying allowed throughout.

    Learning policies refit their prior every ``cfg.refit_interval``
    samples on a sliding window of the last ``cfg.window`` samples that
    received at least one vote.
    """
    return _replay(stream, policy, cfg, window_capacity=cfg.window)


def run_two_phase(stream, policy, cfg):
    """Query normally before ``cfg.phase_boundary``, then never again.

    Phase one learns on every record seen (no sliding window). At the
    boundary the prior is refit once more and frozen; phase-two
    predictions use the posterior with no votes.
    """
    if not 0 <= cfg.phase_boundary <= len(stream):
        raise ValueError("phase boundary lies outside the stream")
    return _replay(stream, policy, cfg, free_from=cfg.phase_boundary, window_capacity=None)


# --------------------------------------------------------------------------
# metrics


def budget_bucket(mean_cost):
    """Budget target within 10% of ``mean_cost``, as a label, or None."""
    for b in BUDGETS:
        if abs(mean_cost - b) <= 0.1 * b + 1e-12:
            return f"{b:g}"
    return None


def moving_average(x, window=MOVING_AVERAGE_WINDOW):
    """Trailing simple moving average (shorter at the start of the series)."""
    x = np.asarray(x, dtype=float)
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(1, len(x) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def _error_summary(steps):
    if not steps:
        return {"error_rate": None, "tie_adjusted_error": None, "mean_cost": None, "model_error": None, "n": 0}
    correct = np.array([s["correct"] for s in steps], dtype=float)
    expected = np.array([s["expected_correct"] for s in steps])
    cost = np.array([s["n_queried"] for s in steps], dtype=float)
    model = np.array([s["model_prediction"] == s["ground_truth"] for s in steps], dtype=float)
    return {
        "error_rate": float(1.0 - correct.mean()),
        "tie_adjusted_error": float(1.0 - expected.mean()),
        "mean_cost": float(cost.mean()),
        "model_error": float(1.0 - model.mean()),
        "n": len(steps),
    }


def metrics(log, boundary=None):
    """Error and cost summary of a run.

    ``error_rate`` scores predictions against the sampled ground truth.
    ``tie_adjusted_error`` instead credits a prediction with ``1/m`` when it
    is one of ``m`` classes tied for the full-pool plurality, which removes
    tie-break noise from comparisons. With ``boundary`` set, the same
    numbers are also reported before and after that timestep.
    """
    steps = log.steps
    out = _error_summary(steps)
    out["bucket"] = None if out["mean_cost"] is None else budget_bucket(out["mean_cost"])
    out["total_cost"] = int(log.cost)
    errors = [1.0 - float(s["correct"]) for s in steps]
    out["error_moving_average"] = moving_average(errors).tolist() if steps else []
    out["cost_moving_average"] = moving_average([s["n_queried"] for s in steps]).tolist() if steps else []
    if boundary is not None:
        out["pre"] = _error_summary([s for s in steps if s["t"] < boundary])
        out["post"] = _error_summary([s for s in steps if s["t"] >= boundary])
        out["boundary"] = int(boundary)
    return out


def tie_floor(stream, k=None):
    """Expected error of a predictor that knows every full-pool histogram."""
    loss = 0.0
    for s in stream:
        h = s.histogram(k)
        loss += 1.0 - 1.0 / np.count_nonzero(h == h.max())
    return loss / len(stream)


def per_class_model_accuracy(log, k):
    """Accuracy of the classifier's argmax against consensus, per consensus class."""
    truth = np.array([s["ground_truth"] for s in log.steps])
    model = np.array([s["model_prediction"] for s in log.steps])
    out = np.full(k, np.nan)
    for c in range(k):
        mask = truth == c
        if mask.any():
            out[c] = np.mean(model[mask] == c)
    return out


def tau_accuracy_correlation(theta_star, per_class_acc):
    """Pearson correlation between learned ``tau`` and per-class accuracy."""
    tau = np.asarray(theta_star.tau, dtype=float)
    acc = np.asarray(per_class_acc, dtype=float)
    if tau.size < 3 or tau.size != acc.size:
        raise ValueError("need matching vectors with at least three classes")
    if np.ptp(tau) == 0 or np.ptp(acc) == 0:
        raise CorrelationUndefinedError("correlation is undefined for a constant vector")
    return float(np.corrcoef(tau, acc)[0, 1])


def find_budget_run(run_at, target, lo=0.0, hi=1.0, max_steps=14):
    """Bisect a cost-monotone hyperparameter until a run lands in a budget bucket.

    ``run_at(value)`` replays the stream and returns its :class:`EpisodeLog`.
    Returns ``(value, log)`` for the first run within 10% of ``target``, or
    ``None`` if bisection runs out of steps.
    """
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        log = run_at(mid)
        cost = metrics(log)["mean_cost"]
        if abs(cost - target) <= 0.1 * target:
            return mid, log
        if cost < target:
            lo = mid
        else:
            hi = mid
    return None
