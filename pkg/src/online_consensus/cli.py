"""Experiment driver: synthetic data, single runs, sweeps and reports.

Usage::

    online-consensus synth  --config exp.json --out data.csv
    online-consensus run    --config exp.json --policy threshold --rho 0.9 --out results/
    online-consensus sweep  --config exp.json --out results/
    online-consensus report --points results/points.csv --logs results/logs --out results/

The configuration file is JSON. Every key is optional::

    {
      "dataset": null,                 # path to a dataset file, or null
      "synthetic": {"k": 5, ...},      # SyntheticConfig fields, used without a dataset
      "noisy": {"sharpness": 1.0},     # overrides for the second half in shift mode
      "policy": "threshold",           # threshold | random | entropy | model_picker
      "value": 0.9,                    # the policy's swept hyperparameter
      "grid": [0.5, 0.9],              # sweep grid for "value"
      "regime": "InfExp",              # FinExp | InfExp | FixedFin | FixedInf
      "seeds": [3, 4, 5],
      "mode": "standard",              # standard | two-phase | shift
      "experts": null,                 # keep this many experts per sample
      "run": {"window": 500, "refit_interval": 20, "mc_samples": null,
              "phase_boundary": 1000, "shift_boundary": 1200},
      "hyperprior": null,              # HyperPriorConfig fields
      "optimizer": {},                 # OptimizerConfig fields
      "eta": 0.3,                      # Model Picker learning rate
      "workers": 1
    }

Command-line flags override the file. Environment variables are never read.
"""

import argparse
import copy
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .datagen import (
    StreamSample,
    SyntheticConfig,
    generate_stream,
    load_dataset,
    make_shift_stream,
    shuffle_stream,
    subsample_experts,
    write_dataset,
)
from .exceptions import CorrelationUndefinedError, DatasetError
from .harness import (
    BUDGETS,
    EpisodeLog,
    RunConfig,
    budget_bucket,
    metrics,
    per_class_model_accuracy,
    run_sequence,
    run_two_phase,
    tau_accuracy_correlation,
)
from .likelihood import OptimizerConfig
from .policies import POLICY_KINDS, ThresholdRegime, make_policy
from .prior import HyperPriorConfig, PriorParams

logger = logging.getLogger(__name__)

MODES = ("standard", "two-phase", "shift")
# sweep ranges per policy kind
VALUE_RANGES = {"threshold": (0.0, 1.0), "random": (0.0, 1.0), "entropy": (0.0, 1000.0), "model_picker": (0.0, 1000.0)}
POINT_FIELDS = [
    "policy",
    "regime",
    "value",
    "seed",
    "mode",
    "mean_cost",
    "error_rate",
    "tie_adjusted_error",
    "model_error",
    "bucket",
    "pre_error",
    "post_error",
    "log",
    "error",
]


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    dataset: str = None
    synthetic: dict = field(default_factory=dict)
    noisy: dict = field(default_factory=lambda: {"sharpness": 1.0})
    policy: str = "threshold"
    value: float = 0.9
    grid: list = None
    regime: str = "InfExp"
    seeds: list = field(default_factory=lambda: [0])
    mode: str = "standard"
    experts: int = None
    run: dict = field(default_factory=dict)
    hyperprior: dict = None
    optimizer: dict = field(default_factory=dict)
    eta: float = 0.3
    workers: int = 1

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**copy.deepcopy(d))

    def validate(self):
        if self.policy not in POLICY_KINDS:
            raise ConfigError(f"policy must be one of {POLICY_KINDS}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        lo, hi = VALUE_RANGES[self.policy]
        for v in self.values():
            if not lo <= v <= hi:
                raise ConfigError(f"{self.policy} hyperparameter {v} outside [{lo:g}, {hi:g}]")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        return self

    def values(self):
        return [float(v) for v in (self.grid if self.grid is not None else [self.value])]


# --------------------------------------------------------------------------
# building streams and runs


def _synthetic(cfg, overrides=None):
    params = dict(cfg.synthetic)
    params.update(overrides or {})
    if cfg.experts is not None:
        params["n_experts"] = cfg.experts
    try:
        return SyntheticConfig.from_dict(params)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from None


def base_stream(cfg):
    """The unshuffled stream for standard and two-phase runs."""
    if cfg.dataset:
        samples, _, n = load_dataset(cfg.dataset)
        if cfg.experts is not None and cfg.experts != n:
            samples = subsample_experts(samples, cfg.experts, 0)
        return samples
    return generate_stream(_synthetic(cfg))


def _run_config(cfg, seed, pool_size):
    try:
        return RunConfig(pool_size=pool_size, seed=seed, **cfg.run)
    except TypeError as exc:
        raise ConfigError(f"bad run config: {exc}") from None


def build_stream(cfg, seed, base=None):
    """The stream a run with ``seed`` replays, plus the boundary to report."""
    if cfg.mode == "shift":
        if cfg.dataset:
            raise ConfigError("shift mode builds its own stream from the synthetic config")
        rc = _run_config(cfg, seed, 1)
        size = {"n_samples": rc.shift_boundary}
        clean = generate_stream(_synthetic(cfg, size))
        noisy = generate_stream(_synthetic(cfg, {**cfg.noisy, **size, "seed": _synthetic(cfg).seed + 1}))
        noisy = [StreamSample(f"n{s.id}", s.f, s.vote_pool) for s in noisy]
        return make_shift_stream(clean, noisy, seed), rc.shift_boundary
    stream = shuffle_stream(base if base is not None else base_stream(cfg), seed)
    boundary = _run_config(cfg, seed, 1).phase_boundary if cfg.mode == "two-phase" else None
    return stream, boundary


def build_policy(cfg, value, pool_size):
    kw = {}
    if cfg.policy == "threshold":
        if cfg.hyperprior is not None:
            regime = ThresholdRegime(cfg.regime).inference
            kw["hyper"] = HyperPriorConfig.from_dict({"regime": regime, **cfg.hyperprior})
        kw["optimizer"] = OptimizerConfig(**cfg.optimizer)
    elif cfg.policy == "model_picker":
        kw["eta"] = cfg.eta
    return make_policy(cfg.policy, value, pool_size, regime=cfg.regime, **kw)


def log_name(cfg, value, seed):
    regime = cfg.regime if cfg.policy == "threshold" else "na"
    return f"{cfg.policy}_{regime}_{value:g}_seed{seed}_{cfg.mode}.jsonl"


def execute(cfg, value, seed, base=None):
    """Run one (value, seed) combination; returns ``(log, boundary)``."""
    stream, boundary = build_stream(cfg, seed, base)
    pool_size = len(stream[0].vote_pool)
    policy = build_policy(cfg, value, pool_size)
    rc = _run_config(cfg, seed, pool_size)
    if cfg.mode == "two-phase":
        log = run_two_phase(stream, policy, rc)
    else:
        log = run_sequence(stream, policy, rc)
    log.metadata.update(mode=cfg.mode, value=value, regime=cfg.regime if cfg.policy == "threshold" else None)
    return log, boundary


def point_row(cfg, value, seed, log, boundary, path):
    m = metrics(log, boundary)
    return {
        "policy": cfg.policy,
        "regime": cfg.regime if cfg.policy == "threshold" else "",
        "value": f"{value:g}",
        "seed": seed,
        "mode": cfg.mode,
        "mean_cost": _fmt(m["mean_cost"]),
        "error_rate": _fmt(m["error_rate"]),
        "tie_adjusted_error": _fmt(m["tie_adjusted_error"]),
        "model_error": _fmt(m["model_error"]),
        "bucket": m["bucket"] or "",
        "pre_error": _fmt(m["pre"]["error_rate"]) if boundary is not None else "",
        "post_error": _fmt(m["post"]["error_rate"]) if boundary is not None else "",
        "log": os.path.basename(path),
        "error": "" if log.valid else "policy failure; partial log",
    }


def _fmt(x):
    return "" if x is None else repr(float(x))


# --------------------------------------------------------------------------
# commands


def load_config(args):
    d = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    cfg = ExperimentConfig.from_dict(d)
    if getattr(args, "policy", None):
        cfg.policy = args.policy
    for flag in ("rho", "beta", "scale"):
        v = getattr(args, flag, None)
        if v is not None:
            cfg.value = v
            cfg.grid = None if args.command == "run" else cfg.grid
    if getattr(args, "seed", None) is not None:
        cfg.seeds = [args.seed]
    if getattr(args, "experts", None) is not None:
        cfg.experts = args.experts
    if getattr(args, "mc", None) is not None:
        cfg.run = {**cfg.run, "mc_samples": args.mc}
    if getattr(args, "window", None) is not None:
        cfg.run = {**cfg.run, "window": args.window}
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "regime", None):
        cfg.regime = args.regime
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    return cfg.validate()


def cmd_synth(args):
    cfg = load_config(args)
    if args.seed is not None:
        cfg.synthetic = {**cfg.synthetic, "seed": args.seed}
    samples = base_stream(cfg)
    write_dataset(args.out, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_run(args):
    cfg = load_config(args)
    os.makedirs(args.out, exist_ok=True)
    for seed in cfg.seeds:
        value = cfg.values()[0]
        log, boundary = execute(cfg, value, seed)
        path = os.path.join(args.out, log_name(cfg, value, seed))
        log.write(path, boundary)
        m = metrics(log, boundary)
        line = f"{cfg.policy} value={value:g} seed={seed} error={m['error_rate']:.4f} cost={m['mean_cost']:.4f}"
        if boundary is not None:
            line += f" pre_error={m['pre']['error_rate']:.4f} post_error={m['post']['error_rate']:.4f}"
        print(line if log.valid else line + " INVALID")
        if not log.valid:
            return 1
    return 0


def cmd_sweep(args):
    cfg = load_config(args)
    log_dir = os.path.join(args.out, "logs")
    os.makedirs(log_dir, exist_ok=True)
    base = None if cfg.mode == "shift" else base_stream(cfg)
    jobs = [(v, s) for v in cfg.values() for s in cfg.seeds]

    def one(job):
        value, seed = job
        path = os.path.join(log_dir, log_name(cfg, value, seed))
        try:
            log, boundary = execute(cfg, value, seed, base)
        except Exception as exc:  # recorded per row
            logger.exception("run value=%g seed=%d failed", value, seed)
            row = {k: "" for k in POINT_FIELDS}
            row.update(policy=cfg.policy, value=f"{value:g}", seed=seed, mode=cfg.mode, error=str(exc) or type(exc).__name__)
            return row
        log.write(path, boundary)
        return point_row(cfg, value, seed, log, boundary, path)

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        rows = list(pool.map(one, jobs))
    points = os.path.join(args.out, "points.csv")
    _write_csv(points, POINT_FIELDS, rows)
    failed = sum(1 for r in rows if r["error"])
    print(f"wrote {len(rows)} points to {points} ({failed} failed)")
    return 0


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _mean_se(xs):
    if not xs:
        return "NA", "NA"
    mean = float(np.mean(xs))
    if len(xs) < 2:
        return repr(mean), "NA"
    return repr(mean), repr(float(np.std(xs, ddof=1) / math.sqrt(len(xs))))


def bucket_table(rows):
    """Error mean and standard error per (policy, regime, budget bucket)."""
    groups = sorted({(r["policy"], r["regime"]) for r in rows})
    out = []
    for policy, regime in groups:
        for b in BUDGETS:
            label = f"{b:g}"
            sel = [
                r
                for r in rows
                if (r["policy"], r["regime"]) == (policy, regime)
                and not r["error"]
                and r["mean_cost"]
                and budget_bucket(float(r["mean_cost"])) == label
            ]
            mean, se = _mean_se([float(r["error_rate"]) for r in sel])
            cost, _ = _mean_se([float(r["mean_cost"]) for r in sel])
            out.append(
                {"policy": policy, "regime": regime, "bucket": label, "n_runs": len(sel), "error_mean": mean, "error_se": se, "cost_mean": cost}
            )
    return out


def shift_table(rows):
    """Pre- and post-boundary errors per (policy, regime, value)."""
    keyed = {}
    for r in rows:
        if r["error"] or not r["pre_error"]:
            continue
        keyed.setdefault((r["policy"], r["regime"], r["value"]), []).append(r)
    out = []
    for (policy, regime, value), sel in sorted(keyed.items(), key=lambda kv: (kv[0][0], kv[0][1], float(kv[0][2]))):
        pre, pre_se = _mean_se([float(r["pre_error"]) for r in sel])
        post, post_se = _mean_se([float(r["post_error"]) for r in sel])
        cost, _ = _mean_se([float(r["mean_cost"]) for r in sel])
        out.append(
            {"policy": policy, "regime": regime, "value": value, "n_runs": len(sel), "cost_mean": cost,
             "pre_error_mean": pre, "pre_error_se": pre_se, "post_error_mean": post, "post_error_se": post_se}
        )
    return out


def tau_table(log_dir):
    """Pearson correlation of learned tau with per-class classifier accuracy."""
    out = []
    for name in sorted(os.listdir(log_dir)):
        if not name.endswith(".jsonl"):
            continue
        log = EpisodeLog.read(os.path.join(log_dir, name))
        fp = log.final_params
        if not fp or not log.steps:
            continue
        params = PriorParams(fp["theta"], fp["phi"], np.asarray(fp["tau"]))
        k = params.n_classes
        try:
            r = repr(tau_accuracy_correlation(params, per_class_model_accuracy(log, k)))
        except (CorrelationUndefinedError, ValueError):
            r = "NA"
        out.append({"log": name, "policy": log.metadata.get("policy", ""), "regime": log.metadata.get("regime", ""), "pearson": r})
    return out


def cmd_report(args):
    try:
        with open(args.points, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read points file: {exc}") from None
    os.makedirs(args.out, exist_ok=True)
    buckets = bucket_table(rows)
    _write_csv(os.path.join(args.out, "buckets.csv"), list(buckets[0]) if buckets else ["policy"], buckets)
    shift = shift_table(rows)
    shift_header = ["policy", "regime", "value", "n_runs", "cost_mean", "pre_error_mean", "pre_error_se", "post_error_mean", "post_error_se"]
    _write_csv(os.path.join(args.out, "shift.csv"), shift_header, shift)
    n_tau = 0
    if args.logs:
        if not os.path.isdir(args.logs):
            raise ConfigError(f"logs directory {args.logs} does not exist")
        tau = tau_table(args.logs)
        n_tau = len(tau)
        _write_csv(os.path.join(args.out, "tau_correlation.csv"), ["log", "policy", "regime", "pearson"], tau)
    print(f"wrote {len(buckets)} bucket rows, {len(shift)} shift rows, {n_tau} tau rows to {args.out}")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _common(p, out_help):
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--policy", choices=POLICY_KINDS)
    p.add_argument("--regime", choices=["FinExp", "InfExp", "FixedFin", "FixedInf"])
    p.add_argument("--rho", type=float, help="threshold policy accuracy target")
    p.add_argument("--beta", type=float, help="Random policy query probability")
    p.add_argument("--scale", type=float, help="Entropy / Model Picker scale")
    p.add_argument("--seed", type=int)
    p.add_argument("--experts", type=int, help="experts kept per sample")
    p.add_argument("--mc", type=int, help="Monte-Carlo samples for the posterior")
    p.add_argument("--window", type=int, help="MAP window size")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True, help=out_help)


def build_parser():
    parser = argparse.ArgumentParser(prog="online-consensus", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("synth", help="write a synthetic dataset file"), "dataset file to write")
    _common(sub.add_parser("run", help="replay one configuration per seed"), "output directory")
    p = sub.add_parser("sweep", help="replay grid x seeds and emit error-cost points")
    _common(p, "output directory")
    p.add_argument("--workers", type=int)
    p = sub.add_parser("report", help="aggregate a points file into tables")
    p.add_argument("--points", required=True)
    p.add_argument("--logs", help="directory of JSONL logs for tau correlations")
    p.add_argument("--out", required=True)
    return parser


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "sweep": cmd_sweep, "report": cmd_report}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
