"""Synthetic vote streams and the on-disk dataset format.

Dataset files are UTF-8 text:

* line 1 is a JSON header ``{"format": "online-consensus-votes",
  "version": 1, "K": <classes>, "N": <experts>}``;
* line 2 is the CSV column row ``id,p0,...,p{K-1},v0,...,v{N-1}``;
* every further line is one sample: an id, ``K`` classifier probabilities
  written with Python's shortest round-trip float repr, and ``N`` expert
  votes as class indices in ``[0, K)``.
"""

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .distributions import dirichlet_sample
from .exceptions import DatasetError
from .prior import alpha_from

FORMAT_NAME = "online-consensus-votes"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class StreamSample:
    """One stream element: classifier output plus the hidden expert votes."""

    id: str
    f: np.ndarray
    vote_pool: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", np.asarray(self.f, dtype=float))
        object.__setattr__(self, "vote_pool", np.asarray(self.vote_pool, dtype=np.int64))

    def histogram(self, k=None):
        k = self.f.size if k is None else k
        return np.bincount(self.vote_pool, minlength=k)

    def __eq__(self, other):
        if not isinstance(other, StreamSample):
            return NotImplemented
        return (
            self.id == other.id
            and np.array_equal(self.f, other.f)
            and np.array_equal(self.vote_pool, other.vote_pool)
        )

    __hash__ = object.__hash__


@dataclass
class SyntheticConfig:
    """Parameters of the synthetic stream generator.

    Each sample has a latent class ``z``. Experts vote independently from
    shares ``pi ~ Dirichlet(kappa * onehot(z) + base)``. The classifier
    picks a class ``c`` from row ``z`` of ``confusion``, forms
    ``p = softmax(sharpness * (onehot(c) + noise * U(0, 1)))`` and emits
    ``f_k`` proportional to ``p_k ** (1 / temperatures_k)``. Unequal
    per-class temperatures make the classifier miscalibrated and pull its
    argmax toward high-temperature classes.
    """

    k: int = 3
    n_experts: int = 3
    n_samples: int = 1000
    class_prior: np.ndarray = None
    kappa: float = 5.0
    base: float = 0.5
    confusion: np.ndarray = None
    temperatures: np.ndarray = None
    sharpness: float = 3.0
    noise: float = 0.9
    seed: int = 0

    def __post_init__(self):
        k = self.k
        if k < 2:
            raise ValueError("need at least two classes")
        self.class_prior = np.full(k, 1.0 / k) if self.class_prior is None else np.asarray(self.class_prior, float)
        self.confusion = np.eye(k) if self.confusion is None else np.asarray(self.confusion, float)
        self.temperatures = np.ones(k) if self.temperatures is None else np.asarray(self.temperatures, float)
        if self.confusion.shape != (k, k) or not np.allclose(self.confusion.sum(axis=1), 1.0):
            raise ValueError("confusion must be a row-stochastic K x K matrix")
        if np.any(self.temperatures <= 0) or self.kappa <= 0 or self.base <= 0:
            raise ValueError("temperatures, kappa and base must be positive")
        if not 0 <= self.noise < 1:
            raise ValueError("noise must lie in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def diagonal_confusion(accuracies):
    """Confusion matrix with the given diagonal and uniform off-diagonals."""
    acc = np.asarray(accuracies, dtype=float)
    k = acc.size
    out = np.tile(((1.0 - acc) / (k - 1))[:, None], (1, k))
    np.fill_diagonal(out, acc)
    return out


def _categorical(p, rng, n=None):
    """Inverse-CDF categorical draws, one row of ``p`` per output row."""
    cdf = np.cumsum(p, axis=-1)
    cdf[..., -1] = 1.0
    u = rng.random(p.shape[:-1] + ((n,) if n else ()))
    if n:
        return (u[..., None] > cdf[..., None, :]).sum(axis=-1)
    return (u[..., None] > cdf).sum(axis=-1)


def _model_outputs(cfg, z, rng):
    k = cfg.k
    c = _categorical(cfg.confusion[z], rng)
    logits = cfg.sharpness * (np.eye(k)[c] + cfg.noise * rng.random((len(z), k)))
    logp = logits - logsumexp(logits, axis=1, keepdims=True)
    logf = logp / cfg.temperatures
    f = np.exp(logf - logf.max(axis=1, keepdims=True))
    return f / f.sum(axis=1, keepdims=True)


def _ids(n, prefix="s"):
    width = max(5, len(str(n)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def generate_stream(cfg):
    """Draw ``cfg.n_samples`` samples from the synthetic generator."""
    rng = np.random.default_rng(cfg.seed)
    T, k = cfg.n_samples, cfg.k
    z = rng.choice(k, size=T, p=cfg.class_prior)
    pi = dirichlet_sample(cfg.kappa * np.eye(k)[z] + cfg.base, rng)
    votes = _categorical(pi, rng, cfg.n_experts)
    f = _model_outputs(cfg, z, rng)
    return [StreamSample(i, f[t], votes[t]) for t, i in enumerate(_ids(T))]


def generate_prior_stream(cfg, params):
    """Stream whose votes follow the consensus model itself.

    Classifier outputs come from the synthetic generator; votes are drawn
    from ``pi ~ Dirichlet(alpha_from(f, params))``.
    """
    f = np.stack([s.f for s in generate_stream(cfg)])
    rng = np.random.default_rng([cfg.seed, 1])
    pi = dirichlet_sample(alpha_from(f, params), rng)
    votes = _categorical(pi, rng, cfg.n_experts)
    return [StreamSample(i, f[t], votes[t]) for t, i in enumerate(_ids(len(f)))]


def make_shift_stream(clean, noisy, seed):
    """Shuffled ``clean`` samples followed by shuffled ``noisy`` samples."""
    if not clean or not noisy:
        raise ValueError("both halves must be non-empty")
    rng = np.random.default_rng(seed)
    first = [clean[i] for i in rng.permutation(len(clean))]
    second = [noisy[i] for i in rng.permutation(len(noisy))]
    return first + second


def shuffle_stream(samples, seed):
    rng = np.random.default_rng(seed)
    return [samples[i] for i in rng.permutation(len(samples))]


def subsample_experts(samples, n_sub, seed):
    """Keep the same ``n_sub`` expert columns for every sample.

    Columns are chosen uniformly without replacement; each sample's kept
    votes are then shuffled.
    """
    n = len(samples[0].vote_pool)
    if not 1 <= n_sub <= n:
        raise ValueError(f"cannot keep {n_sub} of {n} experts")
    rng = np.random.default_rng(seed)
    cols = rng.choice(n, size=n_sub, replace=False)
    return [StreamSample(s.id, s.f, rng.permutation(s.vote_pool[cols])) for s in samples]


# --------------------------------------------------------------------------
# file format


def format_dataset(samples, k, n):
    buf = io.StringIO()
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "K": int(k), "N": int(n)}
    buf.write(json.dumps(header, sort_keys=True) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id"] + [f"p{i}" for i in range(k)] + [f"v{j}" for j in range(n)])
    for s in samples:
        writer.writerow([s.id] + [repr(float(p)) for p in s.f] + [str(int(v)) for v in s.vote_pool])
    return buf.getvalue()


def write_dataset(path, samples, k=None, n=None):
    k = samples[0].f.size if k is None else k
    n = len(samples[0].vote_pool) if n is None else n
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_dataset(samples, k, n))


def load_dataset(path, shuffle_seed=None):
    """Read a dataset file; returns ``(samples, K, N)``.

    With ``shuffle_seed`` set each sample's vote order is shuffled.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetError("empty file", line=1)
    try:
        header = json.loads(lines[0])
        k, n = int(header["K"]), int(header["N"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"bad JSON header: {exc}", line=1) from None
    if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
        raise DatasetError("unsupported format or version", line=1)
    if k < 2 or n < 1:
        raise DatasetError("need K >= 2 and N >= 1", line=1)
    expected = ["id"] + [f"p{i}" for i in range(k)] + [f"v{j}" for j in range(n)]
    rows = list(csv.reader(lines[1:]))
    if not rows or rows[0] != expected:
        raise DatasetError("column row does not match the header", line=2)
    rng = None if shuffle_seed is None else np.random.default_rng(shuffle_seed)
    samples = []
    for lineno, row in enumerate(rows[1:], start=3):
        if not row:
            continue
        if len(row) != 1 + k + n:
            raise DatasetError(f"expected {1 + k + n} fields, got {len(row)}", line=lineno)
        try:
            f = np.array([float(x) for x in row[1 : 1 + k]])
            votes = np.array([int(x) for x in row[1 + k :]], dtype=np.int64)
        except ValueError as exc:
            raise DatasetError(str(exc), line=lineno) from None
        if np.any(f < 0) or abs(f.sum() - 1.0) > 1e-6:
            raise DatasetError("probabilities must be non-negative and sum to 1", line=lineno)
        if np.any(votes < 0) or np.any(votes >= k):
            raise DatasetError(f"votes must lie in [0, {k})", line=lineno)
        if rng is not None:
            votes = rng.permutation(votes)
        samples.append(StreamSample(row[0], f, votes))
    return samples, k, n
