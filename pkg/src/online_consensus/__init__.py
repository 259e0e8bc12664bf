"""Bayesian online prediction of expert consensus under a querying budget."""

from .datagen import (
    StreamSample,
    SyntheticConfig,
    generate_prior_stream,
    generate_stream,
    load_dataset,
    make_shift_stream,
    subsample_experts,
    write_dataset,
)
from .harness import EpisodeLog, RunConfig, metrics, run_sequence, run_two_phase
from .inference import (
    ConsensusPosterior,
    consensus_posterior_exact_finexp,
    consensus_posterior_finexp,
    consensus_posterior_infexp,
)
from .likelihood import ObservationRecord, OptimizerConfig, WindowDataset, map_loss, optimize_map
from .policies import (
    EntropyPolicy,
    ModelPickerPolicy,
    RandomPolicy,
    ThresholdPolicy,
    make_policy,
)
from .prior import HyperPriorConfig, PriorParams, Regime, alpha_from, prior_mode

__version__ = "0.1.0"
