"""Adversarial evaluation toolkit for agents whose failures are rare and severe.

Find failure-inducing initial conditions and estimate tiny failure
probabilities orders of magnitude faster than plain Monte Carlo, using a
learned failure-probability predictor to steer both search and an unbiased
importance-sampling estimator.  Ships with synthetic environments whose
ground truth is exactly computable, so every statistical claim is checkable.
"""

__version__ = "0.1.0"

from .avf import (
    AvfModel,
    AvfTrainConfig,
    DndAvf,
    ParametricAvf,
    TableAvf,
    TabularAvf,
    dnd_score,
    evaluate_avf,
    exact_failure_model,
    load_model,
    predict,
    save_model,
    train_avf,
)
from .envs import (
    SIGMA_MAX,
    AgentParams,
    AnalyticBernoulli,
    CliffWalk,
    EpisodeOutcome,
    failure_prob_table,
    run_episode,
    sample_initial_condition,
    true_failure_prob,
)
from .estimators import (
    EstimateReport,
    ReliabilityCurve,
    avf_is_estimate,
    combined_estimate,
    hoeffding_sample_size,
    miss_probability,
    reliability_curve,
    reliability_curves,
    vmc_estimate,
)
from .oracle import DiscreteProposal, exact_is_variance, exact_optimal_proposal, exact_risk
from .search import (
    SearchResult,
    avf_per_episode_failure_prob,
    avf_search,
    empirical_search_cost,
    expected_search_cost,
    pr_search,
    vmc_search,
)
from .selection import SelectionOutcome, select_best, selection_experiment
from .traces import (
    EpisodeRecord,
    TrainingTrace,
    filter_trace,
    load_trace_jsonl,
    save_trace_jsonl,
    simulate_training_run,
)
