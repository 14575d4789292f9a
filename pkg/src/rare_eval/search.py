"""Adversaries that hunt for failure-inducing initial conditions.

Three strategies, all budgeted (an unbudgeted adversary never terminates on a
failure-free agent):

* ``vmc_search`` draws initial conditions from the environment distribution
  until an episode fails.
* ``avf_search`` repeatedly draws ``n`` candidates, runs one episode from the
  candidate the predictor scores highest (ties broken uniformly at random),
  and stops at the first failure.
* ``pr_search`` replays initial conditions that failed historically, ordered
  by ascending noise level then most recent first, re-running each once; if
  none fails it falls back to random search with the remaining budget.

Costs are measured in episodes; candidate scoring is free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .avf import AvfModel
from .envs import (
    AgentParams,
    EnvSpec,
    failure_prob_table,
    index_to_state,
    run_episode_batch,
    sample_initial_conditions,
)
from .rngs import as_generator
from .traces import TrainingTrace

# Candidate-set sizes used in the large-scale experiments.
CANDIDATE_PRESET_SMALL = 1000
CANDIDATE_PRESET_LARGE = 10000

_SEARCH_CHUNK = 4096


@dataclass(frozen=True)
class SearchResult:
    found: bool
    episodes_used: int
    failing_condition: int | None = None
    fallback_used: bool = False


def vmc_search(spec: EnvSpec, theta: AgentParams, budget: int, rng) -> SearchResult:
    """Run episodes from random initial conditions until one fails."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    gen, _ = as_generator(rng)
    used = 0
    while used < budget:
        k = min(_SEARCH_CHUNK, budget - used)
        xs = sample_initial_conditions(spec, k, gen)
        failed, _ = run_episode_batch(spec, xs, theta, gen)
        hits = np.flatnonzero(failed)
        if hits.size:
            first = int(hits[0])
            return SearchResult(True, used + first + 1, int(xs[first]))
        used += k
    return SearchResult(False, budget)


def avf_search(
    spec: EnvSpec,
    theta: AgentParams,
    model: AvfModel,
    n: int,
    budget: int,
    rng,
) -> SearchResult:
    """Predictor-guided search: argmax of the model over n fresh candidates per episode."""
    if n < 1:
        raise ValueError("candidate count n must be >= 1")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    gen, _ = as_generator(rng)
    scores = model.state_table(spec, theta)
    chunk = max(1, min(_SEARCH_CHUNK, (1 << 22) // n))
    used = 0
    while used < budget:
        k = min(chunk, budget - used)
        cand = gen.integers(0, spec.m, size=(k, n), dtype=np.int64)
        tie_u = gen.random(k)
        selected_idx = _kernels.select_candidates(cand, scores, tie_u)
        xs = np.asarray(index_to_state(spec, selected_idx), dtype=np.int64)
        failed, _ = run_episode_batch(spec, xs, theta, gen)
        hits = np.flatnonzero(failed)
        if hits.size:
            first = int(hits[0])
            return SearchResult(True, used + first + 1, int(xs[first]))
        used += k
    return SearchResult(False, budget)


def pr_search(
    spec: EnvSpec,
    theta: AgentParams,
    trace: TrainingTrace,
    budget: int,
    rng,
    ignore_noise: bool = False,
) -> SearchResult:
    """Replay historical failures (least noise, most recent first), then fall back.

    ``ignore_noise=True`` switches to pure most-recent-first ordering.
    Replayed conditions are re-run; a historical label alone never counts as
    a find.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    gen, _ = as_generator(rng)
    fail_rows = np.flatnonzero(trace.failed)
    if ignore_noise:
        order = fail_rows[np.argsort(-trace.t[fail_rows], kind="stable")]
    else:
        # lexsort: last key is primary
        order = fail_rows[np.lexsort((-trace.t[fail_rows], trace.sigma[fail_rows]))]
    replay = trace.x[order]
    used = 0
    for lo in range(0, replay.shape[0], _SEARCH_CHUNK):
        if used >= budget:
            return SearchResult(False, budget, fallback_used=False)
        block = replay[lo : lo + min(_SEARCH_CHUNK, budget - used)]
        failed, _ = run_episode_batch(spec, block, theta, gen)
        hits = np.flatnonzero(failed)
        if hits.size:
            first = int(hits[0])
            return SearchResult(True, used + first + 1, int(block[first]))
        used += int(block.shape[0])
    if used >= budget:
        return SearchResult(False, budget, fallback_used=False)
    tail = vmc_search(spec, theta, budget - used, gen)
    return SearchResult(
        tail.found, used + tail.episodes_used, tail.failing_condition, fallback_used=True
    )


def expected_search_cost(per_episode_failure_prob: float) -> float:
    """Expected episodes to first failure for a fixed per-episode failure rate."""
    if per_episode_failure_prob < 0.0 or per_episode_failure_prob > 1.0:
        raise ValueError("per-episode failure probability must be in [0, 1]")
    if per_episode_failure_prob == 0.0:
        return math.inf
    return 1.0 / per_episode_failure_prob


def empirical_search_cost(episode_counts) -> tuple[float, float]:
    """Mean episodes over repeated searches, with its standard error."""
    counts = np.asarray(episode_counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("no search repetitions supplied")
    mean = float(counts.mean())
    se = float(counts.std(ddof=1) / math.sqrt(counts.size)) if counts.size > 1 else 0.0
    return mean, se


def avf_per_episode_failure_prob(
    spec: EnvSpec, theta: AgentParams, model: AvfModel, n: int
) -> float:
    """Exact per-episode failure probability of the predictor-guided adversary.

    Candidates are i.i.d. uniform over the support; the adversary runs the
    candidate with the highest score, ties uniform.  Grouping states by score
    gives the probability each group holds the best sampled candidate; within
    a group every member is equally likely by symmetry.
    """
    if n < 1:
        raise ValueError("candidate count n must be >= 1")
    scores = model.state_table(spec, theta)
    truth = failure_prob_table(spec, theta)
    m = spec.m
    order = np.argsort(-scores, kind="stable")
    total = 0.0
    better = 0  # states with strictly higher score than the current group
    i = 0
    while i < m:
        j = i
        while j < m and scores[order[j]] == scores[order[i]]:
            j += 1
        group = order[i:j]
        p_no_better = ((m - better) / m) ** n
        p_no_better_or_group = ((m - better - group.size) / m) ** n
        total += (p_no_better - p_no_better_or_group) * truth[group].mean()
        better += group.size
        i = j
    return float(total)
