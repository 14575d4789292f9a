"""Picking the most reliable agent from a finite set of checkpoints.

Each candidate agent gets an equal share of the episode budget; the agent with
the lowest estimated failure probability wins.  Ties (common under plain Monte
Carlo, where many agents never fail) are scored by the expected failure
probability of a uniformly random pick from the tied set, and robustness is
the reciprocal of that mean: the expected number of episodes until a failure
when deploying the selection rule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import AgentParams, EnvSpec
from .estimators import avf_is_estimate, combined_estimate, vmc_estimate
from .oracle import exact_risk
from .rngs import parallel_map, stream


@dataclass(frozen=True)
class SelectionOutcome:
    estimates: tuple
    selected: tuple  # indices attaining the minimum estimate
    expected_failure_prob: float
    robustness: float


def select_best(estimates, true_p) -> SelectionOutcome:
    """Select the agents with minimal estimated risk; score ties by their mean true risk."""
    est = np.asarray(estimates, dtype=np.float64)
    truth = np.asarray(true_p, dtype=np.float64)
    if est.size == 0 or est.shape != truth.shape:
        raise ValueError("estimates and true_p must be non-empty and equally long")
    selected = np.flatnonzero(est == est.min())
    expected = float(truth[selected].mean())
    robustness = float("inf") if expected == 0.0 else 1.0 / expected
    return SelectionOutcome(
        estimates=tuple(float(v) for v in est),
        selected=tuple(int(i) for i in selected),
        expected_failure_prob=expected,
        robustness=robustness,
    )


@dataclass(frozen=True)
class RobustnessPoint:
    budget: int
    mean: float
    min: float
    max: float


def _selection_trial(args):
    (spec, agents, est_cfg, per_agent_budget, seed, budget_idx, trial) = args
    name = est_cfg["name"]
    estimates = []
    for ai, theta in enumerate(agents):
        gen = stream(seed, "select", name, budget_idx, trial, ai)
        if name == "vmc":
            p_hat = vmc_estimate(spec, theta, per_agent_budget, gen).p_hat
        elif name == "avf":
            p_hat = avf_is_estimate(
                spec, theta, est_cfg["model"], est_cfg.get("alpha", 0.5),
                per_agent_budget, gen,
                z_mode=est_cfg.get("z_mode", "exact"),
                sampler=est_cfg.get("sampler", "auto"),
            ).p_hat
        elif name == "combined":
            p_hat = combined_estimate(
                spec, theta, est_cfg["model"], est_cfg.get("alpha", 0.5),
                per_agent_budget, gen,
                k_min=est_cfg.get("k_min", 5),
                z_mode=est_cfg.get("z_mode", "exact"),
                sampler=est_cfg.get("sampler", "auto"),
            ).p_hat
        else:
            raise ValueError(f"unknown estimator {name!r}")
        estimates.append(p_hat)
    return estimates


def selection_experiment(
    spec: EnvSpec,
    agents: list[AgentParams],
    estimator_configs: list[dict],
    budgets,
    trials: int,
    seed: int,
    workers: int = 1,
) -> dict[str, list[RobustnessPoint]]:
    """Robustness of the selected agent per total episode budget, per estimator.

    Budgets are totals, split uniformly across agents.  Returns, for each
    estimator, one point per budget with the mean/min/max robustness over
    trials.
    """
    if len(agents) < 2:
        raise ValueError("need at least two candidate agents")
    budgets = [int(b) for b in budgets]
    if budgets != sorted(budgets):
        raise ValueError("budgets must be ascending")
    true_p = np.array([exact_risk(spec, th) for th in agents])

    results: dict[str, list[RobustnessPoint]] = {}
    for est_cfg in estimator_configs:
        name = est_cfg["name"]
        points = []
        for bi, total in enumerate(budgets):
            per_agent = max(1, total // len(agents))
            tasks = [
                (spec, agents, est_cfg, per_agent, seed, bi, trial)
                for trial in range(trials)
            ]
            trial_estimates = parallel_map(_selection_trial, tasks, workers=workers)
            robustness = [
                select_best(est, true_p).robustness for est in trial_estimates
            ]
            points.append(
                RobustnessPoint(
                    budget=total,
                    mean=float(np.mean(robustness)),
                    min=float(np.min(robustness)),
                    max=float(np.max(robustness)),
                )
            )
        results[name] = points
    return results
