"""Exact ground truth for the estimators: true risk, optimal proposal, variance.

Everything here is computed by exact summation over the (discrete) initial
condition space; nothing is simulated.  The test suite leans on these values
to check the sampling-based estimators without circularity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .envs import AgentParams, EnvSpec, failure_prob_table, initial_distribution, support

_NORMALIZATION_TOL = 1e-12


@dataclass(frozen=True)
class DiscreteProposal:
    """A sampling density over the environment's initial conditions."""

    density: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.density, dtype=np.float64)
        object.__setattr__(self, "density", q)
        if q.ndim != 1 or q.size == 0:
            raise ValueError("proposal density must be a non-empty 1-d array")
        if (q < 0).any():
            raise ValueError("proposal density must be non-negative")
        if abs(math.fsum(q.tolist()) - 1.0) > _NORMALIZATION_TOL:
            raise ValueError("proposal density must sum to 1 within 1e-12")


def exact_risk(spec: EnvSpec, theta: AgentParams) -> float:
    """True failure probability of the agent under the start distribution."""
    p_x = initial_distribution(spec)
    table = failure_prob_table(spec, theta)
    return math.fsum((p_x * table).tolist())


def proposal_from_weights(weights: np.ndarray) -> DiscreteProposal:
    """Normalize non-negative weights into a proposal (exact summation)."""
    w = np.asarray(weights, dtype=np.float64)
    total = math.fsum(w.tolist())
    if total <= 0.0:
        raise ValueError("cannot normalize an all-zero weight vector into a proposal")
    q = w / total
    # fsum-based renormalization keeps the invariant within 1e-12
    q = q / math.fsum(q.tolist())
    return DiscreteProposal(q)


def exact_optimal_proposal(spec: EnvSpec, theta: AgentParams) -> DiscreteProposal:
    """Variance-minimizing proposal: density proportional to sqrt(f) * p_x."""
    p_x = initial_distribution(spec)
    table = failure_prob_table(spec, theta)
    weights = np.sqrt(table) * p_x
    if math.fsum(weights.tolist()) <= 0.0:
        raise ValueError("failure probability is identically zero; no proposal exists")
    return proposal_from_weights(weights)


def exact_is_variance(spec: EnvSpec, theta: AgentParams, proposal: DiscreteProposal) -> float:
    """Exact per-sample variance of the weighted failure indicator under ``proposal``.

    The summand is ``U = (p_x(X)/q(X)) * C`` with ``X ~ q``; its variance is
    ``sum_x p_x(x)^2 f(x) / q(x) - p^2``.  Raises when the proposal assigns
    zero mass to a state that contributes to the risk.
    """
    p_x = initial_distribution(spec)
    table = failure_prob_table(spec, theta)
    q = proposal.density
    if q.shape[0] != spec.m:
        raise ValueError(f"proposal has {q.shape[0]} states, environment has {spec.m}")
    states = support(spec)
    terms = []
    for i in range(spec.m):
        mass = p_x[i] * table[i]
        if mass == 0.0:
            continue
        if q[i] == 0.0:
            raise ValueError(
                f"proposal is zero at initial condition {states[i]} "
                f"which has failure mass {mass}"
            )
        terms.append(p_x[i] * mass / q[i])
    p = exact_risk(spec, theta)
    return math.fsum(terms) - p * p
