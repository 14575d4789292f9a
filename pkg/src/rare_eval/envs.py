"""Synthetic evaluation environments with exactly computable failure probabilities.

Two environment families share one interface: a discrete set of initial
conditions with a uniform start distribution, an episode runner returning a
binary catastrophic-failure flag, and a closed-form (or dynamic-programming)
ground-truth failure probability used only by oracles and tests.

``AnalyticBernoulli``
    States ``x in {0..M-1}``.  An episode fails with probability
    ``min(1, s * gamma**x * (exp(-beta*u) + c_noise*sigma))``: failures decay
    geometrically with the state index and exponentially with agent
    training progress ``u``.  Away from the clamp this factorizes exactly
    into a state term times an agent term.

``CliffWalk``
    States ``x in {1..M}``.  Each step moves down with probability
    ``q_min + (q_max - q_min) * exp(-beta*u)``, else up (reflecting at M);
    the episode fails if position 0 is reached within ``H`` steps.

Environment randomness is internal: callers provide a random stream per call
and never observe the underlying draws.  Specs are immutable and safe to
share across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels

SIGMA_MAX = 0.4

# Episodes are simulated in bounded chunks so uniform buffers stay small.
_EPISODE_CHUNK = 1 << 16


@dataclass(frozen=True)
class AgentParams:
    """One member of the agent family: training progress and exploration noise."""

    u: float
    sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.u <= 1.0:
            raise ValueError(f"u must be in [0, 1], got {self.u}")
        if not 0.0 <= self.sigma <= SIGMA_MAX:
            raise ValueError(f"sigma must be in [0, {SIGMA_MAX}], got {self.sigma}")


@dataclass(frozen=True)
class AnalyticBernoulli:
    m: int = 16
    s: float = 1.0
    gamma: float = 0.5
    beta: float = 8.0
    c_noise: float = 0.5

    kind = "analytic_bernoulli"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("support size m must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if self.s <= 0.0:
            raise ValueError("s must be positive")
        if self.c_noise < 0.0:
            raise ValueError("c_noise must be non-negative")


@dataclass(frozen=True)
class CliffWalk:
    m: int = 12
    horizon: int = 64
    q_min: float = 0.05
    q_max: float = 0.45
    beta: float = 8.0

    kind = "cliff_walk"

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("support size m must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not 0.0 <= self.q_min <= self.q_max <= 1.0:
            raise ValueError("need 0 <= q_min <= q_max <= 1")


EnvSpec = AnalyticBernoulli | CliffWalk


@dataclass(frozen=True)
class EpisodeOutcome:
    failed: int
    steps: int | None = None


def support(spec: EnvSpec) -> np.ndarray:
    """All initial conditions, in index order."""
    if spec.kind == "analytic_bernoulli":
        return np.arange(spec.m, dtype=np.int64)
    return np.arange(1, spec.m + 1, dtype=np.int64)


def state_to_index(spec: EnvSpec, x: int) -> int:
    idx = int(x) if spec.kind == "analytic_bernoulli" else int(x) - 1
    if not 0 <= idx < spec.m:
        raise ValueError(f"initial condition {x} outside the support of {spec.kind}")
    return idx


def index_to_state(spec: EnvSpec, idx):
    return idx if spec.kind == "analytic_bernoulli" else idx + 1


def initial_distribution(spec: EnvSpec) -> np.ndarray:
    """Density of the start distribution over the support (uniform)."""
    return np.full(spec.m, 1.0 / spec.m)


def down_move_prob(spec: CliffWalk, theta: AgentParams) -> float:
    return spec.q_min + (spec.q_max - spec.q_min) * math.exp(-spec.beta * theta.u)


def _walk_absorption_table(m: int, horizon: int, q: float) -> np.ndarray:
    # Dynamic program over (position, steps remaining); position 0 is absorbing,
    # position m reflects.  Returns P(reach 0 within `horizon`) for positions 0..m.
    prev = np.zeros(m + 1)
    prev[0] = 1.0
    cur = np.zeros(m + 1)
    for _ in range(horizon):
        cur[0] = 1.0
        cur[1:m] = q * prev[0 : m - 1] + (1.0 - q) * prev[2 : m + 1]
        cur[m] = q * prev[m - 1] + (1.0 - q) * prev[m]
        prev, cur = cur, prev  # cur is fully overwritten next pass
    return prev


def failure_prob_table(spec: EnvSpec, theta: AgentParams) -> np.ndarray:
    """Exact failure probability for every initial condition, in index order."""
    if spec.kind == "analytic_bernoulli":
        agent_term = math.exp(-spec.beta * theta.u) + spec.c_noise * theta.sigma
        table = spec.s * spec.gamma ** np.arange(spec.m, dtype=np.float64) * agent_term
        return np.minimum(table, 1.0)
    q = down_move_prob(spec, theta)
    return _walk_absorption_table(spec.m, spec.horizon, q)[1:]


def true_failure_prob(spec: EnvSpec, x: int, theta: AgentParams) -> float:
    """Ground-truth per-episode failure probability from initial condition x."""
    return float(failure_prob_table(spec, theta)[state_to_index(spec, x)])


def sample_initial_conditions(spec: EnvSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    lo = 0 if spec.kind == "analytic_bernoulli" else 1
    return rng.integers(lo, lo + spec.m, size=n, dtype=np.int64)


def sample_initial_condition(spec: EnvSpec, rng: np.random.Generator) -> int:
    return int(sample_initial_conditions(spec, 1, rng)[0])


def run_episode_indices(
    spec: EnvSpec,
    state_idx: np.ndarray,
    theta: AgentParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Run one episode per entry of ``state_idx`` (index form). Hot path.

    Returns ``(failed, steps)``; ``steps`` is None for AnalyticBernoulli.
    """
    n = state_idx.shape[0]
    if spec.kind == "analytic_bernoulli":
        table = failure_prob_table(spec, theta)
        failed = np.empty(n, dtype=np.uint8)
        for lo in range(0, n, _EPISODE_CHUNK):
            hi = min(lo + _EPISODE_CHUNK, n)
            failed[lo:hi] = _kernels.bernoulli_episodes(
                state_idx[lo:hi], rng.random(hi - lo), table
            )
        return failed, None
    q = down_move_prob(spec, theta)
    failed = np.empty(n, dtype=np.uint8)
    steps = np.empty(n, dtype=np.int64)
    chunk = max(1, _EPISODE_CHUNK // max(1, spec.horizon // 8))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        uniforms = rng.random((hi - lo, spec.horizon))
        failed[lo:hi], steps[lo:hi] = _kernels.walk_episodes(
            state_idx[lo:hi] + 1, np.full(hi - lo, q), spec.horizon, spec.m, uniforms
        )
    return failed, steps


def run_episode_batch(
    spec: EnvSpec,
    xs: np.ndarray,
    theta: AgentParams,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Like :func:`run_episode_indices` but takes raw initial-condition values."""
    xs = np.asarray(xs, dtype=np.int64)
    offset = 0 if spec.kind == "analytic_bernoulli" else 1
    idx = xs - offset
    if idx.size and (idx.min() < 0 or idx.max() >= spec.m):
        bad = xs[(idx < 0) | (idx >= spec.m)][0]
        raise ValueError(f"initial condition {bad} outside the support of {spec.kind}")
    return run_episode_indices(spec, idx, theta, rng)


def run_episode(spec: EnvSpec, x: int, theta: AgentParams, rng: np.random.Generator) -> EpisodeOutcome:
    """Run a single episode from initial condition ``x``."""
    idx = state_to_index(spec, x)
    failed, steps = run_episode_indices(spec, np.array([idx], dtype=np.int64), theta, rng)
    return EpisodeOutcome(
        failed=int(failed[0]), steps=None if steps is None else int(steps[0])
    )
